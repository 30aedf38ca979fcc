"""Backend benchmark: numba kernels against the pure-NumPy fallback.

    python -m coroplaq.benchmark [--size 64] [--repeat 3]

Runs each hot kernel on identical inputs through both implementations,
reports wall times and the largest result deviation.  The first numba
call includes JIT compilation, so every kernel is warmed once before
timing.  Deviations at the 1e-9 relative level are expected: LLVM may
contract multiply-add chains differently from NumPy's evaluation order.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ._kernels import numpy_impl

try:
    from ._kernels import numba_impl
except ImportError:
    numba_impl = None


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _max_rel_dev(a, b) -> float:
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    # unreached dijkstra nodes carry inf; they must match exactly
    fin_a, fin_b = np.isfinite(a), np.isfinite(b)
    if not np.array_equal(fin_a, fin_b) or not np.array_equal(
        a[~fin_a], b[~fin_b]
    ):
        return float("inf")
    a, b = a[fin_a], b[fin_b]
    if a.size == 0:
        return 0.0
    scale = max(1e-30, float(np.abs(a).max()), float(np.abs(b).max()))
    return float(np.abs(a - b).max()) / scale


def _cases(size: int):
    rng = np.random.default_rng(0)
    vol = rng.normal(0.0, 100.0, (size, size, size)).astype(np.float32)
    sm = np.asarray(
        np.cumsum(np.cumsum(np.cumsum(vol, 0), 1), 2), np.float32
    ) / float(size)
    pts = rng.uniform(0, size - 1, (200_000, 3))
    ves = rng.uniform(0.01, 1.0, (24, 24, 24)).astype(np.float32)
    unary = rng.uniform(0.0, 4.0, (36, 64))

    frob2, _fmax = numpy_impl.frob2_field(sm, 1.0, 1.0, 1.0)

    def case_trilinear(impl):
        return impl.trilinear_many(vol, pts[:, 0], pts[:, 1], pts[:, 2])

    def case_frob2(impl):
        return impl.frob2_field(sm, 1.0, 1.0, 1.0)[0]

    def case_frangi(impl):
        return impl.frangi_from_frob2(
            sm, frob2, 1.0, 1.0, 1.0, 0.5, 0.5, 100.0, 1e-4
        )

    def case_dijkstra(impl):
        mask = np.ones(ves.shape, np.bool_)
        dist, prev, found = impl.dijkstra_grid(
            ves, 0.4, 0.4, 0.4, mask, 1, 1, 1, 22, 22, 22, 1e-3
        )
        return dist

    def case_mrf(impl):
        return impl.mrf_cycle(unary, 2.0)[0]

    return [
        ("trilinear_many (200k pts)", case_trilinear),
        (f"frob2_field ({size}^3)", case_frob2),
        (f"frangi_from_frob2 ({size}^3)", case_frangi),
        ("dijkstra_grid (24^3)", case_dijkstra),
        ("mrf_cycle (36 rays x 64)", case_mrf),
    ]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m coroplaq.benchmark")
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if numba_impl is None:
        print("numba backend unavailable; nothing to compare")
        return 1

    print(f"{'kernel':34} {'numba':>10} {'numpy':>10} {'speedup':>8} {'max rel dev':>12}")
    for name, case in _cases(args.size):
        out_nb = case(numba_impl)  # warm: includes JIT on first call
        out_np = case(numpy_impl)
        t_nb = _time(lambda: case(numba_impl), args.repeat)
        t_np = _time(lambda: case(numpy_impl), args.repeat)
        dev = _max_rel_dev(out_nb, out_np)
        print(
            f"{name:34} {t_nb * 1e3:9.1f}ms {t_np * 1e3:9.1f}ms "
            f"{t_np / max(t_nb, 1e-12):7.1f}x {dev:12.3e}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
