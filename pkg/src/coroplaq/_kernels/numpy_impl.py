"""Pure NumPy implementations of the numeric kernels.

Every function here has a numba twin in ``numba_impl.py`` with identical
semantics and, where no transcendental functions are involved, bit-identical
results.  The two files must be kept in lockstep; the equivalence tests
import both directly and compare them.

Conventions shared by both backends:
  * volumes are C-contiguous float32 arrays indexed [i, j, k] = [x, y, z]
  * continuous coordinates are in voxel index units and get clamped to the
    grid (nearest-cell extrapolation); domain policy belongs to the caller
  * interpolation uses lerp(a, b, t) = a*(1-t) + b*t so samples at integer
    coordinates reproduce voxel values exactly
"""

import heapq
import math

import numpy as np

# Fixed enumeration order of the 26-neighborhood; both backends and the
# shortest-path test oracle rely on this exact order.
NEIGHBOR_OFFSETS = np.array(
    [
        (di, dj, dk)
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
        for dk in (-1, 0, 1)
        if (di, dj, dk) != (0, 0, 0)
    ],
    dtype=np.int64,
)

TWO_PI_3 = 2.0943951023931953  # 2*pi/3, same literal in both backends


def trilinear_many(data, ix, iy, iz):
    """Trilinear samples of ``data`` at continuous voxel coordinates.

    Parameters
    ----------
    data : (nx, ny, nz) float32 ndarray
    ix, iy, iz : 1D float64 ndarrays of equal length

    Returns
    -------
    1D float64 ndarray of interpolated values.
    """
    nx, ny, nz = data.shape
    fx = np.clip(ix, 0.0, nx - 1.0)
    fy = np.clip(iy, 0.0, ny - 1.0)
    fz = np.clip(iz, 0.0, nz - 1.0)
    i0 = np.clip(fx.astype(np.int64), 0, max(nx - 2, 0))
    j0 = np.clip(fy.astype(np.int64), 0, max(ny - 2, 0))
    k0 = np.clip(fz.astype(np.int64), 0, max(nz - 2, 0))
    i1 = np.minimum(i0 + 1, nx - 1)
    j1 = np.minimum(j0 + 1, ny - 1)
    k1 = np.minimum(k0 + 1, nz - 1)
    tx = fx - i0
    ty = fy - j0
    tz = fz - k0

    d000 = data[i0, j0, k0].astype(np.float64)
    d001 = data[i0, j0, k1].astype(np.float64)
    d010 = data[i0, j1, k0].astype(np.float64)
    d011 = data[i0, j1, k1].astype(np.float64)
    d100 = data[i1, j0, k0].astype(np.float64)
    d101 = data[i1, j0, k1].astype(np.float64)
    d110 = data[i1, j1, k0].astype(np.float64)
    d111 = data[i1, j1, k1].astype(np.float64)

    c00 = d000 * (1.0 - tz) + d001 * tz
    c01 = d010 * (1.0 - tz) + d011 * tz
    c10 = d100 * (1.0 - tz) + d101 * tz
    c11 = d110 * (1.0 - tz) + d111 * tz
    c0 = c00 * (1.0 - ty) + c01 * ty
    c1 = c10 * (1.0 - ty) + c11 * ty
    return c0 * (1.0 - tx) + c1 * tx


def _hessian_slab(sm, ks, sx, sy, sz):
    """Central-difference Hessian components on interior voxels, z-slab ks."""
    c = sm[1:-1, 1:-1, ks].astype(np.float64)
    xp = sm[2:, 1:-1, ks].astype(np.float64)
    xm = sm[:-2, 1:-1, ks].astype(np.float64)
    yp = sm[1:-1, 2:, ks].astype(np.float64)
    ym = sm[1:-1, :-2, ks].astype(np.float64)
    ksp = slice(ks.start + 1, ks.stop + 1)
    ksm = slice(ks.start - 1, ks.stop - 1)
    zp = sm[1:-1, 1:-1, ksp].astype(np.float64)
    zm = sm[1:-1, 1:-1, ksm].astype(np.float64)

    hxx = (xp - 2.0 * c + xm) / (sx * sx)
    hyy = (yp - 2.0 * c + ym) / (sy * sy)
    hzz = (zp - 2.0 * c + zm) / (sz * sz)
    hxy = (
        sm[2:, 2:, ks].astype(np.float64)
        - sm[2:, :-2, ks].astype(np.float64)
        - sm[:-2, 2:, ks].astype(np.float64)
        + sm[:-2, :-2, ks].astype(np.float64)
    ) / (4.0 * sx * sy)
    hxz = (
        sm[2:, 1:-1, ksp].astype(np.float64)
        - sm[2:, 1:-1, ksm].astype(np.float64)
        - sm[:-2, 1:-1, ksp].astype(np.float64)
        + sm[:-2, 1:-1, ksm].astype(np.float64)
    ) / (4.0 * sx * sz)
    hyz = (
        sm[1:-1, 2:, ksp].astype(np.float64)
        - sm[1:-1, 2:, ksm].astype(np.float64)
        - sm[1:-1, :-2, ksp].astype(np.float64)
        + sm[1:-1, :-2, ksm].astype(np.float64)
    ) / (4.0 * sy * sz)
    return hxx, hyy, hzz, hxy, hxz, hyz


def _frob2(hxx, hyy, hzz, hxy, hxz, hyz):
    return (
        hxx * hxx
        + hyy * hyy
        + hzz * hzz
        + 2.0 * (hxy * hxy + hxz * hxz + hyz * hyz)
    )


_SLAB = 8  # z-slab thickness; bounds float64 temporaries to a few MB


def frob2_field(sm, sx, sy, sz):
    """Squared Hessian Frobenius norm per interior voxel, plus its max.

    Returns (float32 volume with zero borders, float max).  The field is
    reused by frangi_from_frob2 both for the skip test and as the S^2
    structure term, so most voxels never need the eigen decomposition.
    """
    nx, ny, nz = sm.shape
    out = np.zeros((nx, ny, nz), np.float32)
    best = 0.0
    if nx < 3 or ny < 3 or nz < 3:
        return out, best
    for z0 in range(1, nz - 1, _SLAB):
        ks = slice(z0, min(z0 + _SLAB, nz - 1))
        f2 = _frob2(*_hessian_slab(sm, ks, sx, sy, sz))
        out[1:-1, 1:-1, ks] = f2.astype(np.float32)
        m = float(f2.max())
        if m > best:
            best = m
    return out, best


def _eigvals_sym3(hxx, hyy, hzz, hxy, hxz, hyz):
    """Eigenvalues of symmetric 3x3 matrices, sorted by (|v|, v) ascending."""
    q = (hxx + hyy + hzz) / 3.0
    a = hxx - q
    b = hyy - q
    cc = hzz - q
    p2 = a * a + b * b + cc * cc + 2.0 * (hxy * hxy + hxz * hxz + hyz * hyz)
    p = np.sqrt(p2 / 6.0)
    safe = p > 0.0
    pinv = np.where(safe, 1.0 / np.where(safe, p, 1.0), 0.0)
    b11 = a * pinv
    b22 = b * pinv
    b33 = cc * pinv
    b12 = hxy * pinv
    b13 = hxz * pinv
    b23 = hyz * pinv
    detb = (
        b11 * (b22 * b33 - b23 * b23)
        - b12 * (b12 * b33 - b23 * b13)
        + b13 * (b12 * b23 - b22 * b13)
    )
    r = np.clip(detb / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + TWO_PI_3)
    e2 = 3.0 * q - e1 - e3
    e1 = np.where(safe, e1, q)
    e2 = np.where(safe, e2, q)
    e3 = np.where(safe, e3, q)

    # three compare-swaps by (|v|, v); identical network in the numba twin
    def cswap(x, y):
        swap = (np.abs(y) < np.abs(x)) | ((np.abs(y) == np.abs(x)) & (y < x))
        return np.where(swap, y, x), np.where(swap, x, y)

    e1, e2 = cswap(e1, e2)
    e2, e3 = cswap(e2, e3)
    e1, e2 = cswap(e1, e2)
    return e1, e2, e3


def frangi_from_frob2(sm, frob2, sx, sy, sz, alpha, beta, c, skip2):
    """Tubular (bright on dark) Hessian response at one smoothing scale.

    ``frob2`` is the precomputed field from frob2_field; voxels where it
    is at or below ``skip2`` are defined to respond 0.  The threshold is
    part of the algorithm so both backends agree on skipped voxels, and
    the stored float32 value doubles as the S^2 structure term.
    """
    nx, ny, nz = sm.shape
    out = np.zeros((nx, ny, nz), np.float32)
    if nx < 3 or ny < 3 or nz < 3 or c <= 0.0:
        return out
    inv2a2 = 1.0 / (2.0 * alpha * alpha)
    inv2b2 = 1.0 / (2.0 * beta * beta)
    inv2c2 = 1.0 / (2.0 * c * c)
    for z0 in range(1, nz - 1, _SLAB):
        ks = slice(z0, min(z0 + _SLAB, nz - 1))
        f2s = frob2[1:-1, 1:-1, ks].astype(np.float64)
        m = f2s > skip2
        if not m.any():
            continue
        hxx, hyy, hzz, hxy, hxz, hyz = _hessian_slab(sm, ks, sx, sy, sz)
        l1, l2, l3 = _eigvals_sym3(
            hxx[m], hyy[m], hzz[m], hxy[m], hxz[m], hyz[m]
        )
        tube = (l2 < 0.0) & (l3 < 0.0)
        l3sq = l3 * l3
        l3sq = np.where(l3sq > 0.0, l3sq, 1.0)
        ra2 = (l2 * l2) / l3sq
        l23 = np.abs(l2 * l3)
        l23 = np.where(l23 > 0.0, l23, 1.0)
        rb2 = (l1 * l1) / l23
        resp = (
            (1.0 - np.exp(-ra2 * inv2a2))
            * np.exp(-rb2 * inv2b2)
            * (1.0 - np.exp(-f2s[m] * inv2c2))
        )
        vals = np.where(tube, resp, 0.0).astype(np.float32)
        sub = out[1:-1, 1:-1, ks]
        sub[m] = vals
    return out


def dijkstra_grid(ves, sx, sy, sz, mask, si, sj, sk, gi, gj, gk, eps):
    """Shortest path on the 26-connected voxel grid.

    Edge weight u->v is step_length / (0.5*(ves[u]+ves[v]) + eps); the
    symmetric mean keeps the graph undirected.  Search stops as soon as
    the goal is settled, so ``dist`` is only final for settled voxels.

    Returns (dist flat float64, prev flat int64, found bool).
    """
    nx, ny, nz = ves.shape
    n_total = nx * ny * nz
    dist = np.full(n_total, np.inf)
    prev = np.full(n_total, -1, np.int64)
    popped = np.zeros(n_total, np.bool_)

    offs = [(int(a), int(b), int(c)) for a, b, c in NEIGHBOR_OFFSETS]
    steps = [
        math.sqrt((a * sx) * (a * sx) + (b * sy) * (b * sy) + (c * sz) * (c * sz))
        for a, b, c in offs
    ]

    start = (si * ny + sj) * nz + sk
    goal = (gi * ny + gj) * nz + gk
    dist[start] = 0.0
    heap = [(0.0, start)]
    found = False
    while heap:
        d, u = heapq.heappop(heap)
        if popped[u]:
            continue
        popped[u] = True
        if u == goal:
            found = True
            break
        k = u % nz
        j = (u // nz) % ny
        i = u // (nz * ny)
        vu = float(ves[i, j, k])
        for o in range(26):
            oi, oj, ok = offs[o]
            ni = i + oi
            nj = j + oj
            nk = k + ok
            if ni < 0 or ni >= nx or nj < 0 or nj >= ny or nk < 0 or nk >= nz:
                continue
            if not mask[ni, nj, nk]:
                continue
            v = (ni * ny + nj) * nz + nk
            if popped[v]:
                continue
            vv = float(ves[ni, nj, nk])
            nd = d + steps[o] / (0.5 * (vu + vv) + eps)
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, prev, found


def _dt_quadratic(f, lam):
    """min over q of f[q] + lam*(p - q)^2 for every integer p, O(m^2) form."""
    m = f.shape[0]
    if lam == 0.0:
        return np.full(m, f.min())
    ls = np.arange(m, dtype=np.float64)
    d = ls[:, None] - ls[None, :]
    return (f[None, :] + lam * (d * d)).min(axis=1)


def mrf_cycle(unary, lam):
    """Exact MAP labels of a cyclic chain with quadratic pairwise costs.

    Energy: sum_i unary[i, l_i] + lam * sum_i (l_i - l_{i+1 mod n})^2.
    Solved by conditioning on the label of ray 0 and running exact chain
    DP for each condition.  Ties prefer the lexicographically smallest
    label vector (smaller label at the smallest differing ray index).

    Returns (labels int64 (n,), energy float64 recomputed from labels).
    """
    unary = np.asarray(unary, np.float64)
    n, m = unary.shape
    labels = np.zeros(n, np.int64)
    if n == 1:
        labels[0] = int(np.argmin(unary[0]))
        return labels, float(unary[0, labels[0]])

    ls = np.arange(m, dtype=np.float64)
    best_e = np.inf
    best_k0 = 0
    for k0 in range(m):
        e = _cycle_min_given_k0(unary, lam, k0, ls)
        if e < best_e:
            best_e = e
            best_k0 = k0

    # rebuild backward messages for the winning condition, then greedy
    # forward reconstruction; np.argmin picks the smallest tied label
    bmsg = _backward_messages(unary, lam, best_k0, ls)
    labels[0] = best_k0
    for i in range(1, n):
        d = ls - float(labels[i - 1])
        labels[i] = int(np.argmin(lam * (d * d) + bmsg[i]))

    energy = 0.0
    for i in range(n):
        energy += unary[i, labels[i]]
    for i in range(n):
        dlab = float(labels[i] - labels[(i + 1) % n])
        energy += lam * (dlab * dlab)
    return labels, energy


def _backward_messages(unary, lam, k0, ls):
    """bmsg[i, l] = min cost of rays i..n-1 with ray i labeled l, given
    ray 0 labeled k0 (includes the closing edge (n-1, 0))."""
    n, m = unary.shape
    bmsg = np.empty((n, m), np.float64)
    d = ls - float(k0)
    bmsg[n - 1] = unary[n - 1] + lam * (d * d)
    for i in range(n - 2, 0, -1):
        bmsg[i] = unary[i] + _dt_quadratic(bmsg[i + 1], lam)
    return bmsg


def _cycle_min_given_k0(unary, lam, k0, ls):
    bmsg = _backward_messages(unary, lam, k0, ls)
    d = ls - float(k0)
    return float(unary[0, k0] + (bmsg[1] + lam * (d * d)).min())
