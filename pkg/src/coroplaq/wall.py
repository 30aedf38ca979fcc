"""Inner/outer vessel wall segmentation and interactive surface edits.

The inner (lumen) boundary is found per cross-section by casting rays
from the section center and solving a cyclic MRF over per-ray radius
labels: unary costs favor bright-to-dark HU transitions along each ray,
a convex quadratic pairwise term keeps neighboring rays coherent, and
the cycle is solved exactly by conditioning on ray 0.  Sections are then
coupled by coordinate-descent sweeps that pull each section toward its
neighbors' solutions, and a parabolic fit refines each boundary to
sub-label precision.

The outer boundary walks each ray outward from the inner wall to the
first edge response at or above a user threshold; the threshold is the
single real-time "widen/narrow" control.  A final cyclic solve smooths
the raw radii.

Surface corrections interpolate user targets with compactly supported
Wendland C2 radial basis functions over the (arclength, angle) domain,
so an edit is exactly local: nodes outside every constraint's support
keep bit-identical radii.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .centerline import Centerline
from .errors import (
    ConflictingConstraintsError,
    ParameterError,
)
from .reformat import CrossSection, StraightenedVolume

LAMBDA_DEFAULT = 2.0
MU_DEFAULT = 0.5
SWEEPS_DEFAULT = 3
OUTER_THRESHOLD_DEFAULT = 0.3
MIN_WALL_GAP_MM = 0.2       # outer search starts this far beyond the inner wall
FALLBACK_THICKNESS_MM = 1.0  # used when no ray has an edge crossing


@dataclass(frozen=True)
class PolarSampling:
    """Ray-casting geometry: samples[i][j] lies at angle 2*pi*i/n_rays,
    radius j*dr from the section center."""

    n_rays: int = 72
    n_radii: int = 100
    dr: float = 0.1

    def __post_init__(self):
        if self.n_rays < 8:
            raise ParameterError("polar sampling needs at least 8 rays")
        if self.n_radii < 3:
            raise ParameterError("polar sampling needs at least 3 radii")
        if self.dr <= 0:
            raise ParameterError("dr must be positive")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_rays) * (2.0 * math.pi / self.n_rays)

    @property
    def radii_mm(self) -> np.ndarray:
        return np.arange(self.n_radii) * self.dr

    @property
    def max_radius_mm(self) -> float:
        return (self.n_radii - 1) * self.dr


def polar_samples(section: CrossSection, sampling: PolarSampling) -> np.ndarray:
    """(n_rays, n_radii) HU values, bilinear off the section grid."""
    if sampling.max_radius_mm > section.extent / 2.0 + 1e-9:
        raise ParameterError(
            f"polar radius {sampling.max_radius_mm:g} mm exceeds the "
            f"section half-extent {section.extent / 2.0:g} mm"
        )
    ang = sampling.angles
    r = sampling.radii_mm
    u = np.cos(ang)[:, None] * r[None, :]
    v = np.sin(ang)[:, None] * r[None, :]
    return section.sample_uv(u, v)


def ray_derivatives(hu: np.ndarray, dr: float) -> np.ndarray:
    """Outward HU derivative along each ray; one-sided at both ends."""
    d = np.empty_like(hu)
    d[:, 1:-1] = (hu[:, 2:] - hu[:, :-2]) / (2.0 * dr)
    d[:, 0] = (hu[:, 1] - hu[:, 0]) / dr
    d[:, -1] = (hu[:, -1] - hu[:, -2]) / dr
    return d


@dataclass(frozen=True)
class MrfProblem:
    """Cyclic chain over rays; label l on ray i costs unary[i][l], and
    adjacent rays (cyclically) pay lam * (l_i - l_j)^2."""

    unary: np.ndarray
    lam: float = LAMBDA_DEFAULT

    def __post_init__(self):
        u = np.ascontiguousarray(np.asarray(self.unary, np.float64))
        if u.ndim != 2:
            raise ParameterError("unary costs must be (n_rays, n_labels)")
        if not np.isfinite(u).all():
            raise ParameterError("unary costs must be finite")
        if self.lam < 0:
            raise ParameterError("pairwise weight must be nonnegative")
        u.setflags(write=False)
        object.__setattr__(self, "unary", u)


def solve_cyclic_mrf(p: MrfProblem) -> np.ndarray:
    """Global minimizer; ties go to the smaller label, then smaller ray."""
    labels, _ = _kernels.mrf_cycle(p.unary, p.lam)
    return labels


def mrf_energy(p: MrfProblem, labels) -> float:
    labels = np.asarray(labels, np.int64)
    n = labels.shape[0]
    e = float(p.unary[np.arange(n), labels].sum())
    d = labels - np.roll(labels, -1)
    return e + p.lam * float((d * d).sum())


def lumen_unary_costs(
    section: CrossSection, sampling: PolarSampling | None = None
) -> MrfProblem:
    """Per-ray boundary costs: lowest where HU falls fastest outward.

    The signed outward derivative is min-max normalized over the whole
    section, so the strongest bright-to-dark edge costs 0 and the
    strongest dark-to-bright edge costs 1.  A uniform section normalizes
    to all-equal costs.
    """
    if sampling is None:
        sampling = PolarSampling()
    hu = polar_samples(section, sampling)
    d = ray_derivatives(hu, sampling.dr)
    lo = float(d.min())
    rng = float(d.max()) - lo
    if rng > 0.0:
        unary = (d - lo) / rng
    else:
        unary = np.zeros_like(d)
    return MrfProblem(unary=unary, lam=LAMBDA_DEFAULT)


@dataclass(frozen=True)
class WallSurface:
    """Radius field r(s, theta) on the straightened-section lattice."""

    kind: str                 # "inner" or "outer"
    radii: np.ndarray         # (n_sections, n_rays) mm
    arclengths: np.ndarray    # (n_sections,) mm
    step_s: float

    def __post_init__(self):
        if self.kind not in ("inner", "outer"):
            raise ParameterError(f"unknown surface kind {self.kind!r}")
        r = np.ascontiguousarray(np.asarray(self.radii, np.float64))
        al = np.ascontiguousarray(np.asarray(self.arclengths, np.float64))
        if r.ndim != 2 or al.ndim != 1 or r.shape[0] != al.shape[0]:
            raise ParameterError("radii must be (n_sections, n_rays)")
        if not np.isfinite(r).all() or (r <= 0).any():
            raise ParameterError("surface radii must be finite and positive")
        r.setflags(write=False)
        al.setflags(write=False)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "arclengths", al)

    @property
    def n_rays(self) -> int:
        return self.radii.shape[1]

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_rays) * (2.0 * math.pi / self.n_rays)

    def _s_segment(self, s: float):
        al = self.arclengths
        if s < al[0] - 1e-9 or s > al[-1] + 1e-9:
            raise ParameterError(
                f"arclength {s:g} outside surface domain [{al[0]:g}, {al[-1]:g}]"
            )
        s = min(max(s, float(al[0])), float(al[-1]))
        k = int(np.searchsorted(al, s, side="right")) - 1
        k = min(max(k, 0), al.shape[0] - 2) if al.shape[0] > 1 else 0
        if al.shape[0] == 1:
            return 0, 0.0
        return k, (s - al[k]) / (al[k + 1] - al[k])

    def radius_at(self, s: float, theta: float) -> float:
        """Bilinear in s, cyclic-linear in theta."""
        k, ts = self._s_segment(float(s))
        n = self.n_rays
        ft = (theta % (2.0 * math.pi)) / (2.0 * math.pi / n)
        j0 = int(ft) % n
        tt = ft - int(ft)
        j1 = (j0 + 1) % n
        r = self.radii
        row0 = r[k, j0] * (1.0 - tt) + r[k, j1] * tt
        if self.radii.shape[0] == 1:
            return float(row0)
        row1 = r[k + 1, j0] * (1.0 - tt) + r[k + 1, j1] * tt
        return float(row0 * (1.0 - ts) + row1 * ts)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "step_s": self.step_s,
            "angles_n": int(self.n_rays),
            "arclengths": [float(s) for s in self.arclengths],
            "radii": [[float(x) for x in row] for row in self.radii],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "WallSurface":
        return WallSurface(
            kind=d["kind"],
            radii=np.asarray(d["radii"], np.float64),
            arclengths=np.asarray(d["arclengths"], np.float64),
            step_s=float(d["step_s"]),
        )


# ---------------------------------------------------------------------------
# inner wall


def _subvoxel_offsets(unary: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Parabolic vertex offset (in labels, clamped to [-1, 1]) around each
    chosen label; 0 at the label range ends or when the fit is not convex."""
    n, m = unary.shape
    offs = np.zeros(n)
    for i in range(n):
        j = int(labels[i])
        if j <= 0 or j >= m - 1:
            continue
        um = unary[i, j - 1]
        u0 = unary[i, j]
        up = unary[i, j + 1]
        denom = um - 2.0 * u0 + up
        if denom <= 0.0:
            continue
        offs[i] = min(max(0.5 * (um - up) / denom, -1.0), 1.0)
    return offs


def inner_energy(problems, labels, mu: float) -> float:
    """Total inner-wall energy: per-section MRF energies plus the
    inter-section coupling (mu/2) * sum of squared label differences."""
    e = sum(mrf_energy(p, l) for p, l in zip(problems, labels))
    lab = np.asarray(labels, np.float64)
    if lab.shape[0] > 1:
        d = np.diff(lab, axis=0)
        e += 0.5 * mu * float((d * d).sum())
    return float(e)


def solve_inner_labels(problems, mu: float = MU_DEFAULT, sweeps: int = SWEEPS_DEFAULT):
    """Per-section solves plus coordinate-descent coupling sweeps.

    Each sweep re-solves every section exactly, conditioned on its
    neighbors' current labels: interior sections gain the convex term
    mu*(l - avg(neighbors))^2, end sections (mu/2)*(l - neighbor)^2,
    which is precisely the conditional of the coupling used by
    inner_energy, so the total energy never increases.

    Returns (labels (n_sections, n_rays) int64, energy after each stage).
    """
    k_n = len(problems)
    labels = np.stack([solve_cyclic_mrf(p) for p in problems])
    energies = [inner_energy(problems, labels, mu)]
    if k_n == 1 or mu == 0.0:
        return labels, energies
    ls = np.arange(problems[0].unary.shape[1], dtype=np.float64)
    for _ in range(sweeps):
        for k in range(k_n):
            if k == 0:
                w, target = 0.5 * mu, labels[1].astype(np.float64)
            elif k == k_n - 1:
                w, target = 0.5 * mu, labels[k_n - 2].astype(np.float64)
            else:
                w = mu
                target = 0.5 * (labels[k - 1] + labels[k + 1]).astype(np.float64)
            d = ls[None, :] - target[:, None]
            aug = MrfProblem(problems[k].unary + w * d * d, problems[k].lam)
            labels[k] = solve_cyclic_mrf(aug)
        energies.append(inner_energy(problems, labels, mu))
    return labels, energies


def segment_inner_wall(
    sv: StraightenedVolume,
    sampling: PolarSampling | None = None,
    mu: float = MU_DEFAULT,
    sweeps: int = SWEEPS_DEFAULT,
) -> WallSurface:
    """Lumen boundary as a radius field over (section, ray)."""
    if sampling is None:
        sampling = PolarSampling()
    problems = [lumen_unary_costs(sec, sampling) for sec in sv.sections]
    labels, _ = solve_inner_labels(problems, mu=mu, sweeps=sweeps)
    radii = np.empty(labels.shape, np.float64)
    for k, p in enumerate(problems):
        offs = _subvoxel_offsets(p.unary, labels[k])
        radii[k] = (labels[k] + offs) * sampling.dr
    # label 0 would mean a boundary through the section center; keep the
    # radius positive so the surface type stays valid
    radii = np.maximum(radii, 0.25 * sampling.dr)
    return WallSurface(
        kind="inner",
        radii=radii,
        arclengths=sv.arclengths,
        step_s=sv.step_s,
    )


# ---------------------------------------------------------------------------
# outer wall


def _outer_response(hu: np.ndarray, inner_r: np.ndarray, sampling: PolarSampling):
    """|HU derivative| normalized per section against its maximum beyond
    the inner wall.  Returns (response, candidate mask)."""
    d = np.abs(ray_derivatives(hu, sampling.dr))
    r = sampling.radii_mm
    beyond = r[None, :] > inner_r[:, None]
    peak = float(d[beyond].max()) if beyond.any() else 0.0
    resp = d / peak if peak > 0.0 else np.zeros_like(d)
    cand = r[None, :] > (inner_r[:, None] + MIN_WALL_GAP_MM)
    return resp, cand


def raw_outer_radii(
    sv: StraightenedVolume,
    inner: WallSurface,
    threshold: float,
    sampling: PolarSampling | None = None,
) -> np.ndarray:
    """Pre-smoothing per-ray outer radii (first threshold crossing).

    Per ray: the first radius beyond inner + 0.2 mm whose response is
    both >= threshold and strictly positive.  Rays without a crossing
    fall back to inner + median crossing thickness of their section, or
    inner + 1.0 mm if the whole section has none.
    """
    if sampling is None:
        sampling = PolarSampling()
    if not (0.0 <= threshold <= 1.0):
        raise ParameterError("outer threshold must be within [0, 1]")
    r = sampling.radii_mm
    out = np.empty(inner.radii.shape, np.float64)
    for k, sec in enumerate(sv.sections):
        hu = polar_samples(sec, sampling)
        inner_r = inner.radii[k]
        resp, cand = _outer_response(hu, inner_r, sampling)
        ok = cand & (resp >= threshold) & (resp > 0.0)
        has = ok.any(axis=1)
        first = np.where(has, ok.argmax(axis=1), 0)
        raw = r[first]
        if has.any():
            med = float(np.median(raw[has] - inner_r[has]))
        else:
            med = FALLBACK_THICKNESS_MM
        raw = np.where(has, raw, inner_r + med)
        out[k] = np.minimum(raw, sampling.max_radius_mm)
    return out


def segment_outer_wall(
    sv: StraightenedVolume,
    inner: WallSurface,
    threshold: float = OUTER_THRESHOLD_DEFAULT,
    sampling: PolarSampling | None = None,
) -> WallSurface:
    """Outer boundary: raw threshold crossings, cyclically smoothed,
    clamped to stay at or outside the inner wall."""
    if sampling is None:
        sampling = PolarSampling()
    raw = raw_outer_radii(sv, inner, threshold, sampling)
    ls = np.arange(sampling.n_radii, dtype=np.float64)
    radii = np.empty_like(raw)
    for k in range(raw.shape[0]):
        target = raw[k] / sampling.dr
        d = ls[None, :] - target[:, None]
        labels = solve_cyclic_mrf(MrfProblem(d * d, LAMBDA_DEFAULT))
        radii[k] = labels * sampling.dr
    radii = np.maximum(radii, inner.radii)
    return WallSurface(
        kind="outer",
        radii=radii,
        arclengths=sv.arclengths,
        step_s=sv.step_s,
    )


def clamp_pair(inner: WallSurface, outer: WallSurface, edited: str = "inner"):
    """Restore outer >= inner after an edit by moving the other surface."""
    if edited == "inner":
        return inner, replace(outer, radii=np.maximum(outer.radii, inner.radii))
    if edited == "outer":
        return replace(inner, radii=np.minimum(inner.radii, outer.radii)), outer
    raise ParameterError(f"edited must be 'inner' or 'outer', got {edited!r}")


# ---------------------------------------------------------------------------
# RBF surface correction


@dataclass(frozen=True)
class EditConstraint:
    """Pull the surface to target_radius at (s, theta); influence falls
    to zero at distance sigma (anisotropic: mm along s, radians along
    theta, measured on the circle)."""

    s: float
    theta: float
    target_radius: float
    sigma_s: float = 2.0
    sigma_theta: float = math.radians(30.0)

    def __post_init__(self):
        if self.target_radius <= 0:
            raise ParameterError("target radius must be positive")
        if self.sigma_s <= 0 or self.sigma_theta <= 0:
            raise ParameterError("constraint support must be positive")


def _wendland_c2(d: np.ndarray) -> np.ndarray:
    """Compactly supported C2 kernel: (1-d)^4 (4d+1) inside d < 1."""
    inside = d < 1.0
    dd = np.where(inside, d, 1.0)
    return np.where(inside, (1.0 - dd) ** 4 * (4.0 * dd + 1.0), 0.0)


def _circ_diff(a: np.ndarray) -> np.ndarray:
    """Absolute angle difference on the circle, in [0, pi]."""
    two_pi = 2.0 * math.pi
    a = np.abs(a) % two_pi
    return np.minimum(a, two_pi - a)


def _constraint_field(w: WallSurface, con: EditConstraint) -> np.ndarray:
    ds = (w.arclengths - con.s) / con.sigma_s
    dth = _circ_diff(w.angles - con.theta) / con.sigma_theta
    d = np.sqrt(ds[:, None] ** 2 + dth[None, :] ** 2)
    return _wendland_c2(d)


def _bilinear_surface_value(w: WallSurface, field: np.ndarray, s: float, theta: float) -> float:
    k, ts = w._s_segment(s)
    n = w.n_rays
    ft = (theta % (2.0 * math.pi)) / (2.0 * math.pi / n)
    j0 = int(ft) % n
    tt = ft - int(ft)
    j1 = (j0 + 1) % n
    row0 = field[k, j0] * (1.0 - tt) + field[k, j1] * tt
    if field.shape[0] == 1:
        return float(row0)
    row1 = field[k + 1, j0] * (1.0 - tt) + field[k + 1, j1] * tt
    return float(row0 * (1.0 - ts) + row1 * ts)


def apply_rbf_correction(w: WallSurface, constraints) -> WallSurface:
    """Interpolating correction field added to the radii.

    The correction at grid nodes is sum_i w_i * phi_i(node); the weights
    solve the dense system that makes the (bilinearly evaluated) surface
    hit every target exactly.  Nodes outside all supports receive an
    exact zero, so their radii are unchanged bit for bit.
    """
    constraints = list(constraints)
    if not constraints:
        raise ParameterError("need at least one edit constraint")
    for con in constraints:
        # reuse the domain check in _s_segment
        w._s_segment(float(con.s))
    for i in range(len(constraints)):
        for j in range(i + 1, len(constraints)):
            a, b = constraints[i], constraints[j]
            if (
                abs(a.s - b.s) < 1e-9
                and float(_circ_diff(np.asarray([a.theta - b.theta]))[0]) < 1e-9
                and abs(a.target_radius - b.target_radius) > 1e-12
            ):
                raise ConflictingConstraintsError(
                    f"constraints {i} and {j} share a point with different targets"
                )

    fields = [_constraint_field(w, con) for con in constraints]
    m = len(constraints)
    a_mat = np.empty((m, m))
    rhs = np.empty(m)
    for i, con in enumerate(constraints):
        for j in range(m):
            a_mat[i, j] = _bilinear_surface_value(w, fields[j], con.s, con.theta)
        rhs[i] = con.target_radius - _bilinear_surface_value(w, w.radii, con.s, con.theta)
    try:
        weights = np.linalg.solve(a_mat, rhs)
    except np.linalg.LinAlgError:
        raise ConflictingConstraintsError(
            "edit constraints produce a singular interpolation system"
        ) from None
    delta = np.zeros_like(w.radii)
    for wt, f in zip(weights, fields):
        delta += wt * f
    return replace(w, radii=w.radii + delta)


# ---------------------------------------------------------------------------
# mesh export


def surface_to_obj(w: WallSurface, c: Centerline) -> str:
    """Triangulated tube mesh in Wavefront OBJ text."""
    lines = [f"# {w.kind} wall surface, {w.radii.shape[0]} sections x {w.n_rays} rays"]
    n = w.n_rays
    ang = w.angles
    for k, s in enumerate(w.arclengths):
        p, _, nv, bv = c.frame_at(float(s))
        for j in range(n):
            r = w.radii[k, j]
            q = p + r * (math.cos(ang[j]) * nv + math.sin(ang[j]) * bv)
            lines.append(f"v {q[0]:.6f} {q[1]:.6f} {q[2]:.6f}")
    for k in range(w.radii.shape[0] - 1):
        base0 = k * n
        base1 = (k + 1) * n
        for j in range(n):
            j2 = (j + 1) % n
            # OBJ indices are 1-based
            a0, a1 = base0 + j + 1, base0 + j2 + 1
            b0, b1 = base1 + j + 1, base1 + j2 + 1
            lines.append(f"f {a0} {b0} {b1}")
            lines.append(f"f {a0} {b1} {a1}")
    return "\n".join(lines) + "\n"
