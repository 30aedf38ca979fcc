"""Plaque region extraction, composition, stenosis, and risk flags.

The plaque region is the set of volume voxels whose centers fall between
the inner and outer wall surfaces within the marked vessel section.
Membership is a purely geometric test: each voxel maps to its nearest
cross-section (ties to the lower index), gets polar coordinates in that
section's frame, and is a member when the marker range contains its
arclength and inner(theta) <= r < outer(theta) with the per-section
radii interpolated linearly in angle.  The same definition, written as
an explicit per-voxel loop, serves as the enumeration oracle in tests;
the production path is just its vectorization and must match it exactly.

Composition splits the region's HU values at two adjustable thresholds
into lipid-rich (-inf, t1), fibrotic [t1, t2), calcified [t2, +inf).
Stenosis compares per-position lumen areas against a reference
interpolated linearly between the two marker positions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .centerline import Centerline, SectionMarkers
from .errors import (
    CoverageError,
    DegenerateReferenceError,
    ParameterError,
    ParseError,
)
from .wall import WallSurface
from .volume import Volume

HIST_MIN_HU = -1024
HIST_MAX_HU = 3071  # 1-HU bins; bin b covers [b, b+1)
LAP_VOLUME_THRESHOLD_MM3 = 1.0


@dataclass(frozen=True)
class CompositionThresholds:
    """HU cut points between lipid-rich/fibrotic and fibrotic/calcified."""

    t_lipid_fib: float = 30.0
    t_fib_calc: float = 130.0

    def __post_init__(self):
        if not self.t_lipid_fib < self.t_fib_calc:
            raise ParameterError(
                f"thresholds must be ordered: {self.t_lipid_fib:g} < {self.t_fib_calc:g}"
            )

    def to_json_dict(self) -> dict:
        return {"t_lipid_fib": self.t_lipid_fib, "t_fib_calc": self.t_fib_calc}

    @staticmethod
    def from_json_dict(d: dict) -> "CompositionThresholds":
        return CompositionThresholds(
            t_lipid_fib=float(d["t_lipid_fib"]), t_fib_calc=float(d["t_fib_calc"])
        )


@dataclass(frozen=True)
class PlaqueRegion:
    """Voxel membership of one lesion, in index space of the volume."""

    lesion_id: str
    indices: np.ndarray        # (n, 3) int64, lexicographically ordered
    voxel_volume_mm3: float

    def __post_init__(self):
        idx = np.ascontiguousarray(np.asarray(self.indices, np.int64).reshape(-1, 3))
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def n_voxels(self) -> int:
        return self.indices.shape[0]

    @property
    def volume_mm3(self) -> float:
        return self.n_voxels * self.voxel_volume_mm3

    def values(self, vol: Volume) -> np.ndarray:
        if self.n_voxels == 0:
            return np.empty(0, np.float32)
        i, j, k = self.indices.T
        return vol.data[i, j, k]


def _section_frames(c: Centerline, arclengths: np.ndarray):
    p = np.empty((arclengths.shape[0], 3))
    t = np.empty_like(p)
    n = np.empty_like(p)
    b = np.empty_like(p)
    for k, s in enumerate(arclengths):
        p[k], t[k], n[k], b[k] = c.frame_at(float(s))
    return p, t, n, b


def _interp_radii_at_angles(radii_row: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Cyclic linear interpolation of one section's per-ray radii."""
    n = radii_row.shape[0]
    ft = (theta % (2.0 * math.pi)) / (2.0 * math.pi / n)
    j0 = ft.astype(np.int64) % n
    tt = ft - np.floor(ft)
    j1 = (j0 + 1) % n
    return radii_row[j0] * (1.0 - tt) + radii_row[j1] * tt


def _check_lattice(inner: WallSurface, outer: WallSurface, markers: SectionMarkers):
    if inner.radii.shape != outer.radii.shape or not np.array_equal(
        inner.arclengths, outer.arclengths
    ):
        raise ParameterError("inner and outer surfaces must share one lattice")
    lo, hi = float(inner.arclengths[0]), float(inner.arclengths[-1])
    if markers.proximal_s < lo - 1e-9 or markers.distal_s > hi + 1e-9:
        raise CoverageError(
            f"markers [{markers.proximal_s:g}, {markers.distal_s:g}] exceed "
            f"surface coverage [{lo:g}, {hi:g}]"
        )


def interp_surface_radii(radii: np.ndarray, ks: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Per-voxel surface radius: section ``ks[i]`` evaluated at ``theta[i]``."""
    out = np.empty_like(theta)
    for k in np.unique(ks):
        sel = ks == k
        out[sel] = _interp_radii_at_angles(radii[k], theta[sel])
    return out


def polar_voxel_chunks(
    vol: Volume, c: Centerline, arclengths: np.ndarray, margin: float, chunk: int = 65536
):
    """Voxel centers near the vessel in section-polar coordinates.

    Scans a bounding box around the section centers padded by ``margin``
    and yields (indices, section_index, s_along, radius, theta) per chunk.
    Each voxel belongs to its nearest section center (ties to the lower
    index); s_along is that section's arclength plus the tangential
    offset, and theta follows the section frame's (normal, binormal)
    convention used by the polar wall sampling.
    """
    p, t, nv, bv = _section_frames(c, arclengths)
    lo_w = p.min(axis=0) - margin
    hi_w = p.max(axis=0) + margin
    lo_i = np.maximum(np.floor(vol.world_to_index(lo_w)).astype(np.int64), 0)
    hi_i = np.minimum(
        np.ceil(vol.world_to_index(hi_w)).astype(np.int64),
        np.asarray(vol.shape, np.int64) - 1,
    )
    if np.any(hi_i < lo_i):
        return

    ii = np.arange(lo_i[0], hi_i[0] + 1)
    jj = np.arange(lo_i[1], hi_i[1] + 1)
    kk = np.arange(lo_i[2], hi_i[2] + 1)
    gi, gj, gk = np.meshgrid(ii, jj, kk, indexing="ij")
    idx_all = np.column_stack([gi.ravel(), gj.ravel(), gk.ravel()])

    spacing = np.asarray(vol.spacing)
    origin = np.asarray(vol.origin)
    for c0 in range(0, idx_all.shape[0], chunk):
        idx = idx_all[c0 : c0 + chunk]
        q = origin + idx * spacing
        d2 = ((q[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        ks = d2.argmin(axis=1)
        rho = q - p[ks]
        d_t = np.einsum("ij,ij->i", rho, t[ks])
        s_loc = arclengths[ks] + d_t
        perp = rho - d_t[:, None] * t[ks]
        r = np.linalg.norm(perp, axis=1)
        theta = np.arctan2(
            np.einsum("ij,ij->i", rho, bv[ks]), np.einsum("ij,ij->i", rho, nv[ks])
        )
        yield idx, ks, s_loc, r, theta


def build_plaque_region(
    vol: Volume,
    c: Centerline,
    inner: WallSurface,
    outer: WallSurface,
    markers: SectionMarkers,
    lesion_id: str = "",
    chunk: int = 65536,
) -> PlaqueRegion:
    """All voxels between the walls within the marker range.

    Only a bounding box around the section centers (padded by the
    largest outer radius plus two voxels) is scanned; geometry caps the
    membership test inside it.
    """
    _check_lattice(inner, outer, markers)
    al = inner.arclengths
    margin = float(outer.radii.max()) + 2.0 * max(vol.spacing)
    member_chunks = []
    for idx, ks, s_loc, r, theta in polar_voxel_chunks(vol, c, al, margin, chunk):
        in_range = (s_loc >= markers.proximal_s - 1e-12) & (
            s_loc <= markers.distal_s + 1e-12
        )
        r_in = interp_surface_radii(inner.radii, ks, theta)
        r_out = interp_surface_radii(outer.radii, ks, theta)
        member = in_range & (r >= r_in) & (r < r_out)
        member_chunks.append(idx[member])
    indices = (
        np.vstack(member_chunks) if member_chunks else np.empty((0, 3), np.int64)
    )
    return PlaqueRegion(lesion_id, indices, vol.voxel_volume_mm3)


# ---------------------------------------------------------------------------
# composition


def hu_histogram(values: np.ndarray) -> np.ndarray:
    """Counts per 1-HU bin over [HIST_MIN_HU, HIST_MAX_HU]; out-of-range
    values land in the edge bins."""
    counts = np.zeros(HIST_MAX_HU - HIST_MIN_HU + 1, np.int64)
    if values.size:
        b = np.clip(np.floor(values).astype(np.int64), HIST_MIN_HU, HIST_MAX_HU)
        np.add.at(counts, b - HIST_MIN_HU, 1)
    return counts


def sparse_histogram(counts: np.ndarray) -> list:
    """[(bin_start_hu, count), ...] for non-empty bins, ascending."""
    nz = np.nonzero(counts)[0]
    return [[int(b + HIST_MIN_HU), int(counts[b])] for b in nz]


def composition_counts(values: np.ndarray, thr: CompositionThresholds):
    """(lipid, fibrotic, calcified) voxel counts; intervals half-open so a
    value exactly at a threshold belongs to the class above it."""
    lipid = int((values < thr.t_lipid_fib).sum())
    fib = int(((values >= thr.t_lipid_fib) & (values < thr.t_fib_calc)).sum())
    calc = int((values >= thr.t_fib_calc).sum())
    return lipid, fib, calc


# ---------------------------------------------------------------------------
# stenosis / remodeling


def polygon_area(radii_row: np.ndarray) -> float:
    """Shoelace area of the polar contour at uniform angles."""
    n = radii_row.shape[0]
    s = math.sin(2.0 * math.pi / n)
    return 0.5 * s * float((radii_row * np.roll(radii_row, -1)).sum())


@dataclass(frozen=True)
class StenosisMetrics:
    arclengths: np.ndarray          # positions evaluated (within markers)
    lumen_areas: np.ndarray         # mm^2
    vessel_areas: np.ndarray        # mm^2
    ref_lumen_areas: np.ndarray
    ref_vessel_areas: np.ndarray
    stenosis_per_position: np.ndarray  # percent, may be negative pre-clamp
    stenosis_area_pct: float        # max over positions, clamped to [0, 100]
    stenosis_arclength: float       # s* where the max occurs
    remodeling_index: float         # vessel area ratio at s*

    def to_json_dict(self) -> dict:
        return {
            "arclengths": [float(x) for x in self.arclengths],
            "lumen_areas": [float(x) for x in self.lumen_areas],
            "vessel_areas": [float(x) for x in self.vessel_areas],
            "ref_lumen_areas": [float(x) for x in self.ref_lumen_areas],
            "ref_vessel_areas": [float(x) for x in self.ref_vessel_areas],
            "stenosis_per_position": [float(x) for x in self.stenosis_per_position],
            "stenosis_area_pct": self.stenosis_area_pct,
            "stenosis_arclength": self.stenosis_arclength,
            "remodeling_index": self.remodeling_index,
        }


def stenosis_and_remodeling(
    inner: WallSurface, outer: WallSurface, markers: SectionMarkers
) -> StenosisMetrics:
    """Area stenosis against marker-interpolated references.

    The reference at position s blends the areas measured at the two
    markers: A_ref(s) = (1-w) A(prox) + w A(dist), w linear in s.  The
    reported degree is the worst position; the remodeling index is the
    vessel-area ratio at that same position.
    """
    _check_lattice(inner, outer, markers)
    al = inner.arclengths
    a_lumen = np.asarray([polygon_area(r) for r in inner.radii])
    a_vessel = np.asarray([polygon_area(r) for r in outer.radii])

    sp, sd = markers.proximal_s, markers.distal_s
    a_lum_p = float(np.interp(sp, al, a_lumen))
    a_lum_d = float(np.interp(sd, al, a_lumen))
    a_ves_p = float(np.interp(sp, al, a_vessel))
    a_ves_d = float(np.interp(sd, al, a_vessel))

    sel = (al >= sp - 1e-9) & (al <= sd + 1e-9)
    s_eval = al[sel]
    w = (s_eval - sp) / (sd - sp)
    ref_lum = (1.0 - w) * a_lum_p + w * a_lum_d
    ref_ves = (1.0 - w) * a_ves_p + w * a_ves_d
    if (ref_lum <= 0).any() or (ref_ves <= 0).any():
        raise DegenerateReferenceError("marker reference area is not positive")

    sten = 100.0 * (1.0 - a_lumen[sel] / ref_lum)
    k_star = int(np.argmax(sten))
    return StenosisMetrics(
        arclengths=s_eval,
        lumen_areas=a_lumen[sel],
        vessel_areas=a_vessel[sel],
        ref_lumen_areas=ref_lum,
        ref_vessel_areas=ref_ves,
        stenosis_per_position=sten,
        stenosis_area_pct=float(min(max(sten[k_star], 0.0), 100.0)),
        stenosis_arclength=float(s_eval[k_star]),
        remodeling_index=float(a_vessel[sel][k_star] / ref_ves[k_star]),
    )


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class LesionReport:
    lesion_id: str
    thresholds: CompositionThresholds
    voxel_count: int
    voxel_volume_mm3: float
    lipid_count: int
    fibrotic_count: int
    calcified_count: int
    stenosis: StenosisMetrics
    histogram: list                   # [(bin_start_hu, count), ...]
    low_attenuation_flag: bool
    napkin_ring_flag: bool = False
    stale: bool = False

    @property
    def total_volume_mm3(self) -> float:
        return self.voxel_count * self.voxel_volume_mm3

    @property
    def lipid_volume_mm3(self) -> float:
        return self.lipid_count * self.voxel_volume_mm3

    @property
    def fibrotic_volume_mm3(self) -> float:
        return self.fibrotic_count * self.voxel_volume_mm3

    @property
    def calcified_volume_mm3(self) -> float:
        return self.calcified_count * self.voxel_volume_mm3

    def to_json_dict(self) -> dict:
        return {
            "lesion_id": self.lesion_id,
            "thresholds": self.thresholds.to_json_dict(),
            "voxel_count": self.voxel_count,
            "voxel_volume_mm3": self.voxel_volume_mm3,
            "counts": {
                "lipid_rich": self.lipid_count,
                "fibrotic": self.fibrotic_count,
                "calcified": self.calcified_count,
            },
            "volumes_mm3": {
                "lipid_rich": self.lipid_volume_mm3,
                "fibrotic": self.fibrotic_volume_mm3,
                "calcified": self.calcified_volume_mm3,
                "total": self.total_volume_mm3,
            },
            "stenosis": self.stenosis.to_json_dict(),
            "histogram": [[int(b), int(n)] for b, n in self.histogram],
            "low_attenuation_flag": self.low_attenuation_flag,
            "napkin_ring_flag": self.napkin_ring_flag,
            "stale": self.stale,
        }


def flag_high_risk(
    lipid_volume_mm3: float,
    napkin_ring: bool = False,
    lap_volume_threshold: float = LAP_VOLUME_THRESHOLD_MM3,
) -> dict:
    """Low-attenuation flag from the composition; napkin ring is manual."""
    return {
        "low_attenuation_flag": bool(lipid_volume_mm3 >= lap_volume_threshold),
        "napkin_ring_flag": bool(napkin_ring),
    }


def build_lesion_report(
    vol: Volume,
    c: Centerline,
    inner: WallSurface,
    outer: WallSurface,
    markers: SectionMarkers,
    thresholds: CompositionThresholds | None = None,
    lesion_id: str = "",
    napkin_ring: bool = False,
    region: PlaqueRegion | None = None,
) -> LesionReport:
    """Full per-lesion analysis: region, composition, stenosis, flags."""
    if thresholds is None:
        thresholds = CompositionThresholds()
    if region is None:
        region = build_plaque_region(vol, c, inner, outer, markers, lesion_id)
    vals = region.values(vol)
    lipid, fib, calc = composition_counts(vals, thresholds)
    hist = sparse_histogram(hu_histogram(vals))
    sten = stenosis_and_remodeling(inner, outer, markers)
    flags = flag_high_risk(lipid * region.voxel_volume_mm3, napkin_ring)
    return LesionReport(
        lesion_id=lesion_id or region.lesion_id,
        thresholds=thresholds,
        voxel_count=region.n_voxels,
        voxel_volume_mm3=region.voxel_volume_mm3,
        lipid_count=lipid,
        fibrotic_count=fib,
        calcified_count=calc,
        stenosis=sten,
        histogram=hist,
        low_attenuation_flag=flags["low_attenuation_flag"],
        napkin_ring_flag=flags["napkin_ring_flag"],
    )


def annotate_napkin_ring(report: LesionReport, value: bool) -> LesionReport:
    """The napkin ring sign is a visual call; it is only ever set manually."""
    return replace(report, napkin_ring_flag=bool(value))


# ---------------------------------------------------------------------------
# CSV export


HIST_CSV_HEADER = ["hu_bin_start", "hu_bin_end", "voxel_count", "volume_mm3"]


def export_histogram(report: LesionReport, path: str) -> str:
    """One row per non-empty 1-HU bin; UTF-8 with LF line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HIST_CSV_HEADER)
        for b, n in report.histogram:
            wr.writerow(
                [b, b + 1, n, format(n * report.voxel_volume_mm3, ".10g")]
            )
    return path


def import_histogram(path: str) -> list:
    """[(bin_start, count), ...] back from an exported CSV."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != HIST_CSV_HEADER:
            raise ParseError(f"{path}: unexpected histogram header {header!r}")
        for row in rd:
            if len(row) != 4:
                raise ParseError(f"{path}: malformed histogram row {row!r}")
            out.append([int(row[0]), int(row[2])])
    return out
