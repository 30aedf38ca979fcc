"""Perivascular fat ROIs and fat attenuation statistics.

A fat ROI is a radial shell hugging the chosen wall surface: a voxel
belongs when its section-polar radius satisfies
wall_r(s, theta) < r <= wall_r(s, theta) + w(s) inside the requested
arclength range.  The width is either fixed (manual mode) or the local
mean vessel diameter (auto mode), following the published per-branch
convention: the RCA window is 10-50 mm from the ostium, LAD and LCx use
0-40 mm.  The fat attenuation index is the mean HU over ROI voxels
inside the adipose window [-190, -30]; voxels outside the window count
toward ROI volume but not toward the mean.

The window bounds, branch ranges, and width policy are configuration
constants, not validated clinical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .centerline import Centerline
from .errors import CoverageError, ParameterError
from .plaque import (
    hu_histogram,
    interp_surface_radii,
    polar_voxel_chunks,
    sparse_histogram,
)
from .volume import Volume
from .wall import WallSurface

FAT_WINDOW_HU = (-190.0, -30.0)   # inclusive bounds
RCA_S_RANGE_MM = (10.0, 50.0)
OTHER_S_RANGE_MM = (0.0, 40.0)
MAIN_BRANCH_LABELS = ("RCA", "LAD", "LCx")
AUTO_WIDTH = "auto"


@dataclass(frozen=True)
class FatROI:
    """Radial fat shell around one wall surface."""

    base: str                # "inner" or "outer": which wall it hugs
    mode: str                # "manual" or "auto"
    radial_width: float | None   # mm in manual mode, None in auto
    s_range: tuple           # (s0, s1) arclength interval, mm
    branch_label: str
    indices: np.ndarray      # (n, 3) int64 voxel indices
    voxel_volume_mm3: float
    warnings: tuple = ()

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

    def to_json_dict(self) -> dict:
        return {
            "base": self.base,
            "mode": self.mode,
            "radial_width": self.radial_width,
            "s_range": [float(self.s_range[0]), float(self.s_range[1])],
            "branch_label": self.branch_label,
            "n_voxels": self.n_voxels,
            "volume_mm3": self.volume_mm3,
            "warnings": list(self.warnings),
        }


def _section_widths(wall: WallSurface, width) -> np.ndarray:
    """Per-section shell width: constant, or the mean wall diameter."""
    n = wall.radii.shape[0]
    if width == AUTO_WIDTH:
        return 2.0 * wall.radii.mean(axis=1)
    w = float(width)
    if w <= 0:
        raise ParameterError(f"radial width must be positive, got {w:g}")
    return np.full(n, w)


def build_fat_roi(
    vol: Volume,
    c: Centerline,
    wall: WallSurface,
    base: str = "outer",
    width=6.0,
    s_range: tuple | None = None,
    branch_label: str = "",
    warnings: tuple = (),
) -> FatROI:
    """Shell of voxels just outside ``wall`` within the arclength range.

    ``width`` is mm, or "auto" for the local mean vessel diameter.
    """
    if base not in ("inner", "outer"):
        raise ParameterError(f"base must be 'inner' or 'outer', got {base!r}")
    al = wall.arclengths
    if s_range is None:
        s_range = (float(al[0]), float(al[-1]))
    s0, s1 = float(s_range[0]), float(s_range[1])
    if not s0 < s1:
        raise ParameterError(f"s_range must be increasing, got [{s0:g}, {s1:g}]")
    if s0 < al[0] - 1e-9 or s1 > al[-1] + 1e-9:
        raise CoverageError(
            f"s_range [{s0:g}, {s1:g}] exceeds wall coverage "
            f"[{al[0]:g}, {al[-1]:g}]"
        )
    widths = _section_widths(wall, width)
    margin = float((wall.radii.max(axis=1) + widths).max()) + 2.0 * max(vol.spacing)
    member_chunks = []
    for idx, ks, s_loc, r, theta in polar_voxel_chunks(vol, c, al, margin):
        in_range = (s_loc >= s0 - 1e-12) & (s_loc <= s1 + 1e-12)
        r_wall = interp_surface_radii(wall.radii, ks, theta)
        member = in_range & (r > r_wall) & (r <= r_wall + widths[ks])
        member_chunks.append(idx[member])
    indices = (
        np.vstack(member_chunks) if member_chunks else np.empty((0, 3), np.int64)
    )
    return FatROI(
        base=base,
        mode=AUTO_WIDTH if width == AUTO_WIDTH else "manual",
        radial_width=None if width == AUTO_WIDTH else float(width),
        s_range=(s0, s1),
        branch_label=branch_label or c.branch_label,
        indices=indices,
        voxel_volume_mm3=vol.voxel_volume_mm3,
        warnings=warnings,
    )


def auto_branch_rois(vol: Volume, entries) -> tuple:
    """One literature-convention ROI per labeled main branch.

    ``entries`` is a sequence of (Centerline, outer WallSurface).  Labels
    other than RCA/LAD/LCx are skipped; ranges exceeding the available
    branch are truncated with a warning on the ROI.  Returns
    (rois, notices).
    """
    rois = []
    notices = []
    for c, outer in entries:
        label = c.branch_label
        if label not in MAIN_BRANCH_LABELS:
            notices.append(f"branch {label or '(unlabeled)'} skipped: not a main branch")
            continue
        want = RCA_S_RANGE_MM if label == "RCA" else OTHER_S_RANGE_MM
        lo = max(want[0], float(outer.arclengths[0]))
        hi = min(want[1], float(outer.arclengths[-1]))
        if hi <= lo:
            notices.append(
                f"branch {label} skipped: no overlap with its {want} mm window"
            )
            continue
        warnings = ()
        if (lo, hi) != want:
            warnings = (
                f"{label} window {want} mm truncated to [{lo:g}, {hi:g}] mm",
            )
        rois.append(
            build_fat_roi(
                vol, c, outer, base="outer", width=AUTO_WIDTH,
                s_range=(lo, hi), branch_label=label, warnings=warnings,
            )
        )
    if not rois and not notices:
        notices.append("no labeled branches given")
    return rois, notices


@dataclass(frozen=True)
class FatStats:
    """Fat attenuation over one ROI."""

    mean_hu: float | None     # None when no voxel falls in the fat window
    total_count: int
    in_window_count: int
    window: tuple
    roi_volume_mm3: float
    histogram: list           # sparse [(bin_start_hu, count), ...] over all voxels

    def to_json_dict(self) -> dict:
        d = {
            "total_count": self.total_count,
            "in_window_count": self.in_window_count,
            "window": [self.window[0], self.window[1]],
            "roi_volume_mm3": self.roi_volume_mm3,
            "histogram": [[int(b), int(n)] for b, n in self.histogram],
        }
        if self.mean_hu is not None:
            d["mean_hu"] = self.mean_hu
        return d


def fat_stats(roi: FatROI, vol: Volume, window: tuple = FAT_WINDOW_HU) -> FatStats:
    vals = roi.values(vol)
    in_win = (vals >= window[0]) & (vals <= window[1])
    n_in = int(in_win.sum())
    return FatStats(
        mean_hu=float(vals[in_win].mean()) if n_in else None,
        total_count=int(vals.size),
        in_window_count=n_in,
        window=(float(window[0]), float(window[1])),
        roi_volume_mm3=roi.volume_mm3,
        histogram=sparse_histogram(hu_histogram(vals)),
    )
