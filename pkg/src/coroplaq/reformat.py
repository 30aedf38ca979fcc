"""Cross-sectional and straightened (curved planar) reformation.

A cross-section is a square grid sampled in the plane orthogonal to the
centerline at one arclength, axes taken from the rotation-minimizing
frame so consecutive sections do not spin against each other.  The grid
size is always odd: the center pixel sits exactly on the centerline
point, which pins the polar sampling origin used downstream.

Pixels whose world position falls outside the volume sampling domain
are filled with -1024 HU (air) and counted in ``n_outside``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .centerline import Centerline, SectionMarkers
from .errors import ParameterError
from .volume import Volume

DEFAULT_EXTENT_MM = 20.0
DEFAULT_PIXEL_MM = 0.1
DEFAULT_STEP_MM = 0.5
FILL_HU = -1024.0


@dataclass(frozen=True)
class CrossSection:
    """One reformatted plane.

    grid[i, j] is the HU value at center + u_i*axes[0] + v_j*axes[1]
    with u_i = (i - (n-1)/2) * in_plane_spacing (same for v_j).
    """

    center_s: float
    center: np.ndarray        # (3,) world mm
    tangent: np.ndarray       # (3,) unit
    axes: np.ndarray          # (2, 3) unit, orthogonal to tangent
    grid: np.ndarray          # (n, n) float32 HU
    in_plane_spacing: float
    extent: float
    n_outside: int            # pixels filled because out of domain

    def __post_init__(self):
        for name in ("center", "tangent", "axes", "grid"):
            a = np.ascontiguousarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    @property
    def partially_outside(self) -> bool:
        return self.n_outside > 0

    def pixel_coords(self) -> np.ndarray:
        """In-plane mm coordinate of each row/column index, (n,)."""
        n = self.size
        return (np.arange(n) - (n - 1) / 2.0) * self.in_plane_spacing

    def sample_uv(self, u, v) -> np.ndarray:
        """Bilinear HU at in-plane mm coordinates (arrays broadcast)."""
        n = self.size
        half = (n - 1) / 2.0
        fi = np.clip(np.asarray(u, np.float64) / self.in_plane_spacing + half, 0.0, n - 1.0)
        fj = np.clip(np.asarray(v, np.float64) / self.in_plane_spacing + half, 0.0, n - 1.0)
        i0 = np.clip(fi.astype(np.int64), 0, max(n - 2, 0))
        j0 = np.clip(fj.astype(np.int64), 0, max(n - 2, 0))
        ti = fi - i0
        tj = fj - j0
        g = self.grid
        c0 = g[i0, j0] * (1.0 - tj) + g[i0, j0 + 1] * tj
        c1 = g[i0 + 1, j0] * (1.0 - tj) + g[i0 + 1, j0 + 1] * tj
        return c0 * (1.0 - ti) + c1 * ti

    def to_payload(self) -> bytes:
        """JSON header line + row-major little-endian int16 pixels."""
        header = {
            "width": int(self.size),
            "height": int(self.size),
            "spacing": self.in_plane_spacing,
            "center_s": self.center_s,
        }
        pixels = np.clip(np.rint(self.grid), -32768, 32767).astype("<i2")
        return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + pixels.tobytes(order="C")


def cross_section(
    vol: Volume,
    c: Centerline,
    s: float,
    extent: float = DEFAULT_EXTENT_MM,
    spacing: float = DEFAULT_PIXEL_MM,
) -> CrossSection:
    """Reformatted plane orthogonal to the centerline at arclength s."""
    if extent <= 0 or spacing <= 0:
        raise ParameterError("extent and spacing must be positive")
    if spacing > extent:
        raise ParameterError("in-plane spacing exceeds extent")
    p, t, nv, bv = c.frame_at(float(s))
    half = int(math.floor(extent / (2.0 * spacing)))
    n = 2 * half + 1
    uu = (np.arange(n) - half) * spacing
    pts = (
        p[None, None, :]
        + uu[:, None, None] * nv[None, None, :]
        + uu[None, :, None] * bv[None, None, :]
    ).reshape(-1, 3)
    inside = vol.contains(pts)
    vals = vol.sample(pts, outside="fill", fill=FILL_HU)
    return CrossSection(
        center_s=float(s),
        center=p,
        tangent=t,
        axes=np.stack([nv, bv]),
        grid=vals.reshape(n, n).astype(np.float32),
        in_plane_spacing=float(spacing),
        extent=float(extent),
        n_outside=int((~inside).sum()),
    )


@dataclass(frozen=True)
class StraightenedVolume:
    """Stack of cross-sections at uniform arclength steps.

    The final section is clamped to the distal marker, so its step may
    be shorter than step_s; all other steps are exactly step_s.
    """

    sections: tuple
    step_s: float

    @property
    def arclengths(self) -> np.ndarray:
        return np.asarray([cs.center_s for cs in self.sections])

    def __len__(self) -> int:
        return len(self.sections)


def section_arclengths(proximal_s: float, distal_s: float, step_s: float):
    """proximal, proximal+step, ... plus the clamped distal endpoint."""
    if step_s <= 0:
        raise ParameterError("step_s must be positive")
    span = distal_s - proximal_s
    count = int(math.floor(span / step_s + 1e-9)) + 1
    ss = [proximal_s + k * step_s for k in range(count)]
    if ss[-1] < distal_s - 1e-9:
        ss.append(distal_s)
    ss[-1] = min(ss[-1], distal_s)
    return ss


def straighten(
    vol: Volume,
    c: Centerline,
    markers: SectionMarkers,
    step_s: float = DEFAULT_STEP_MM,
    extent: float = DEFAULT_EXTENT_MM,
    spacing: float = DEFAULT_PIXEL_MM,
) -> StraightenedVolume:
    """Cross-sections from the proximal to the distal marker."""
    sections = tuple(
        cross_section(vol, c, s, extent=extent, spacing=spacing)
        for s in section_arclengths(markers.proximal_s, markers.distal_s, step_s)
    )
    return StraightenedVolume(sections=sections, step_s=float(step_s))
