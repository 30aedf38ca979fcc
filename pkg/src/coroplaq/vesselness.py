"""Multi-scale Hessian tubularity (bright tube on dark background).

Scales are nominal tube radii in mm.  Each scale is converted to a
Gaussian sigma (radius / sqrt(2), the classic blob-detection optimum),
the volume is smoothed, and the Hessian eigenvalues ranked by magnitude
feed the three-ratio response:

    (1 - exp(-Ra^2 / 2a^2)) * exp(-Rb^2 / 2b^2) * (1 - exp(-S^2 / 2c^2))

with Ra = |l2|/|l3| (plate rejection), Rb = |l1|/sqrt(|l2*l3|) (blob
rejection), and S the gamma-normalized Frobenius norm (Hessian times
sigma^2) so that responses are comparable across scales.  c is half the
maximum normalized S over the whole volume and all scales; this single
contrast reference is what lets the scale whose nominal radius matches
the tube win the max.  Ra and Rb are scale-free ratios, so only the
S term needs the normalization.

Voxels whose S^2 falls at or below skip_rel^2 of that global maximum
are defined to respond exactly 0 (their S term alone is below 4e-4 for
the default skip_rel); this keeps the hot path cheap on the mostly
uniform volumes we process and is applied identically by both backends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import ParameterError
from .volume import Volume

SCALES_MM = (0.8, 1.2, 1.6, 2.4, 3.2)
ALPHA = 0.5
BETA = 0.5
SKIP_REL = 0.02
SIGMA_PER_RADIUS = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class VesselnessResult:
    """Per-voxel response in [0, 1] plus the scale (mm) that produced it."""

    response: np.ndarray    # float32, same grid as the source volume
    best_scale: np.ndarray  # float32 mm; 0 where the response is 0
    scales: tuple
    spacing: tuple
    origin: tuple

    def sample(self, pts) -> np.ndarray:
        """Trilinear response values at world points, clamped at the border."""
        pts = np.atleast_2d(np.asarray(pts, np.float64))
        ci = (pts - np.asarray(self.origin)) / np.asarray(self.spacing)
        return _kernels.trilinear_many(
            self.response,
            np.ascontiguousarray(ci[:, 0]),
            np.ascontiguousarray(ci[:, 1]),
            np.ascontiguousarray(ci[:, 2]),
        )


def vesselness(
    vol: Volume,
    scales=SCALES_MM,
    alpha: float = ALPHA,
    beta: float = BETA,
    skip_rel: float = SKIP_REL,
) -> VesselnessResult:
    """Max-over-scales tubularity response, normalized to [0, 1]."""
    scales = tuple(float(s) for s in scales)
    if not scales:
        raise ParameterError("need at least one vesselness scale")
    if any(s < max(vol.spacing) - 1e-12 for s in scales):
        raise ParameterError(
            f"vesselness scales {scales} must be at least the voxel "
            f"spacing {max(vol.spacing):g} mm"
        )
    sx, sy, sz = vol.spacing

    # Pass 1: smooth once per scale, keep the fields, find the global
    # normalized Frobenius reference.  Memory cost is two float32 fields
    # per scale, well worth skipping a second smoothing pass.
    smoothed = []
    frob2s = []
    f2max_norm = 0.0
    for scale in scales:
        sig = scale * SIGMA_PER_RADIUS
        sm = ndimage.gaussian_filter(
            vol.data, (sig / sx, sig / sy, sig / sz), truncate=3.0, mode="nearest"
        )
        frob2, f2max = _kernels.frob2_field(sm, sx, sy, sz)
        smoothed.append(sm)
        frob2s.append(frob2)
        f2max_norm = max(f2max_norm, f2max * sig**4)

    best = np.zeros(vol.shape, np.float32)
    best_scale = np.zeros(vol.shape, np.float32)
    if f2max_norm > 0.0:
        c_norm = 0.5 * math.sqrt(f2max_norm)
        skip2_norm = skip_rel * skip_rel * f2max_norm
        for scale, sm, frob2 in zip(scales, smoothed, frob2s):
            sig = scale * SIGMA_PER_RADIUS
            # The kernel works in raw (unnormalized) Hessian units, so
            # fold the sigma^2 normalization into c and the skip level.
            resp = _kernels.frangi_from_frob2(
                sm, frob2, sx, sy, sz, alpha, beta,
                c_norm / sig**2, skip2_norm / sig**4,
            )
            upd = resp > best
            best = np.where(upd, resp, best)
            best_scale = np.where(upd, np.float32(scale), best_scale)
        peak = float(best.max())
        if peak > 0.0:
            best = best / np.float32(peak)
    return VesselnessResult(
        response=best,
        best_scale=best_scale,
        scales=scales,
        spacing=vol.spacing,
        origin=vol.origin,
    )
