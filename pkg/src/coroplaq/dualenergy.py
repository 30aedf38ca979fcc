"""Dual-energy pairing, rigid registration, and DE-index tissue analysis.

Two acquisitions form a dual-energy pair when their tube voltages differ
by at least 30 kV and they share a frame of reference.  The pair is then
aligned with a rigid transform found by maximizing normalized cross
correlation over a multiresolution pyramid: a coarse translation grid at
4x downsampling followed by coordinate descent on all six parameters,
with the step halved until it reaches 0.05 mm / 0.1 degrees at full
resolution.  The search is fully deterministic: fixed evaluation order,
strictly-better acceptance.

The dual-energy index of a registered voxel pair is

    DEI = (hu_low - hu_high) / (hu_low + hu_high + 2000)

with both inputs clamped to [-1000, 3071] so the denominator cannot go
negative.  Composition assigns calcified from the low-kV value alone and
splits the remainder into lipid-rich and fibrotic by thresholding DEI.
The DEI formula and the default DEI threshold are configuration, not
validated clinical constants; both are surfaced as parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ParseError, UndecidablePairingError
from .plaque import PlaqueRegion
from .volume import Volume

KVP_MIN_DIFF = 30.0
DEI_CLAMP_LO = -1000.0
DEI_CLAMP_HI = 3071.0
DEI_STABILIZER = 2000.0
CALC_THRESHOLD_DEFAULT = 130.0
DEI_THRESHOLD_DEFAULT = 0.007
LOW_SCORE_WARNING = 0.2
COARSE_RANGE_MM = 10.0
COARSE_STEP_MM = 2.5
FINAL_STEP_MM = 0.05
FINAL_STEP_DEG = 0.1
MAX_SCORE_SAMPLES = 32768


# ---------------------------------------------------------------------------
# pairing


@dataclass(frozen=True)
class AcquisitionMeta:
    """Sidecar acquisition attributes used for pairing decisions."""

    kvp: float | None
    frame_of_reference: str
    series_time: str = ""

    @staticmethod
    def from_json_dict(d: dict) -> "AcquisitionMeta":
        kvp = d.get("kvp")
        return AcquisitionMeta(
            kvp=None if kvp is None else float(kvp),
            frame_of_reference=str(d.get("frame_of_reference", "")),
            series_time=str(d.get("series_time", "")),
        )


def load_acquisition_meta(path: str) -> AcquisitionMeta:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: cannot read acquisition sidecar: {exc}") from exc
    if not isinstance(d, dict):
        raise ParseError(f"{path}: sidecar must be a JSON object")
    return AcquisitionMeta.from_json_dict(d)


@dataclass(frozen=True)
class PairingDecision:
    paired: bool
    reason: str
    low_index: int | None = None   # which argument is the low-kV series
    high_index: int | None = None


def detect_de_pair(meta_a: AcquisitionMeta, meta_b: AcquisitionMeta) -> PairingDecision:
    """Pair iff kVp differs by >= 30 and the frame of reference matches."""
    if meta_a.kvp is None or meta_b.kvp is None:
        raise UndecidablePairingError("kvp missing; cannot decide dual-energy pairing")
    if meta_a.frame_of_reference != meta_b.frame_of_reference:
        return PairingDecision(False, "frame-of-reference identifiers differ")
    diff = abs(meta_a.kvp - meta_b.kvp)
    if diff < KVP_MIN_DIFF:
        return PairingDecision(
            False, f"kvp difference {diff:g} kV below {KVP_MIN_DIFF:g} kV"
        )
    low = 0 if meta_a.kvp < meta_b.kvp else 1
    return PairingDecision(True, "paired", low_index=low, high_index=1 - low)


# ---------------------------------------------------------------------------
# rigid transform


def _euler_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


@dataclass(frozen=True)
class RigidTransform:
    """Maps high-kV world coordinates into low-kV world coordinates:
    x_low = R(rotation) @ x_high + translation."""

    translation: np.ndarray        # (3,) mm
    rotation_euler_xyz: np.ndarray  # (3,) radians, applied as Rz @ Ry @ Rx
    score: float = 1.0             # similarity at the optimum, in [-1, 1]

    def __post_init__(self):
        t = np.asarray(self.translation, float).reshape(3).copy()
        r = np.asarray(self.rotation_euler_xyz, float).reshape(3).copy()
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation_euler_xyz", r)
        if not (-1.0 - 1e-9 <= self.score <= 1.0 + 1e-9):
            raise ParameterError(f"similarity score {self.score:g} outside [-1, 1]")

    @property
    def matrix(self) -> np.ndarray:
        return _euler_matrix(*self.rotation_euler_xyz)

    def apply(self, pts_high: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts_high, float)
        return pts @ self.matrix.T + self.translation

    def map_low_to_high(self, pts_low: np.ndarray) -> np.ndarray:
        # rigid inverse: R^T (x_low - t)
        pts = np.asarray(pts_low, float)
        return (pts - self.translation) @ self.matrix

    def to_json_dict(self) -> dict:
        return {
            "translation": [float(x) for x in self.translation],
            "rotation_euler_xyz": [float(x) for x in self.rotation_euler_xyz],
            "score": float(self.score),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "RigidTransform":
        return RigidTransform(
            translation=np.asarray(d["translation"], float),
            rotation_euler_xyz=np.asarray(d["rotation_euler_xyz"], float),
            score=float(d.get("score", 1.0)),
        )


@dataclass(frozen=True)
class DePair:
    """A registered dual-energy acquisition pair."""

    low_kv: Volume
    high_kv: Volume
    transform: RigidTransform
    warnings: tuple = ()

    @property
    def score(self) -> float:
        return self.transform.score


# ---------------------------------------------------------------------------
# registration


def _downsample(vol: Volume, factor: int) -> Volume:
    if factor == 1:
        return vol
    sm = ndimage.gaussian_filter(vol.data, factor / 2.0, mode="nearest")
    data = np.ascontiguousarray(sm[::factor, ::factor, ::factor])
    return Volume(
        data=data,
        spacing=tuple(s * factor for s in vol.spacing),
        origin=vol.origin,
    )


def _sample_points(vol: Volume, cap: int = MAX_SCORE_SAMPLES):
    """Deterministic voxel-center subsample and its HU values."""
    n = int(np.prod(vol.shape))
    stride = max(1, math.ceil((n / cap) ** (1.0 / 3.0)))
    ii = np.arange(0, vol.shape[0], stride)
    jj = np.arange(0, vol.shape[1], stride)
    kk = np.arange(0, vol.shape[2], stride)
    gi, gj, gk = np.meshgrid(ii, jj, kk, indexing="ij")
    idx = np.column_stack([gi.ravel(), gj.ravel(), gk.ravel()])
    pts = np.asarray(vol.origin) + idx * np.asarray(vol.spacing)
    vals = vol.data[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)
    return pts, vals


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 10:
        return -1.0
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(da @ db) / (sa * sb)


def _centered_transform(params: np.ndarray, center: np.ndarray, score: float) -> RigidTransform:
    """Search parameterization rotates about the low-volume center, which
    decouples rotation from translation; fold the center back into the
    plain matrix form x_low = R x_high + t."""
    rot = _euler_matrix(*params[3:])
    t = center + params[:3] - rot @ center
    return RigidTransform(t, params[3:], score=score)


def _score(params: np.ndarray, pts_low, vals_low, high: Volume, center) -> float:
    tr = _centered_transform(params, center, score=0.0)
    pts_high = tr.map_low_to_high(pts_low)
    inside = high.contains(pts_high)
    if int(inside.sum()) < 10:
        return -1.0
    vals_high = high.sample(pts_high[inside], outside="fill")
    return _ncc(vals_low[inside], np.asarray(vals_high, np.float64))


def _coordinate_descent(params, score, step_t, step_r, stop_t, stop_r, evaluate):
    """Powell-style per-axis search; steps halve when a full pass stalls."""
    while step_t > stop_t * 0.5 or step_r > stop_r * 0.5:
        improved = False
        for axis in range(6):
            step = step_t if axis < 3 else step_r
            for sign in (1.0, -1.0):
                cand = params.copy()
                cand[axis] += sign * step
                sc = evaluate(cand)
                if sc > score:
                    params, score = cand, sc
                    improved = True
        if not improved:
            step_t *= 0.5
            step_r *= 0.5
    return params, score


def register_rigid(low: Volume, high: Volume) -> DePair:
    """Align ``high`` onto ``low`` by maximizing normalized cross correlation.

    Returns the pair with the optimal transform; a similarity below 0.2
    attaches a registration-failure warning instead of raising, so the
    caller can still inspect or override the result.
    """
    levels = [
        (4, 2.5, math.radians(2.0), 0.5, math.radians(0.5)),
        (2, 0.5, math.radians(0.5), 0.2, math.radians(0.25)),
        (1, 0.2, math.radians(0.25), FINAL_STEP_MM, math.radians(FINAL_STEP_DEG)),
    ]
    center = np.asarray(low.origin) + (np.asarray(low.shape) - 1) * np.asarray(
        low.spacing
    ) / 2.0
    params = np.zeros(6)
    score = -1.0
    for factor, step_t, step_r, stop_t, stop_r in levels:
        low_f = _downsample(low, factor)
        high_f = _downsample(high, factor)
        pts, vals = _sample_points(low_f)

        def evaluate(p, _pts=pts, _vals=vals, _high=high_f):
            return _score(p, _pts, _vals, _high, center)

        if factor == levels[0][0]:
            # coarse translation grid, rotations fixed at zero
            offs = np.arange(-COARSE_RANGE_MM, COARSE_RANGE_MM + 1e-9, COARSE_STEP_MM)
            for tx in offs:
                for ty in offs:
                    for tz in offs:
                        cand = np.array([tx, ty, tz, 0.0, 0.0, 0.0])
                        sc = evaluate(cand)
                        if sc > score:
                            params, score = cand, sc
        else:
            score = evaluate(params)
        params, score = _coordinate_descent(
            params, score, step_t, step_r, stop_t, stop_r, evaluate
        )
    transform = _centered_transform(params, center, score=score)
    warnings = ()
    if score < LOW_SCORE_WARNING:
        warnings = (
            f"registration similarity {score:.3f} below {LOW_SCORE_WARNING:g}; "
            "alignment is unreliable",
        )
    return DePair(low_kv=low, high_kv=high, transform=transform, warnings=warnings)


# ---------------------------------------------------------------------------
# DE index


def de_index(hu_low, hu_high):
    """Dual-energy index of a registered voxel pair; accepts scalars or
    arrays.  Inputs are clamped to [-1000, 3071]; the denominator is zero
    only when both land on the lower clamp, which is rejected."""
    lo = np.clip(np.asarray(hu_low, np.float64), DEI_CLAMP_LO, DEI_CLAMP_HI)
    hi = np.clip(np.asarray(hu_high, np.float64), DEI_CLAMP_LO, DEI_CLAMP_HI)
    den = lo + hi + DEI_STABILIZER
    if np.any(den == 0.0):
        raise ParameterError("DE index undefined: hu_low + hu_high + 2000 is zero")
    out = (lo - hi) / den
    return float(out) if np.isscalar(hu_low) and np.isscalar(hu_high) else out


@dataclass(frozen=True)
class DeIndexField:
    """Per-voxel DE index over a region, on the low-kV grid."""

    indices: np.ndarray   # (n, 3) int64 voxel indices into low_kv
    values: np.ndarray    # (n,) float64, each in (-1, 1)
    excluded: int         # region voxels that mapped outside high_kv

    def __post_init__(self):
        idx = np.ascontiguousarray(np.asarray(self.indices, np.int64).reshape(-1, 3))
        val = np.asarray(self.values, np.float64).reshape(-1)
        if idx.shape[0] != val.shape[0]:
            raise ParameterError("index/value length mismatch")
        if val.size and (not np.isfinite(val).all() or np.abs(val).max() >= 1.0):
            raise ParameterError("DE index values must lie in (-1, 1)")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)


def _region_pairs(region: PlaqueRegion, pair: DePair):
    """Low-kV HU, mapped high-kV HU, and the in-domain mask for a region."""
    idx = region.indices
    if idx.shape[0] == 0:
        return (
            np.empty(0, np.float64),
            np.empty(0, np.float64),
            np.zeros(0, bool),
        )
    low = pair.low_kv
    pts_low = np.asarray(low.origin) + idx * np.asarray(low.spacing)
    pts_high = pair.transform.map_low_to_high(pts_low)
    inside = pair.high_kv.contains(pts_high)
    hu_low = low.data[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)
    hu_high = np.full(idx.shape[0], np.nan)
    if inside.any():
        hu_high[inside] = pair.high_kv.sample(pts_high[inside], outside="fill")
    return hu_low, hu_high, inside


def de_index_field(region: PlaqueRegion, pair: DePair) -> DeIndexField:
    hu_low, hu_high, inside = _region_pairs(region, pair)
    vals = de_index(hu_low[inside], hu_high[inside])
    return DeIndexField(
        indices=region.indices[inside],
        values=np.asarray(vals, np.float64),
        excluded=int(region.indices.shape[0] - int(inside.sum())),
    )


@dataclass(frozen=True)
class DeComposition:
    calcified: int
    lipid_rich: int
    fibrotic: int
    excluded: int
    voxel_volume_mm3: float
    calc_threshold: float
    dei_threshold: float

    @property
    def counted(self) -> int:
        return self.calcified + self.lipid_rich + self.fibrotic

    def to_json_dict(self) -> dict:
        return {
            "counts": {
                "calcified": self.calcified,
                "lipid_rich": self.lipid_rich,
                "fibrotic": self.fibrotic,
            },
            "excluded": self.excluded,
            "volumes_mm3": {
                "calcified": self.calcified * self.voxel_volume_mm3,
                "lipid_rich": self.lipid_rich * self.voxel_volume_mm3,
                "fibrotic": self.fibrotic * self.voxel_volume_mm3,
            },
            "calc_threshold": self.calc_threshold,
            "dei_threshold": self.dei_threshold,
        }


def de_composition(
    region: PlaqueRegion,
    pair: DePair,
    calc_threshold: float = CALC_THRESHOLD_DEFAULT,
    dei_threshold: float = DEI_THRESHOLD_DEFAULT,
) -> DeComposition:
    """Classify region voxels: calcified from the low-kV value alone,
    the rest lipid-rich vs fibrotic by DE index."""
    hu_low, hu_high, inside = _region_pairs(region, pair)
    lo = hu_low[inside]
    hi = hu_high[inside]
    calc = lo >= calc_threshold
    dei = de_index(lo[~calc], hi[~calc]) if (~calc).any() else np.empty(0)
    lipid = int((np.asarray(dei) < dei_threshold).sum())
    return DeComposition(
        calcified=int(calc.sum()),
        lipid_rich=lipid,
        fibrotic=int((~calc).sum()) - lipid,
        excluded=int(region.indices.shape[0] - int(inside.sum())),
        voxel_volume_mm3=region.voxel_volume_mm3,
        calc_threshold=float(calc_threshold),
        dei_threshold=float(dei_threshold),
    )
