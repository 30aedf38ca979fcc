"""Analytic digital phantoms with exact ground truth.

Every phantom is defined by an exact world-space material function and
rasterized with partial-volume handling: voxels near material boundaries
get the mean HU of a 3x3x3 (configurable) subvoxel grid.  Interior voxels
are classified once at their center; a voxel participates in supersampling
when any of its 6-neighbors classifies differently (dilated by one voxel),
which is exact for the smooth, voxel-scale-or-larger geometry used here.

Phantom volumes are integer-valued (rounded) so that write/load round
trips are bit-exact.  Geometry parameters and the returned truth records
are in world mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import PhantomSpecError
from .volume import INT16_MAX, INT16_MIN, Volume

_AXES = {"x": 0, "y": 1, "z": 2}


def default_origin(shape, spacing) -> tuple[float, float, float]:
    """Origin that centers the voxel grid on world (0, 0, 0)."""
    return tuple(-(n - 1) * s / 2.0 for n, s in zip(shape, spacing))


def _check_geometry(shape, spacing, max_radius, axis=2):
    half = [(n - 1) * s / 2.0 for n, s in zip(shape, spacing)]
    perp = [half[a] for a in range(3) if a != axis]
    if max_radius <= 0:
        raise PhantomSpecError("radii must be positive")
    if max_radius > min(perp):
        raise PhantomSpecError(
            f"radius {max_radius} mm exceeds the perpendicular half-extent "
            f"{min(perp):.2f} mm"
        )


def _rasterize(classify, shape, spacing, origin, supersample, noise_sigma, seed):
    """Evaluate a world-space HU function on a voxel grid with partial volume."""
    nx, ny, nz = shape
    sx, sy, sz = spacing
    xs = origin[0] + sx * np.arange(nx)
    ys = origin[1] + sy * np.arange(ny)
    zs = origin[2] + sz * np.arange(nz)

    hu = np.empty(shape, np.float64)
    slab = max(1, int(4e6 // (nx * ny)))
    for z0 in range(0, nz, slab):
        z1 = min(z0 + slab, nz)
        gx, gy, gz = np.meshgrid(xs, ys, zs[z0:z1], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        hu[:, :, z0:z1] = classify(pts).reshape(nx, ny, z1 - z0)

    if supersample > 1:
        boundary = np.zeros(shape, bool)
        for ax in range(3):
            d = np.abs(np.diff(hu, axis=ax)) > 0
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            boundary[tuple(lo)] |= d
            boundary[tuple(hi)] |= d
        boundary = ndimage.maximum_filter(boundary, size=3)

        idx = np.argwhere(boundary)
        if idx.size:
            # cell-centered subgrid offsets in voxel units
            offs1d = (2.0 * np.arange(supersample) + 1.0) / (2.0 * supersample) - 0.5
            offsets = np.array(
                [(a, b, c) for a in offs1d for b in offs1d for c in offs1d]
            ) * np.asarray(spacing)
            centers = np.stack(
                [xs[idx[:, 0]], ys[idx[:, 1]], zs[idx[:, 2]]], axis=1
            )
            chunk = 200_000
            means = np.empty(len(idx), np.float64)
            for c0 in range(0, len(idx), chunk):
                c1 = min(c0 + chunk, len(idx))
                acc = np.zeros(c1 - c0, np.float64)
                for off in offsets:
                    acc += classify(centers[c0:c1] + off)
                means[c0:c1] = acc / len(offsets)
            hu[idx[:, 0], idx[:, 1], idx[:, 2]] = means

    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        hu = hu + rng.normal(0.0, noise_sigma, size=shape)

    data = np.clip(np.rint(hu), INT16_MIN, INT16_MAX).astype(np.float32)
    return Volume(data=data, spacing=tuple(spacing), origin=tuple(origin))


@dataclass(frozen=True)
class StraightTubePhantom:
    volume: Volume
    p0: np.ndarray          # axis start, world mm (first voxel-center plane)
    p1: np.ndarray          # axis end
    radius: float
    hu_lumen: float
    hu_background: float

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def direction(self) -> np.ndarray:
        return (self.p1 - self.p0) / self.length

    def polyline(self, step: float = 0.25) -> np.ndarray:
        n = max(2, int(round(self.length / step)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        return self.p0[None, :] + t * (self.p1 - self.p0)[None, :]

    def distance_to_axis(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, np.float64))
        d = self.direction
        rel = pts - self.p0
        along = rel @ d
        perp = rel - along[:, None] * d[None, :]
        return np.linalg.norm(perp, axis=1)


def straight_tube(
    shape=(256, 256, 256),
    spacing=(0.4, 0.4, 0.4),
    axis: str = "z",
    radius: float = 2.0,
    hu_lumen: float = 350.0,
    hu_background: float = -50.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    supersample: int = 3,
) -> StraightTubePhantom:
    """Straight cylinder through the volume center, spanning the full axis."""
    ax = _AXES[axis]
    _check_geometry(shape, spacing, radius, axis=ax)
    origin = default_origin(shape, spacing)
    perp = [a for a in range(3) if a != ax]

    def classify(pts):
        r = np.hypot(pts[:, perp[0]], pts[:, perp[1]])
        return np.where(r <= radius, hu_lumen, hu_background)

    vol = _rasterize(classify, shape, spacing, origin, supersample, noise_sigma, seed)
    p0 = np.zeros(3)
    p1 = np.zeros(3)
    p0[ax] = origin[ax]
    p1[ax] = origin[ax] + (shape[ax] - 1) * spacing[ax]
    return StraightTubePhantom(
        volume=vol, p0=p0, p1=p1, radius=radius,
        hu_lumen=hu_lumen, hu_background=hu_background,
    )


@dataclass(frozen=True)
class CurvedTubePhantom:
    volume: Volume
    arc_center: np.ndarray   # torus center, world mm (arc lies in z=0 plane)
    bend_radius: float
    theta_max: float         # arc spans theta in [0, theta_max]
    radius: float
    hu_lumen: float
    hu_background: float

    @property
    def length(self) -> float:
        return self.bend_radius * self.theta_max

    def polyline(self, step: float = 0.25) -> np.ndarray:
        n = max(2, int(round(self.length / step)) + 1)
        th = np.linspace(0.0, self.theta_max, n)
        pts = np.zeros((n, 3))
        pts[:, 0] = self.arc_center[0] + self.bend_radius * np.cos(th)
        pts[:, 1] = self.arc_center[1] + self.bend_radius * np.sin(th)
        return pts

    def distance_to_axis(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, np.float64))
        dx = pts[:, 0] - self.arc_center[0]
        dy = pts[:, 1] - self.arc_center[1]
        th = np.clip(np.arctan2(dy, dx), 0.0, self.theta_max)
        nearest = np.stack(
            [
                self.arc_center[0] + self.bend_radius * np.cos(th),
                self.arc_center[1] + self.bend_radius * np.sin(th),
                np.zeros(len(pts)),
            ],
            axis=1,
        )
        return np.linalg.norm(pts - nearest, axis=1)


def curved_tube(
    shape=(256, 256, 256),
    spacing=(0.4, 0.4, 0.4),
    bend_radius: float = 20.0,
    radius: float = 2.0,
    hu_lumen: float = 350.0,
    hu_background: float = -50.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    supersample: int = 3,
) -> CurvedTubePhantom:
    """Quarter-torus arc in the z=0 plane, arc midpoint at the world origin."""
    if radius <= 0 or bend_radius <= radius:
        raise PhantomSpecError("need 0 < tube radius < bend radius")
    origin = default_origin(shape, spacing)
    theta_max = math.pi / 2.0
    # place the torus center so the arc midpoint (theta = pi/4) sits at 0
    c = np.array([-bend_radius * math.sqrt(0.5), -bend_radius * math.sqrt(0.5), 0.0])
    half = [(n - 1) * s / 2.0 for n, s in zip(shape, spacing)]
    ends = [c + bend_radius * np.array([math.cos(t), math.sin(t), 0.0])
            for t in (0.0, math.pi / 4.0, theta_max)]
    for e in ends:
        if any(abs(e[i]) + radius > half[i] for i in (0, 1)) or radius > half[2]:
            raise PhantomSpecError("curved tube does not fit inside the volume")

    def classify(pts):
        dx = pts[:, 0] - c[0]
        dy = pts[:, 1] - c[1]
        th = np.arctan2(dy, dx)
        dxy = np.hypot(dx, dy)
        d2 = (dxy - bend_radius) ** 2 + pts[:, 2] ** 2
        inside = (th >= 0.0) & (th <= theta_max) & (d2 <= radius * radius)
        return np.where(inside, hu_lumen, hu_background)

    vol = _rasterize(classify, shape, spacing, origin, supersample, noise_sigma, seed)
    return CurvedTubePhantom(
        volume=vol, arc_center=c, bend_radius=bend_radius, theta_max=theta_max,
        radius=radius, hu_lumen=hu_lumen, hu_background=hu_background,
    )


@dataclass(frozen=True)
class StenosedTubePhantom:
    volume: Volume
    p0: np.ndarray
    p1: np.ndarray
    radius: float            # nominal (healthy) lumen radius
    area_reduction: float    # fractional area loss at the throat
    stenosis_center: float   # world coordinate along the axis
    stenosis_length: float
    hu_lumen: float
    hu_background: float
    axis: int

    def radius_at(self, coord) -> np.ndarray:
        """Lumen radius as a function of the world coordinate along the axis."""
        coord = np.asarray(coord, np.float64)
        half = self.stenosis_length / 2.0
        u = (coord - self.stenosis_center) / half
        w = np.where(np.abs(u) <= 1.0, np.cos(np.pi * u / 2.0) ** 2, 0.0)
        return self.radius * np.sqrt(1.0 - self.area_reduction * w)

    @property
    def min_lumen_area(self) -> float:
        return math.pi * self.radius**2 * (1.0 - self.area_reduction)


def stenosed_tube(
    shape=(256, 256, 256),
    spacing=(0.4, 0.4, 0.4),
    radius: float = 2.0,
    area_reduction: float = 0.5,
    stenosis_length: float = 10.0,
    hu_lumen: float = 350.0,
    hu_background: float = -50.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    supersample: int = 3,
) -> StenosedTubePhantom:
    """Straight tube (z axis) with a smooth area stenosis at the volume center."""
    if not 0.0 <= area_reduction < 1.0:
        raise PhantomSpecError("area_reduction must be in [0, 1)")
    if stenosis_length <= 0:
        raise PhantomSpecError("stenosis_length must be positive")
    _check_geometry(shape, spacing, radius, axis=2)
    origin = default_origin(shape, spacing)
    half = stenosis_length / 2.0

    def classify(pts):
        u = pts[:, 2] / half
        w = np.where(np.abs(u) <= 1.0, np.cos(np.pi * u / 2.0) ** 2, 0.0)
        r_here = radius * np.sqrt(1.0 - area_reduction * w)
        r = np.hypot(pts[:, 0], pts[:, 1])
        return np.where(r <= r_here, hu_lumen, hu_background)

    vol = _rasterize(classify, shape, spacing, origin, supersample, noise_sigma, seed)
    p0 = np.array([0.0, 0.0, origin[2]])
    p1 = np.array([0.0, 0.0, origin[2] + (shape[2] - 1) * spacing[2]])
    return StenosedTubePhantom(
        volume=vol, p0=p0, p1=p1, radius=radius, area_reduction=area_reduction,
        stenosis_center=0.0, stenosis_length=stenosis_length,
        hu_lumen=hu_lumen, hu_background=hu_background, axis=2,
    )


@dataclass(frozen=True)
class LayeredTubePhantom:
    volume: Volume
    p0: np.ndarray
    p1: np.ndarray
    layers: tuple            # ((radius, hu), ...) ascending radius; [0] is the lumen
    hu_background: float
    segment: tuple | None    # (z0, z1) world range of the outer layers, None = full

    @property
    def lumen_radius(self) -> float:
        return self.layers[0][0]

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    def polyline(self, step: float = 0.25) -> np.ndarray:
        n = max(2, int(round(self.length / step)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        return self.p0[None, :] + t * (self.p1 - self.p0)[None, :]

    def shell_volume(self, k: int) -> float:
        """Analytic volume of layer k (mm^3) over the layered segment."""
        if self.segment is None:
            raise PhantomSpecError("shell_volume needs a bounded segment")
        length = self.segment[1] - self.segment[0]
        r_out = self.layers[k][0]
        r_in = self.layers[k - 1][0] if k > 0 else 0.0
        return math.pi * (r_out**2 - r_in**2) * length


def layered_tube(
    shape=(256, 256, 256),
    spacing=(0.4, 0.4, 0.4),
    layers=((2.0, 350.0), (3.0, 800.0)),
    hu_background: float = -50.0,
    segment: tuple | None = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
    supersample: int = 3,
) -> LayeredTubePhantom:
    """Straight z-axis tube with concentric HU layers.

    Layer 0 (the lumen) always spans the full tube length; outer layers are
    restricted to the world-z ``segment`` when one is given, with plain
    background outside it.
    """
    layers = tuple((float(r), float(h)) for r, h in layers)
    if len(layers) < 1:
        raise PhantomSpecError("need at least one layer")
    radii = [r for r, _ in layers]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise PhantomSpecError("layer radii must be strictly increasing")
    _check_geometry(shape, spacing, radii[-1], axis=2)
    origin = default_origin(shape, spacing)
    if segment is not None:
        z_lo, z_hi = segment
        if not z_lo < z_hi:
            raise PhantomSpecError("segment must be a nonempty (z0, z1) range")

    def classify(pts):
        r = np.hypot(pts[:, 0], pts[:, 1])
        hu = np.full(len(pts), hu_background)
        in_seg = (
            np.ones(len(pts), bool)
            if segment is None
            else (pts[:, 2] >= segment[0]) & (pts[:, 2] <= segment[1])
        )
        for k in range(len(layers) - 1, 0, -1):
            sel = in_seg & (r <= layers[k][0])
            hu[sel] = layers[k][1]
        hu[r <= layers[0][0]] = layers[0][1]
        return hu

    vol = _rasterize(classify, shape, spacing, origin, supersample, noise_sigma, seed)
    p0 = np.array([0.0, 0.0, origin[2]])
    p1 = np.array([0.0, 0.0, origin[2] + (shape[2] - 1) * spacing[2]])
    return LayeredTubePhantom(
        volume=vol, p0=p0, p1=p1, layers=layers,
        hu_background=hu_background, segment=segment,
    )


def fat_collar_tube(
    shape=(256, 256, 256),
    spacing=(0.4, 0.4, 0.4),
    lumen_radius: float = 2.0,
    wall_radius: float = 3.0,
    fat_radius: float = 9.0,
    hu_lumen: float = 350.0,
    hu_wall: float = 60.0,
    hu_fat: float = -100.0,
    hu_background: float = -50.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    supersample: int = 3,
) -> LayeredTubePhantom:
    """Tube with a vessel wall and a surrounding fat collar, full length."""
    return layered_tube(
        shape=shape,
        spacing=spacing,
        layers=((lumen_radius, hu_lumen), (wall_radius, hu_wall), (fat_radius, hu_fat)),
        hu_background=hu_background,
        noise_sigma=noise_sigma,
        seed=seed,
        supersample=supersample,
    )


@dataclass(frozen=True)
class DePairPhantom:
    low: Volume
    high: Volume
    layers_low: tuple
    layers_high: tuple
    hu_background_low: float
    hu_background_high: float
    true_shift: np.ndarray
    expected_translation: np.ndarray  # what register_rigid should report

    @property
    def lumen_radius(self) -> float:
        return self.layers_low[0][0]


def de_pair(
    shape=(128, 128, 128),
    spacing=(0.4, 0.4, 0.4),
    layers=(
        # (radius mm, hu at low kVp, hu at high kVp)
        (2.0, 400.0, 300.0),    # iodine-filled lumen: strong energy dependence
        (3.0, 600.0, 550.0),    # calcified ring: weaker energy dependence
    ),
    hu_background=(-60.0, -55.0),
    shift=(0.0, 0.0, 0.0),
    noise_sigma: float = 0.0,
    seed: int = 0,
    supersample: int = 3,
) -> DePairPhantom:
    """Low/high kVp volume pair of the same layered tube.

    The high volume's content is displaced by ``shift`` (world mm): a
    feature at x in the low volume appears at x + shift in the high one.
    Aligning the pair therefore needs translation -shift, exposed as
    ``expected_translation``.
    """
    shift = np.asarray(shift, np.float64)
    lay_low = tuple((r, lo) for r, lo, _ in layers)
    lay_high = tuple((r, hi) for r, _, hi in layers)
    low = layered_tube(
        shape=shape, spacing=spacing, layers=lay_low,
        hu_background=hu_background[0],
        noise_sigma=noise_sigma, seed=seed, supersample=supersample,
    )

    radii = [r for r, _ in lay_high]
    origin = default_origin(shape, spacing)

    def classify_high(pts):
        q = pts - shift[None, :]
        r = np.hypot(q[:, 0], q[:, 1])
        hu = np.full(len(pts), hu_background[1])
        for k in range(len(lay_high) - 1, -1, -1):
            hu[r <= radii[k]] = lay_high[k][1]
        return hu

    high = _rasterize(
        classify_high, shape, spacing, origin, supersample, noise_sigma, seed + 1
    )
    return DePairPhantom(
        low=low.volume,
        high=high,
        layers_low=lay_low,
        layers_high=lay_high,
        hu_background_low=hu_background[0],
        hu_background_high=hu_background[1],
        true_shift=shift,
        expected_translation=-shift,
    )


@dataclass(frozen=True)
class NoiseFieldPhantom:
    volume: Volume
    correlation_mm: float
    amplitude_hu: float
    mean_hu: float

    def shifted(self, shift) -> Volume:
        """Same field displaced by ``shift`` world mm (origin trick, exact)."""
        v = self.volume
        return Volume(
            data=v.data,
            spacing=v.spacing,
            origin=tuple(np.asarray(v.origin) + np.asarray(shift, np.float64)),
        )


def smooth_noise(
    shape=(64, 64, 64),
    spacing=(0.8, 0.8, 0.8),
    correlation_mm: float = 2.0,
    amplitude_hu: float = 150.0,
    mean_hu: float = 0.0,
    seed: int = 0,
) -> NoiseFieldPhantom:
    """Band-limited random field with no spatial symmetry.

    Registration validation needs content whose rigid alignment is unique;
    tubes are rotationally symmetric about their axis, so shifts of a tube
    are only recoverable up to a twist.  A correlated noise field has a
    single sharp correlation peak in all six degrees of freedom.
    """
    if correlation_mm <= 0 or amplitude_hu <= 0:
        raise PhantomSpecError("correlation_mm and amplitude_hu must be positive")
    rng = np.random.default_rng(seed)
    field = rng.normal(0.0, 1.0, size=shape)
    sig_vox = [correlation_mm / s for s in spacing]
    field = ndimage.gaussian_filter(field, sig_vox, mode="wrap")
    field /= field.std()
    hu = mean_hu + amplitude_hu * field
    data = np.clip(np.rint(hu), INT16_MIN, INT16_MAX).astype(np.float32)
    vol = Volume(
        data=data, spacing=tuple(spacing), origin=default_origin(shape, spacing)
    )
    return NoiseFieldPhantom(
        volume=vol,
        correlation_mm=float(correlation_mm),
        amplitude_hu=float(amplitude_hu),
        mean_hu=float(mean_hu),
    )


PHANTOM_KINDS = {
    "straight_tube": straight_tube,
    "curved_tube": curved_tube,
    "stenosed_tube": stenosed_tube,
    "plaque_tube": layered_tube,
    "fat_collar_tube": fat_collar_tube,
    "de_pair": de_pair,
    "smooth_noise": smooth_noise,
}


def make_phantom(spec: dict):
    """Build a phantom from a JSON-style spec dict: {"kind": ..., params...}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in PHANTOM_KINDS:
        raise PhantomSpecError(
            f"unknown phantom kind {kind!r}; expected one of {sorted(PHANTOM_KINDS)}"
        )
    for key in ("shape", "spacing", "segment", "shift", "hu_background", "layers"):
        if key in spec and isinstance(spec[key], list):
            spec[key] = tuple(
                tuple(x) if isinstance(x, list) else x for x in spec[key]
            )
    try:
        return PHANTOM_KINDS[kind](**spec)
    except TypeError as exc:
        raise PhantomSpecError(f"bad parameters for {kind}: {exc}") from None
