"""Each phantom's rasterization must agree with its analytic description:
plateau values away from boundaries, partial-volume blending only in a
one-voxel band at interfaces, and exact copies under origin shifts.
"""

from __future__ import annotations

import numpy as np
import pytest

from coroplaq import phantoms
from coroplaq.errors import PhantomSpecError


def _dist_to_z_axis(vol):
    idx = np.indices(vol.shape, dtype=np.float64)
    pts = np.stack(
        [
            vol.origin[0] + idx[0] * vol.spacing[0],
            vol.origin[1] + idx[1] * vol.spacing[1],
            vol.origin[2] + idx[2] * vol.spacing[2],
        ]
    )
    return np.hypot(pts[0], pts[1])


def test_straight_tube_plateaus_and_boundary_band():
    ph = phantoms.straight_tube(shape=(48, 48, 32), spacing=(0.5, 0.5, 0.5))
    r = _dist_to_z_axis(ph.volume)
    margin = max(ph.volume.spacing)  # partial volume lives within one voxel
    inside = r < ph.radius - margin
    outside = r > ph.radius + margin
    assert np.all(ph.volume.data[inside] == ph.hu_lumen)
    assert np.all(ph.volume.data[outside] == ph.hu_background)
    band = ~inside & ~outside
    assert ph.volume.data[band].min() >= ph.hu_background
    assert ph.volume.data[band].max() <= ph.hu_lumen


def test_straight_tube_axis_selection():
    ph = phantoms.straight_tube(shape=(32, 32, 32), spacing=(0.5, 0.5, 0.5), axis="x")
    d = np.asarray(ph.p1) - np.asarray(ph.p0)
    assert abs(d[0]) > 0 and d[1] == d[2] == 0


def test_layered_tube_radial_profile():
    ph = phantoms.layered_tube(
        shape=(64, 64, 32),
        spacing=(0.4, 0.4, 0.4),
        layers=((1.6, 350.0), (2.6, 60.0)),
        hu_background=-80.0,
    )
    vol = ph.volume
    r = _dist_to_z_axis(vol)
    margin = 0.4
    assert np.all(vol.data[r < 1.6 - margin] == 350.0)
    ring = (r > 1.6 + margin) & (r < 2.6 - margin)
    assert np.all(vol.data[ring] == 60.0)
    assert np.all(vol.data[r > 2.6 + margin] == -80.0)
    assert ph.lumen_radius == 1.6


def test_layered_tube_shell_volume_analytic():
    ph = phantoms.layered_tube(
        shape=(64, 64, 32),
        spacing=(0.4, 0.4, 0.4),
        layers=((1.6, 350.0), (2.6, 60.0)),
        segment=(-4.0, 4.0),
    )
    want = np.pi * (2.6**2 - 1.6**2) * 8.0
    assert ph.shell_volume(1) == pytest.approx(want, rel=1e-12)
    assert ph.shell_volume(0) == pytest.approx(np.pi * 1.6**2 * 8.0, rel=1e-12)


def test_stenosed_tube_min_area():
    ph = phantoms.stenosed_tube(
        shape=(48, 48, 64), spacing=(0.4, 0.4, 0.4), radius=2.0, area_reduction=0.5
    )
    assert ph.min_lumen_area == pytest.approx(0.5 * np.pi * 4.0)
    mid_z = 0.5 * (ph.p0[2] + ph.p1[2])
    assert ph.radius_at(mid_z) == pytest.approx(2.0 * np.sqrt(0.5))
    far_z = ph.p0[2]
    assert ph.radius_at(far_z) == pytest.approx(2.0)


def test_curved_tube_distance_function_matches_raster():
    ph = phantoms.curved_tube(
        shape=(64, 64, 32), spacing=(0.5, 0.5, 0.5), bend_radius=10.0, radius=1.5
    )
    vol = ph.volume
    idx = np.indices(vol.shape, dtype=np.float64)
    pts = np.stack(
        [vol.origin[a] + idx[a] * vol.spacing[a] for a in range(3)], axis=-1
    )
    d = ph.distance_to_axis(pts.reshape(-1, 3)).reshape(vol.shape)
    # distance_to_axis clamps to the arc endpoints while the raster cuts the
    # tube flat at the end planes; compare only in the angular interior
    theta = np.arctan2(
        pts[..., 1] - ph.arc_center[1], pts[..., 0] - ph.arc_center[0]
    )
    interior = (theta > 0.1) & (theta < ph.theta_max - 0.1)
    margin = 0.5
    assert np.all(vol.data[(d < ph.radius - margin) & interior] == ph.hu_lumen)
    assert np.all(vol.data[(d > ph.radius + margin) & interior] == ph.hu_background)


def test_de_pair_shifted_copy_geometry():
    ph = phantoms.de_pair(shape=(40, 40, 40), spacing=(0.8, 0.8, 0.8), shift=(1.6, -0.8, 0.8))
    assert np.allclose(ph.expected_translation, [-1.6, 0.8, -0.8])
    # same lattice data, different origin: the high volume is the low
    # geometry displaced by +shift with swapped HU palette
    assert ph.low.shape == ph.high.shape


def test_smooth_noise_statistics_and_shift():
    ph = phantoms.smooth_noise(shape=(32, 32, 32), correlation_mm=2.0, seed=3)
    data = ph.volume.data
    assert abs(float(data.mean()) - 0.0) < 20.0
    sh = ph.shifted((4.0, -2.4, 1.6))
    assert np.array_equal(sh.data, ph.volume.data)
    assert np.allclose(
        np.asarray(sh.origin) - np.asarray(ph.volume.origin), [4.0, -2.4, 1.6]
    )


def test_make_phantom_dispatch_and_errors():
    ph = phantoms.make_phantom(
        {"kind": "straight_tube", "shape": [24, 24, 24], "spacing": [0.8, 0.8, 0.8]}
    )
    assert ph.volume.shape == (24, 24, 24)
    with pytest.raises(PhantomSpecError, match="unknown phantom kind"):
        phantoms.make_phantom({"kind": "donut"})
    with pytest.raises(PhantomSpecError):
        phantoms.make_phantom({"shape": [8, 8, 8]})
    with pytest.raises(PhantomSpecError, match="unexpected keyword"):
        phantoms.make_phantom({"kind": "straight_tube", "bogus": 1})


def test_noise_determinism():
    a = phantoms.smooth_noise(shape=(16, 16, 16), seed=9)
    b = phantoms.smooth_noise(shape=(16, 16, 16), seed=9)
    assert np.array_equal(a.volume.data, b.volume.data)
