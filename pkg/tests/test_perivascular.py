"""Perivascular fat ROIs and fat attenuation statistics.

The fat collar phantom surrounds the vessel with a wide -100 HU shell,
so shell extraction and the attenuation index have exact references.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from coroplaq import phantoms
from coroplaq.centerline import extract_centerline_two_seeds, set_markers
from coroplaq.errors import CoverageError, ParameterError
from coroplaq.perivascular import (
    FAT_WINDOW_HU,
    FatROI,
    auto_branch_rois,
    build_fat_roi,
    fat_stats,
)
from coroplaq.plaque import build_plaque_region
from coroplaq.volume import Volume
from coroplaq.wall import WallSurface


@pytest.fixture(scope="module")
def fat_tube():
    """Thin-walled tube inside a fat collar reaching out to r = 12 mm."""
    ph = phantoms.fat_collar_tube(
        shape=(96, 96, 96),
        spacing=(0.4, 0.4, 0.4),
        lumen_radius=2.0,
        wall_radius=2.5,
        fat_radius=12.0,
        hu_fat=-100.0,
        hu_background=-50.0,
    )
    c = extract_centerline_two_seeds(ph.volume, (0, 0, -15.0), (0, 0, 15.0))
    al = np.arange(4.0, 26.0 + 1e-9, 0.5)
    outer = WallSurface("outer", np.full((al.size, 72), 2.5), al, 0.5)
    return ph, c, outer


# -- shell geometry ---------------------------------------------------------------


def test_roi_volume_matches_annulus(fat_tube):
    ph, c, outer = fat_tube
    roi = build_fat_roi(ph.volume, c, outer, width=6.0, s_range=(5.0, 25.0))
    want = math.pi * ((2.5 + 6.0) ** 2 - 2.5**2) * 20.0
    assert roi.volume_mm3 == pytest.approx(want, rel=0.05)
    assert roi.mode == "manual"
    assert roi.radial_width == 6.0


def test_fat_attenuation_index_exact(fat_tube):
    ph, c, outer = fat_tube
    roi = build_fat_roi(ph.volume, c, outer, width=6.0, s_range=(5.0, 25.0))
    st = fat_stats(roi, ph.volume)
    assert st.mean_hu == pytest.approx(-100.0, abs=1.0)
    assert st.window == FAT_WINDOW_HU
    assert st.in_window_count <= st.total_count
    assert sum(n for _, n in st.histogram) == st.total_count


def test_roi_count_monotone_in_width(fat_tube):
    ph, c, outer = fat_tube
    counts = [
        build_fat_roi(ph.volume, c, outer, width=w, s_range=(5.0, 25.0)).n_voxels
        for w in (2.0, 4.0, 6.0)
    ]
    assert counts[0] < counts[1] < counts[2]


def test_roi_excludes_vessel_interior(fat_tube):
    ph, c, outer = fat_tube
    roi = build_fat_roi(ph.volume, c, outer, width=6.0, s_range=(5.0, 25.0))
    vals = roi.values(ph.volume)
    # nothing from the 350 HU lumen or the 60 HU wall interior
    assert float(vals.max()) < 60.0


def test_plaque_and_fat_disjoint(tube96, tube96_sv, tube96_chain):
    ph, _ = tube96
    _, c, m, _ = tube96_sv
    _, _, _, inner, outer = tube96_chain
    plaque = build_plaque_region(ph.volume, c, inner, outer, m)
    roi = build_fat_roi(
        ph.volume, c, outer, width=4.0, s_range=(m.proximal_s, m.distal_s)
    )
    a = {tuple(row) for row in plaque.indices}
    b = {tuple(row) for row in roi.indices}
    assert roi.n_voxels > 0
    assert not (a & b)


def test_roi_validation(fat_tube):
    ph, c, outer = fat_tube
    with pytest.raises(ParameterError):
        build_fat_roi(ph.volume, c, outer, base="middle")
    with pytest.raises(ParameterError):
        build_fat_roi(ph.volume, c, outer, width=0.0)
    with pytest.raises(ParameterError):
        build_fat_roi(ph.volume, c, outer, s_range=(10.0, 10.0))
    with pytest.raises(CoverageError):
        build_fat_roi(ph.volume, c, outer, s_range=(2.0, 25.0))


def test_roi_json_fields(fat_tube):
    ph, c, outer = fat_tube
    roi = build_fat_roi(ph.volume, c, outer, width=3.0, s_range=(5.0, 10.0))
    doc = roi.to_json_dict()
    assert doc["base"] == "outer"
    assert doc["mode"] == "manual"
    assert doc["radial_width"] == 3.0
    assert doc["s_range"] == [5.0, 10.0]
    assert doc["n_voxels"] == roi.n_voxels
    assert doc["volume_mm3"] == roi.volume_mm3


# -- stats window ------------------------------------------------------------------


def _roi_over(vol: Volume) -> FatROI:
    ii, jj, kk = np.indices(vol.shape)
    idx = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
    return FatROI(
        base="outer", mode="manual", radial_width=1.0, s_range=(0.0, 1.0),
        branch_label="", indices=idx, voxel_volume_mm3=vol.voxel_volume_mm3,
    )


def test_fat_window_bounds_inclusive():
    data = np.asarray([-190.0, -30.0, -190.5, -29.5, -1000.0, 0.0], np.float32)
    vol = Volume(data.reshape(6, 1, 1), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    st = fat_stats(_roi_over(vol), vol)
    assert st.in_window_count == 2
    assert st.total_count == 6
    assert st.mean_hu == pytest.approx(-110.0)


def test_fat_mean_omitted_when_window_empty():
    data = np.asarray([0.0, 100.0], np.float32)
    vol = Volume(data.reshape(2, 1, 1), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    st = fat_stats(_roi_over(vol), vol)
    assert st.mean_hu is None
    assert "mean_hu" not in st.to_json_dict()
    assert st.to_json_dict()["roi_volume_mm3"] == 2.0


def test_empty_roi_values(fat_tube):
    ph, _, _ = fat_tube
    roi = FatROI(
        base="outer", mode="manual", radial_width=1.0, s_range=(0.0, 1.0),
        branch_label="", indices=np.empty((0, 3), np.int64),
        voxel_volume_mm3=ph.volume.voxel_volume_mm3,
    )
    assert roi.values(ph.volume).size == 0
    assert fat_stats(roi, ph.volume).mean_hu is None


# -- per-branch auto ROIs -------------------------------------------------------------


@pytest.fixture(scope="module")
def long_tube():
    """Tube long enough to hold the full 50 mm RCA window."""
    ph = phantoms.layered_tube(
        shape=(64, 64, 160),
        spacing=(0.4, 0.4, 0.4),
        layers=((1.6, 350.0), (2.6, 60.0)),
        hu_background=-80.0,
    )
    c = extract_centerline_two_seeds(ph.volume, (0, 0, -30.0), (0, 0, 30.0))
    al = np.arange(0.0, 56.0 + 1e-9, 0.5)
    outer = WallSurface("outer", np.full((al.size, 48), 2.5), al, 0.5)
    return ph, c, outer


def test_auto_ranges_exact(long_tube):
    ph, c, outer = long_tube
    entries = [
        (replace(c, branch_label="RCA"), outer),
        (replace(c, branch_label="LAD"), outer),
        (replace(c, branch_label="LCx"), outer),
    ]
    rois, notices = auto_branch_rois(ph.volume, entries)
    assert [r.branch_label for r in rois] == ["RCA", "LAD", "LCx"]
    assert rois[0].s_range == (10.0, 50.0)
    assert rois[1].s_range == (0.0, 40.0)
    assert rois[2].s_range == (0.0, 40.0)
    assert all(r.warnings == () for r in rois)
    assert all(r.mode == "auto" and r.radial_width is None for r in rois)
    assert notices == []


def test_auto_width_tracks_vessel_diameter(long_tube):
    ph, c, outer = long_tube
    rois, _ = auto_branch_rois(ph.volume, [(replace(c, branch_label="LAD"), outer)])
    roi = rois[0]
    # shell from r=2.5 with width = local mean diameter = 5.0
    want = math.pi * (7.5**2 - 2.5**2) * 40.0
    assert roi.volume_mm3 == pytest.approx(want, rel=0.05)


def test_auto_truncates_short_branch(tube96, tube96_sv, tube96_chain):
    ph, _ = tube96
    _, c, _, _ = tube96_sv
    _, _, _, _, outer = tube96_chain  # covers [4, 26]
    rois, notices = auto_branch_rois(ph.volume, [(replace(c, branch_label="RCA"), outer)])
    assert len(rois) == 1
    assert rois[0].s_range == (10.0, 26.0)
    assert rois[0].warnings and "truncated" in rois[0].warnings[0]
    assert notices == []


def test_auto_skips_non_main_and_disjoint(long_tube, tube96_chain):
    ph, c, outer = long_tube
    short = WallSurface(
        "outer", np.full((5, 48), 2.5), np.arange(4.0, 6.5, 0.5), 0.5
    )
    entries = [
        (replace(c, branch_label="diag"), outer),
        (replace(c, branch_label=None), outer),
        (replace(c, branch_label="RCA"), short),  # ends before 10 mm
    ]
    rois, notices = auto_branch_rois(ph.volume, entries)
    assert rois == []
    assert any("diag" in n for n in notices)
    assert any("(unlabeled)" in n for n in notices)
    assert any("no overlap" in n for n in notices)


def test_auto_empty_entries(long_tube):
    ph, _, _ = long_tube
    rois, notices = auto_branch_rois(ph.volume, [])
    assert rois == []
    assert notices == ["no labeled branches given"]
