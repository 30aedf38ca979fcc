"""Dual-energy pairing, rigid registration, and DE-index composition.

Registration is exercised on a band-limited noise field: a tube is
rotationally symmetric, so only an asymmetric target pins all six
parameters.  Composition is re-derived with a per-voxel loop.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from coroplaq import phantoms
from coroplaq.dualenergy import (
    AcquisitionMeta,
    DeIndexField,
    DePair,
    RigidTransform,
    de_composition,
    de_index,
    de_index_field,
    detect_de_pair,
    load_acquisition_meta,
    register_rigid,
)
from coroplaq.errors import ParameterError, ParseError, UndecidablePairingError
from coroplaq.plaque import PlaqueRegion
from coroplaq.volume import Volume


# -- pairing ---------------------------------------------------------------------


def _meta(kvp, for_uid="1.2.3", time=""):
    return AcquisitionMeta(kvp=kvp, frame_of_reference=for_uid, series_time=time)


def test_pairing_decision_table():
    d = detect_de_pair(_meta(100.0), _meta(140.0))
    assert d.paired and d.low_index == 0 and d.high_index == 1
    d = detect_de_pair(_meta(140.0), _meta(100.0))
    assert d.paired and d.low_index == 1 and d.high_index == 0
    d = detect_de_pair(_meta(100.0), _meta(120.0))
    assert not d.paired and "below" in d.reason
    d = detect_de_pair(_meta(100.0), _meta(140.0, for_uid="9.9.9"))
    assert not d.paired and "frame-of-reference" in d.reason
    # exactly 30 kV apart still pairs
    assert detect_de_pair(_meta(100.0), _meta(130.0)).paired


def test_pairing_undecidable_without_kvp():
    with pytest.raises(UndecidablePairingError):
        detect_de_pair(_meta(None), _meta(140.0))
    with pytest.raises(UndecidablePairingError):
        detect_de_pair(_meta(100.0), _meta(None))


def test_sidecar_loading(tmp_path):
    p = tmp_path / "a.mhd.meta.json"
    p.write_text(
        json.dumps({"kvp": 100, "frame_of_reference": "1.2.3", "series_time": "t0"}),
        encoding="utf-8",
    )
    meta = load_acquisition_meta(str(p))
    assert meta.kvp == 100.0
    assert meta.frame_of_reference == "1.2.3"
    with pytest.raises(ParseError):
        load_acquisition_meta(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ParseError):
        load_acquisition_meta(str(bad))
    garbled = tmp_path / "garbled.json"
    garbled.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_acquisition_meta(str(garbled))


# -- DE index ---------------------------------------------------------------------


def test_de_index_reference_value():
    assert de_index(100.0, 50.0) == 50.0 / 2150.0


def test_de_index_clamps_inputs():
    assert de_index(-2000.0, 0.0) == de_index(-1000.0, 0.0)
    assert de_index(5000.0, 0.0) == de_index(3071.0, 0.0)


def test_de_index_antisymmetric():
    rng = np.random.default_rng(3)
    a = rng.uniform(-900.0, 3000.0, 100)
    b = rng.uniform(-900.0, 3000.0, 100)
    assert np.array_equal(de_index(a, b), -de_index(b, a))


def test_de_index_zero_denominator():
    with pytest.raises(ParameterError):
        de_index(-1000.0, -1000.0)
    with pytest.raises(ParameterError):
        de_index(np.asarray([0.0, -1000.0]), np.asarray([0.0, -1500.0]))


def test_de_index_stays_inside_unit_interval():
    rng = np.random.default_rng(4)
    a = rng.uniform(-1000.0, 3071.0, 500)
    b = rng.uniform(-1000.0, 3071.0, 500)
    keep = a + b + 2000.0 != 0.0
    v = de_index(a[keep], b[keep])
    assert np.abs(v).max() < 1.0


def test_de_index_scalar_returns_float():
    v = de_index(100, 50)
    assert isinstance(v, float)
    assert isinstance(de_index(np.asarray([100.0]), np.asarray([50.0])), np.ndarray)


# -- rigid transform ---------------------------------------------------------------


def test_transform_matrix_orthonormal():
    tr = RigidTransform(
        translation=np.asarray([1.0, -2.0, 3.0]),
        rotation_euler_xyz=np.asarray([0.1, -0.2, 0.3]),
    )
    r = tr.matrix
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_transform_inverse_round_trip():
    tr = RigidTransform(
        translation=np.asarray([4.0, 0.5, -1.5]),
        rotation_euler_xyz=np.asarray([0.2, 0.1, -0.3]),
    )
    rng = np.random.default_rng(8)
    pts = rng.uniform(-20, 20, (50, 3))
    assert np.allclose(tr.map_low_to_high(tr.apply(pts)), pts, atol=1e-12)
    assert np.allclose(tr.apply(tr.map_low_to_high(pts)), pts, atol=1e-12)


def test_transform_json_round_trip():
    tr = RigidTransform(
        translation=np.asarray([0.125, -3.5, 7.0]),
        rotation_euler_xyz=np.asarray([0.0, 0.25, -0.125]),
        score=0.875,
    )
    back = RigidTransform.from_json_dict(tr.to_json_dict())
    assert np.array_equal(back.translation, tr.translation)
    assert np.array_equal(back.rotation_euler_xyz, tr.rotation_euler_xyz)
    assert back.score == tr.score


def test_transform_score_validated():
    with pytest.raises(ParameterError):
        RigidTransform(np.zeros(3), np.zeros(3), score=1.5)


def test_de_index_field_invariants():
    with pytest.raises(ParameterError):
        DeIndexField(np.zeros((2, 3), np.int64), np.asarray([0.5, 1.0]), 0)
    with pytest.raises(ParameterError):
        DeIndexField(np.zeros((2, 3), np.int64), np.asarray([0.5]), 0)


# -- registration -------------------------------------------------------------------


def test_identity_registration(noise64):
    ph, _ = noise64
    pair = register_rigid(ph.volume, ph.volume)
    assert np.abs(pair.transform.translation).max() <= 0.05
    assert np.abs(pair.transform.rotation_euler_xyz).max() <= math.radians(0.1)
    assert pair.score >= 0.999
    assert pair.warnings == ()


def test_registration_recovers_known_shift(noise64):
    ph, _ = noise64
    shift = np.asarray([3.2, -5.1, 1.7])
    pair = register_rigid(ph.volume, ph.shifted(shift))
    err = np.abs(pair.transform.translation - (-shift))
    assert err.max() <= 0.25
    assert np.abs(pair.transform.rotation_euler_xyz).max() <= math.radians(0.5)
    assert pair.score >= 0.99


def test_structureless_registration_warns():
    flat = Volume(
        data=np.zeros((24, 24, 24), np.float32),
        spacing=(1.0, 1.0, 1.0),
        origin=(0.0, 0.0, 0.0),
    )
    pair = register_rigid(flat, flat)
    assert pair.warnings
    assert "unreliable" in pair.warnings[0]


# -- DE composition -----------------------------------------------------------------


def _ball_region(vol: Volume, center_mm, radius_mm) -> PlaqueRegion:
    ii, jj, kk = np.indices(vol.shape)
    idx = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
    pts = np.asarray(vol.origin) + idx * np.asarray(vol.spacing)
    keep = np.linalg.norm(pts - np.asarray(center_mm), axis=1) < radius_mm
    return PlaqueRegion("de-les", idx[keep], vol.voxel_volume_mm3)


@pytest.fixture(scope="module")
def de_phantom_pair():
    """Three HU bands chosen so the exact classifier output covers all
    classes: fibrotic core (DEI 50/2150), calcified ring, lipid outside."""
    ph = phantoms.de_pair(
        shape=(64, 64, 64),
        spacing=(0.4, 0.4, 0.4),
        layers=((1.5, 100.0, 50.0), (2.5, 300.0, 200.0)),
        hu_background=(-80.0, -70.0),
        shift=(1.2, -0.8, 0.4),
    )
    pair = DePair(
        low_kv=ph.low,
        high_kv=ph.high,
        transform=RigidTransform(
            translation=np.asarray(ph.expected_translation),
            rotation_euler_xyz=np.zeros(3),
        ),
    )
    return ph, pair


def _classify_by_loop(region, pair, calc_threshold=130.0, dei_threshold=0.007):
    low, high = pair.low_kv, pair.high_kv
    calc = lipid = fib = excl = 0
    for i, j, k in region.indices:
        p_low = np.asarray(low.origin) + np.asarray([i, j, k]) * np.asarray(low.spacing)
        p_high = pair.transform.map_low_to_high(p_low)
        if not high.contains(p_high):
            excl += 1
            continue
        hu_low = float(low.data[i, j, k])
        hu_high = float(high.sample_one(p_high))
        if hu_low >= calc_threshold:
            calc += 1
            continue
        lo = min(max(hu_low, -1000.0), 3071.0)
        hi = min(max(hu_high, -1000.0), 3071.0)
        dei = (lo - hi) / (lo + hi + 2000.0)
        if dei < dei_threshold:
            lipid += 1
        else:
            fib += 1
    return calc, lipid, fib, excl


def test_de_composition_matches_loop(de_phantom_pair):
    ph, pair = de_phantom_pair
    region = _ball_region(pair.low_kv, (0.0, 0.0, 0.0), 3.4)
    comp = de_composition(region, pair)
    calc, lipid, fib, excl = _classify_by_loop(region, pair)
    assert (comp.calcified, comp.lipid_rich, comp.fibrotic, comp.excluded) == (
        calc,
        lipid,
        fib,
        excl,
    )
    # all three classes genuinely present in this phantom
    assert calc > 0 and lipid > 0 and fib > 0
    assert comp.counted + comp.excluded == region.n_voxels
    doc = comp.to_json_dict()
    assert doc["counts"]["calcified"] == calc
    assert doc["volumes_mm3"]["fibrotic"] == fib * region.voxel_volume_mm3


def test_edge_region_counts_exclusions(de_phantom_pair):
    ph, pair = de_phantom_pair
    low = pair.low_kv
    # slab against the +x face: mapping into the high volume pushes part
    # of it out of the sampling domain
    ii, jj, kk = np.indices((4, 8, 8))
    idx = np.column_stack([ii.ravel() + low.shape[0] - 4, jj.ravel() + 28, kk.ravel() + 28])
    region = PlaqueRegion("edge", idx, low.voxel_volume_mm3)
    comp = de_composition(region, pair)
    calc, lipid, fib, excl = _classify_by_loop(region, pair)
    assert excl > 0
    assert comp.excluded == excl
    assert (comp.calcified, comp.lipid_rich, comp.fibrotic) == (calc, lipid, fib)
    field = de_index_field(region, pair)
    assert field.excluded == excl
    assert field.values.shape[0] == region.n_voxels - excl
    assert np.abs(field.values).max() < 1.0


def test_de_index_field_values_match_loop(de_phantom_pair):
    ph, pair = de_phantom_pair
    region = _ball_region(pair.low_kv, (1.0, 0.5, -0.5), 2.0)
    field = de_index_field(region, pair)
    low, high = pair.low_kv, pair.high_kv
    want = []
    for i, j, k in region.indices:
        p_low = np.asarray(low.origin) + np.asarray([i, j, k]) * np.asarray(low.spacing)
        p_high = pair.transform.map_low_to_high(p_low)
        if not high.contains(p_high):
            continue
        lo = min(max(float(low.data[i, j, k]), -1000.0), 3071.0)
        hi = min(max(float(high.sample_one(p_high)), -1000.0), 3071.0)
        want.append((lo - hi) / (lo + hi + 2000.0))
    assert np.allclose(field.values, np.asarray(want), atol=1e-12)
