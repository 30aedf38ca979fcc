"""Batch pipeline: ordered steps, idempotent re-runs, step-tagged failures."""

from __future__ import annotations

import json

import pytest

from coroplaq.errors import PipelineStepError
from coroplaq.plaque import CompositionThresholds
from coroplaq.project import PipelineConfig, Project, run_pipeline

SEEDS = ((0.0, 0.0, -15.0), (0.0, 0.0, 15.0))


def test_pipeline_requires_volume():
    p = Project("no-volume")
    with pytest.raises(PipelineStepError, match="no volume registered") as ei:
        run_pipeline(p, PipelineConfig(seeds=SEEDS))
    assert ei.value.step == 1
    assert ei.value.step_name == "heart_isolation"


def test_pipeline_requires_seeds(tube96):
    _, path = tube96
    p = Project("no-seeds")
    p.register_volume(path)
    with pytest.raises(PipelineStepError, match="seeds missing") as ei:
        run_pipeline(p, PipelineConfig())
    assert ei.value.step == 2
    assert ei.value.step_name == "centerline_extraction"


def test_pipeline_bad_crop_box_fails_step_one(tube96):
    _, path = tube96
    p = Project("bad-crop")
    p.register_volume(path)
    cfg = PipelineConfig(seeds=SEEDS, crop_box=((5.0, 5.0, 5.0), (1.0, 1.0, 1.0)))
    with pytest.raises(PipelineStepError, match="positive extent") as ei:
        run_pipeline(p, cfg)
    assert ei.value.step == 1


def test_pipeline_seed_outside_volume_fails_step_two(tube96):
    _, path = tube96
    p = Project("bad-seed")
    p.register_volume(path)
    cfg = PipelineConfig(seeds=((500.0, 0.0, 0.0), (0.0, 0.0, 15.0)))
    with pytest.raises(PipelineStepError) as ei:
        run_pipeline(p, cfg)
    assert ei.value.step == 2
    assert ei.value.step_name == "centerline_extraction"


def test_pipeline_run_skip_and_rebuild(tube96):
    _, path = tube96
    p = Project("batch")
    p.register_volume(path)
    cfg = PipelineConfig(
        seeds=SEEDS,
        branch_label="RCA",
        markers=(4.0, 26.0),
        outer_threshold=0.3,
        thresholds=CompositionThresholds(t_lipid_fib=30.0, t_fib_calc=130.0),
        crop_box=((-12.0, -12.0, -16.0), (12.0, 12.0, 16.0)),
    )

    first = run_pipeline(p, cfg)
    assert first["skipped"] is False
    assert first["centerline_id"] == "cl1"
    assert first["lesion_id"] == "les1"
    assert first["report"]["stale"] is False
    assert first["report"]["voxel_count"] > 0
    assert p.crop_box == ((-12.0, -12.0, -16.0), (12.0, 12.0, 16.0))
    assert [e["action"] for e in p.events] == [
        "volume:register",
        "crop:set",
        "centerline:extract",
        "markers:set",
        "surface:inner",
        "surface:outer",
        "thresholds:set",
        "lesion:create",
    ]

    # unchanged inputs: the second run must not touch the project at all
    blob = p.serialize()
    second = run_pipeline(p, cfg)
    assert second == {"skipped": True, "lesions": ["les1"]}
    assert p.serialize() == blob

    # a manual edit stales the chain; the next run builds a new one
    # alongside it and leaves the old entities queryable
    p.edit_centerline("cl1", {"op": "append", "point": [0.0, 0.0, 16.0]})
    third = run_pipeline(p, cfg)
    assert third["skipped"] is False
    assert third["centerline_id"] == "cl2"
    assert third["lesion_id"] == "les2"
    assert p.lesions["les1"]["stale"] is True
    assert p.lesion_report("les1")["stale"] is True
    assert p.lesion_report("les2")["stale"] is False

    fourth = run_pipeline(p, cfg)
    assert fourth == {"skipped": True, "lesions": ["les2"]}


def test_pipeline_defaults_markers_to_full_length(tube96):
    _, path = tube96
    p = Project("full-span")
    p.register_volume(path)
    res = run_pipeline(p, PipelineConfig(seeds=SEEDS))
    assert res["skipped"] is False
    m = p.markers[res["centerline_id"]]
    assert m.proximal_s == 0.0
    assert m.distal_s == p.centerlines[res["centerline_id"]].total_length
