"""HTTP service: endpoint contracts and the error-code to status mapping."""

from __future__ import annotations

import copy
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from coroplaq.project import Project
from coroplaq.server import create_app
from coroplaq.volume import write_volume

# ---------------------------------------------------------------------------
# one app per module; chain projects are injected from a prebuilt document
# so each test gets isolated state without re-running the segmentation


@pytest.fixture(scope="module")
def service(tube96, noise64, data_dir):
    _, path = tube96
    p = Project("template")
    p.register_volume(path)
    cid = p.extract_centerline([(0.0, 0.0, -15.0), (0.0, 0.0, 15.0)], "vessel")
    p.set_markers(cid, 4.0, 26.0)
    p.segment_inner(cid)
    p.segment_outer(cid, 0.3)
    p.create_lesion(cid)
    p.create_fat_roi(cid, base="outer", width=4.0)
    doc = json.loads(p.serialize().decode("utf-8"))

    noise_ph, noise_path = noise64
    shifted_path = str(data_dir / "server_de_high.mhd")
    write_volume(noise_ph.shifted(np.asarray([3.2, -5.1, 1.7])), shifted_path)

    app = create_app()
    client = TestClient(app)
    return {
        "client": client,
        "app": app,
        "doc": doc,
        "volume_path": path,
        "noise_path": noise_path,
        "shifted_path": shifted_path,
    }


def _inject(service, pid: str) -> TestClient:
    """Register a fresh copy of the prebuilt chain project under ``pid``."""
    store = service["app"].state.store
    store.create(pid)
    doc = copy.deepcopy(service["doc"])
    doc["id"] = pid
    store._projects[pid] = Project.from_json_dict(doc)
    return service["client"]


# ---------------------------------------------------------------------------
# project lifecycle


def test_create_get_and_404(service):
    client = service["client"]
    r = client.post("/projects", json={"id": "alpha"})
    assert r.status_code == 200
    assert r.json() == {"id": "alpha"}

    r = client.post("/projects", json={"id": "alpha"})
    assert r.status_code == 400
    assert r.json()["code"] == "parameter_error"
    assert "already exists" in r.json()["message"]

    r = client.get("/projects/alpha")
    assert r.status_code == 200
    body = r.json()
    assert body["id"] == "alpha"
    assert body["schema_version"] == 1
    assert body["volume"] is None

    r = client.get("/projects/ghost")
    assert r.status_code == 404
    assert r.json()["code"] == "not_found"


def test_volume_registration(service):
    client = service["client"]
    client.post("/projects", json={"id": "vol-test"})
    r = client.post(
        "/projects/vol-test/volumes", json={"path": service["volume_path"]}
    )
    assert r.status_code == 200
    body = r.json()
    assert body["shape"] == [96, 96, 96]
    assert body["spacing"] == [0.4, 0.4, 0.4]

    r = client.post(
        "/projects/vol-test/volumes", json={"path": "/nonexistent/x.mhd"}
    )
    assert r.status_code == 404
    assert r.json()["code"] == "not_found"


# ---------------------------------------------------------------------------
# the one full end-to-end flow driven over HTTP


def test_full_chain_over_http(service):
    client = service["client"]
    client.post("/projects", json={"id": "e2e"})
    client.post("/projects/e2e/volumes", json={"path": service["volume_path"]})

    r = client.post(
        "/projects/e2e/centerlines:extract",
        json={"seeds": [[0, 0, -15], [0, 0, 15]], "branch_label": "RCA"},
    )
    assert r.status_code == 200
    assert r.json()["id"] == "cl1"
    assert r.json()["total_length"] == pytest.approx(30.0, abs=1.5)

    r = client.put(
        "/projects/e2e/markers",
        json={"centerline_id": "cl1", "proximal_s": 4.0, "distal_s": 26.0},
    )
    assert r.json()["markers"]["proximal_s"] == 4.0

    r = client.post("/projects/e2e/segment:inner", json={"centerline_id": "cl1"})
    assert r.json()["surface_id"] == "cl1.inner"
    assert r.json()["surface"]["kind"] == "inner"

    r = client.post(
        "/projects/e2e/segment:outer",
        json={"centerline_id": "cl1", "threshold": 0.3},
    )
    assert r.json()["surface_id"] == "cl1.outer"

    r = client.post("/projects/e2e/lesions", json={"centerline_id": "cl1"})
    assert r.json() == {"id": "les1"}

    r = client.get("/projects/e2e/lesions/les1/report")
    assert r.status_code == 200
    report = r.json()
    assert report["lesion_id"] == "les1"
    assert report["stale"] is False
    assert report["voxel_count"] > 0
    # straight healthy tube: no real stenosis
    assert report["stenosis"]["stenosis_area_pct"] <= 5.0

    # the RCA label makes the literature window apply, truncated to coverage
    r = client.post("/projects/e2e/fatrois", json={"auto": True})
    assert r.status_code == 200
    fids = r.json()["fat_roi_ids"]
    assert fids == ["fat1"]
    r = client.get(f"/projects/e2e/fatrois/{fids[0]}/stats")
    stats = r.json()
    assert stats["roi"]["s_range"] == [10.0, 26.0]
    assert any("truncated" in w for w in stats["roi"]["warnings"])


# ---------------------------------------------------------------------------
# error translation


def test_error_status_matrix(service):
    client = _inject(service, "errs")

    r = client.get("/projects/errs/lesions/les9/report")
    assert (r.status_code, r.json()["code"]) == (404, "not_found")

    r = client.post("/projects/errs/segment:inner", json={"centerline_id": "cl9"})
    assert (r.status_code, r.json()["code"]) == (404, "not_found")

    r = client.put(
        "/projects/errs/markers",
        json={"centerline_id": "cl1", "proximal_s": 26.0, "distal_s": 4.0},
    )
    assert (r.status_code, r.json()["code"]) == (400, "parameter_error")

    r = client.get(
        "/projects/errs/sections",
        params={"centerline_id": "cl1", "s": 999.0},
    )
    assert (r.status_code, r.json()["code"]) == (400, "arclength_out_of_range")

    r = client.post(
        "/projects/errs/centerlines:extract",
        json={"seeds": [[0, 0, 0]], "mode": "magic"},
    )
    assert (r.status_code, r.json()["code"]) == (400, "parameter_error")

    r = client.patch("/projects/errs/centerlines/cl1", json={"op": "fold"})
    assert (r.status_code, r.json()["code"]) == (400, "parameter_error")

    cons = [
        {"s": 15.0, "theta": 0.0, "target_radius": 1.5},
        {"s": 15.0, "theta": 0.0, "target_radius": 2.5},
    ]
    r = client.post(
        "/projects/errs/surfaces/cl1.inner:correct", json={"constraints": cons}
    )
    assert (r.status_code, r.json()["code"]) == (409, "conflicting_constraints")


def test_stale_entity_maps_to_409(service):
    client = _inject(service, "stale409")
    r = client.put(
        "/projects/stale409/markers",
        json={"centerline_id": "cl1", "proximal_s": 26.5, "distal_s": 27.5},
    )
    assert r.status_code == 200
    assert sorted(r.json()["stale_marked"]) == ["cl1.inner", "cl1.outer", "fat1", "les1"]
    r = client.get("/projects/stale409/lesions/les1/report")
    assert (r.status_code, r.json()["code"]) == (409, "stale_entity")


# ---------------------------------------------------------------------------
# binary and text payloads


def test_section_binary_payload(service):
    client = _inject(service, "sections")
    r = client.get(
        "/projects/sections/sections",
        params={"centerline_id": "cl1", "s": 15.0, "extent": 8.0, "spacing": 0.2},
    )
    assert r.status_code == 200
    assert r.headers["content-type"] == "application/octet-stream"
    blob = r.content
    nl = blob.index(b"\n")
    header = json.loads(blob[:nl].decode("utf-8"))
    assert header == {"width": 41, "height": 41, "spacing": 0.2, "center_s": 15.0}
    px = np.frombuffer(blob[nl + 1 :], "<i2").reshape(41, 41)
    assert abs(int(px[20, 20]) - 350) < 30


def test_preview_outer_endpoint(service):
    client = _inject(service, "preview")
    r = client.get(
        "/projects/preview/preview:outer",
        params={"centerline_id": "cl1", "s": 14.8, "threshold": 0.3},
    )
    assert r.status_code == 200
    body = r.json()
    assert body["arclength"] == 15.0
    assert body["angles_n"] == 72
    assert len(body["raw_outer_radii"]) == 72


def test_histogram_csv_endpoint(service):
    client = _inject(service, "hist")
    r = client.get("/projects/hist/lesions/les1/histogram.csv")
    assert r.status_code == 200
    assert r.headers["content-type"].startswith("text/csv")
    lines = r.text.strip().split("\n")
    assert lines[0] == "hu_bin_start,hu_bin_end,voxel_count,volume_mm3"
    counts = sum(int(row.split(",")[2]) for row in lines[1:])
    report = client.get("/projects/hist/lesions/les1/report").json()
    assert counts == report["voxel_count"]


# ---------------------------------------------------------------------------
# mutations over HTTP


def test_marker_shift_endpoint(service):
    client = _inject(service, "shift")
    r = client.put(
        "/projects/shift/markers",
        json={"centerline_id": "cl1", "shift": {"which": "distal", "delta_s": -1.0}},
    )
    assert r.status_code == 200
    assert r.json()["markers"]["distal_s"] == pytest.approx(25.0)
    # clamped: never crosses the other marker
    r = client.put(
        "/projects/shift/markers",
        json={"centerline_id": "cl1", "shift": {"which": "distal", "delta_s": -40.0}},
    )
    m = r.json()["markers"]
    assert m["distal_s"] == pytest.approx(m["proximal_s"] + 0.5)


def test_threshold_update_preserves_total_volume(service):
    client = _inject(service, "thr")
    before = client.get("/projects/thr/lesions/les1/report").json()
    r = client.put(
        "/projects/thr/thresholds",
        json={"t_lipid_fib": 30.0, "t_fib_calc": 80.0},
    )
    assert r.json()["thresholds"] == {"t_lipid_fib": 30.0, "t_fib_calc": 80.0}
    after = client.get("/projects/thr/lesions/les1/report").json()
    assert after["voxel_count"] == before["voxel_count"]
    assert after["volumes_mm3"]["total"] == before["volumes_mm3"]["total"]
    assert after["counts"] != before["counts"]


def test_correct_surface_endpoint(service):
    client = _inject(service, "corr")
    r = client.post(
        "/projects/corr/surfaces/cl1.inner:correct",
        json={"constraints": [{"s": 15.0, "theta": 0.0, "target_radius": 1.9}]},
    )
    assert r.status_code == 200
    body = r.json()
    assert body["surface_id"] == "cl1.inner"
    assert body["stale_marked"] == []
    assert "paired_surface" in body
    inner = np.asarray(body["surface"]["radii"])
    outer = np.asarray(body["paired_surface"]["radii"])
    assert (outer >= inner).all()


def test_napkin_flag_endpoint(service):
    client = _inject(service, "napkin")
    r = client.post("/projects/napkin/lesions/les1:napkin", json={"value": True})
    assert r.json() == {"id": "les1", "napkin_ring": True}
    report = client.get("/projects/napkin/lesions/les1/report").json()
    assert report["napkin_ring_flag"] is True


def test_fat_roi_create_and_stats(service):
    client = _inject(service, "fat")
    r = client.post(
        "/projects/fat/fatrois",
        json={"centerline_id": "cl1", "base": "outer", "width": 3.0},
    )
    assert r.json()["fat_roi_ids"] == ["fat2"]
    stats = client.get("/projects/fat/fatrois/fat2/stats").json()
    assert stats["stale"] is False
    assert stats["roi"]["base"] == "outer"
    assert stats["total_count"] > 0
    # background is -80 HU: inside the adipose window
    assert -95.0 < stats["mean_hu"] < -65.0

    r = client.post("/projects/fat/fatrois", json={"auto": True})
    assert r.json()["fat_roi_ids"] == []
    assert any("not a main branch" in n for n in r.json()["notices"])


def test_depair_endpoint(service):
    client = service["client"]
    client.post("/projects", json={"id": "de"})
    r = client.post(
        "/projects/de/depair",
        json={
            "path_a": service["shifted_path"],
            "meta_a": {"kvp": 140.0, "frame_of_reference": "F"},
            "path_b": service["noise_path"],
            "meta_b": {"kvp": 100.0, "frame_of_reference": "F"},
        },
    )
    assert r.status_code == 200
    body = r.json()
    assert body["low_path"] == service["noise_path"]
    assert body["high_path"] == service["shifted_path"]
    t = np.asarray(body["transform"]["translation"])
    assert np.abs(t - np.asarray([-3.2, 5.1, -1.7])).max() <= 0.25

    r = client.post(
        "/projects/de/depair",
        json={
            "path_a": service["noise_path"],
            "meta_a": {"kvp": 100.0, "frame_of_reference": "F"},
            "path_b": service["shifted_path"],
            "meta_b": {"kvp": 110.0, "frame_of_reference": "F"},
        },
    )
    assert (r.status_code, r.json()["code"]) == (400, "parameter_error")


def test_run_pipeline_endpoint(service):
    client = service["client"]
    client.post("/projects", json={"id": "batch"})
    client.post("/projects/batch/volumes", json={"path": service["volume_path"]})
    cfg = {"seeds": [[0, 0, -15], [0, 0, 15]], "markers": [4.0, 26.0]}
    r = client.post("/projects/batch/run", json={"config": cfg})
    assert r.status_code == 200
    body = r.json()
    assert body["skipped"] is False
    assert body["lesion_id"] == "les1"
    r = client.post("/projects/batch/run", json={"config": cfg})
    assert r.json() == {"skipped": True, "lesions": ["les1"]}

    r = client.post("/projects/batch/run", json={"config": {}})
    assert r.json() == {"skipped": True, "lesions": ["les1"]}


def test_pipeline_error_carries_step(service):
    client = service["client"]
    client.post("/projects", json={"id": "nofuel"})
    r = client.post("/projects/nofuel/run", json={"config": {}})
    assert r.status_code == 400
    assert r.json()["code"] == "pipeline_step_failed"
    assert "heart_isolation" in r.json()["message"]
