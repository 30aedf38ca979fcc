"""Session HTTP service: JSON API over the project state.

One process owns a set of in-memory projects.  Mutations on a project
are strictly serialized by a per-project lock (FIFO by lock fairness of
the underlying OS primitive); reads of different projects never block
each other.  All computation is delegated to the pure library functions,
so the only shared mutable state is the project store itself.

Every domain error carries a machine-readable ``code``; the HTTP layer
maps codes onto 4xx statuses and never leaks stack traces to clients.
"""

from __future__ import annotations

import threading

from fastapi import Body, FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .centerline import shift_marker
from .errors import CoroplaqError, NotFoundError, ParameterError
from .project import PipelineConfig, Project, run_pipeline

# codes whose natural HTTP status is not plain 400
_STATUS_BY_CODE = {
    "not_found": 404,
    "conflicting_constraints": 409,
    "version_error": 409,
    "stale_entity": 409,
}


class ProjectStore:
    """Thread-safe registry of projects and their mutation locks."""

    def __init__(self):
        self._projects: dict[str, Project] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def create(self, project_id: str) -> Project:
        with self._registry_lock:
            if project_id in self._projects:
                raise ParameterError(
                    f"project {project_id!r} already exists", code="parameter_error"
                )
            p = Project(project_id)
            self._projects[project_id] = p
            self._locks[project_id] = threading.Lock()
            return p

    def get(self, project_id: str) -> Project:
        with self._registry_lock:
            if project_id not in self._projects:
                raise NotFoundError(f"project {project_id!r} not found")
            return self._projects[project_id]

    def lock(self, project_id: str) -> threading.Lock:
        with self._registry_lock:
            if project_id not in self._locks:
                raise NotFoundError(f"project {project_id!r} not found")
            return self._locks[project_id]


def create_app(data_dir: str | None = None) -> FastAPI:
    """Build the service; ``data_dir`` is an optional base for relative
    volume paths."""
    app = FastAPI(title="coroplaq session service")
    # the browser client is served from its own dev origin
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    store = ProjectStore()
    app.state.store = store

    def resolve(path: str) -> str:
        import os

        if data_dir is not None and not os.path.isabs(path):
            return os.path.join(data_dir, path)
        return path

    @app.exception_handler(CoroplaqError)
    def _domain_error(_req: Request, exc: CoroplaqError):
        return JSONResponse(
            status_code=_STATUS_BY_CODE.get(exc.code, 400),
            content={"code": exc.code, "message": str(exc)},
        )

    # -- projects ----------------------------------------------------------

    @app.post("/projects")
    def create_project(body: dict = Body(...)):
        p = store.create(str(body["id"]))
        return {"id": p.id}

    @app.get("/projects/{pid}")
    def get_project(pid: str):
        return store.get(pid).to_json_dict()

    # -- volumes -----------------------------------------------------------

    @app.post("/projects/{pid}/volumes")
    def register_volume(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            p.register_volume(resolve(str(body["path"])))
            vol = p.volume()
        return {
            "path": p.volume_path,
            "shape": list(vol.shape),
            "spacing": list(vol.spacing),
            "origin": list(vol.origin),
        }

    @app.post("/projects/{pid}/depair")
    def register_de_pair(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            de = p.register_de_pair(
                resolve(str(body["path_a"])),
                dict(body["meta_a"]),
                resolve(str(body["path_b"])),
                dict(body["meta_b"]),
            )
        return de

    @app.post("/projects/{pid}/crop")
    def set_crop_box(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            p.set_crop_box(body["lo"], body["hi"])
        return {"lo": list(p.crop_box[0]), "hi": list(p.crop_box[1])}

    # -- centerlines ---------------------------------------------------------

    @app.post("/projects/{pid}/centerlines:extract")
    def extract_centerline(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            cid = p.extract_centerline(
                body["seeds"],
                branch_label=body.get("branch_label", "vessel"),
                mode=body.get("mode", "two_seed"),
            )
            c = p.centerlines[cid]
        return {"id": cid, "centerline": c.to_json_dict(), "total_length": c.total_length}

    @app.patch("/projects/{pid}/centerlines/{cid}")
    def edit_centerline(pid: str, cid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            stale = p.edit_centerline(cid, dict(body))
            c = p.centerlines[cid]
        return {
            "id": cid,
            "centerline": c.to_json_dict(),
            "total_length": c.total_length,
            "stale_marked": stale,
        }

    @app.put("/projects/{pid}/markers")
    def put_markers(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        cid = str(body["centerline_id"])
        with store.lock(pid):
            if "shift" in body:
                m = p._markers(cid)
                m2 = shift_marker(
                    m,
                    body["shift"]["which"],
                    float(body["shift"]["delta_s"]),
                    p.centerlines[cid].total_length,
                )
                stale = p.set_markers(cid, m2.proximal_s, m2.distal_s)
            else:
                stale = p.set_markers(
                    cid, float(body["proximal_s"]), float(body["distal_s"])
                )
            m = p.markers[cid]
        return {"markers": m.to_json_dict(), "stale_marked": stale}

    # -- segmentation --------------------------------------------------------

    @app.post("/projects/{pid}/segment:inner")
    def segment_inner(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            sid = p.segment_inner(str(body["centerline_id"]))
            ent = p.surfaces[sid]
        return {"surface_id": sid, "surface": ent["surface"].to_json_dict()}

    @app.post("/projects/{pid}/segment:outer")
    def segment_outer(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            sid = p.segment_outer(
                str(body["centerline_id"]),
                threshold=float(body.get("threshold", 0.3)),
            )
            ent = p.surfaces[sid]
        return {"surface_id": sid, "surface": ent["surface"].to_json_dict()}

    @app.get("/projects/{pid}/preview:outer")
    def preview_outer(
        pid: str, centerline_id: str, s: float, threshold: float = 0.3
    ):
        p = store.get(pid)
        with store.lock(pid):
            return p.preview_outer_section(centerline_id, s, threshold)

    @app.post("/projects/{pid}/surfaces/{sid}:correct")
    def correct_surface(pid: str, sid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            stale = p.correct_surface(sid, list(body["constraints"]))
            ent = p.surfaces[sid]
            cid = ent["centerline_id"]
            out = {
                "surface_id": sid,
                "surface": ent["surface"].to_json_dict(),
                "stale_marked": stale,
            }
            other = f"{cid}.{'outer' if sid.endswith('.inner') else 'inner'}"
            if other in p.surfaces:
                out["paired_surface"] = p.surfaces[other]["surface"].to_json_dict()
        return out

    # -- analysis ------------------------------------------------------------

    @app.put("/projects/{pid}/thresholds")
    def put_thresholds(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            p.set_thresholds(
                float(body["t_lipid_fib"]), float(body["t_fib_calc"])
            )
        return {"thresholds": p.thresholds.to_json_dict()}

    @app.post("/projects/{pid}/lesions")
    def create_lesion(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            lid = p.create_lesion(str(body["centerline_id"]))
        return {"id": lid}

    @app.post("/projects/{pid}/lesions/{lid}:napkin")
    def set_napkin(pid: str, lid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            p.set_napkin_ring(lid, bool(body["value"]))
        return {"id": lid, "napkin_ring": p.lesions[lid]["napkin_ring"]}

    @app.get("/projects/{pid}/lesions/{lid}/report")
    def lesion_report(pid: str, lid: str):
        p = store.get(pid)
        with store.lock(pid):
            return p.lesion_report(lid)

    @app.get("/projects/{pid}/lesions/{lid}/histogram.csv")
    def lesion_histogram(pid: str, lid: str):
        p = store.get(pid)
        with store.lock(pid):
            csv_text = p.lesion_histogram_csv(lid)
        return Response(content=csv_text, media_type="text/csv")

    # -- fat ROIs ------------------------------------------------------------

    @app.post("/projects/{pid}/fatrois")
    def create_fat_roi(pid: str, body: dict = Body(...)):
        p = store.get(pid)
        with store.lock(pid):
            if body.get("auto"):
                fids, notices = p.auto_fat_rois()
                return {"fat_roi_ids": fids, "notices": notices}
            fid = p.create_fat_roi(
                str(body["centerline_id"]),
                base=body.get("base", "outer"),
                width=body.get("width", 6.0),
                s_range=body.get("s_range"),
            )
        return {"fat_roi_ids": [fid], "notices": []}

    @app.get("/projects/{pid}/fatrois/{fid}/stats")
    def fat_roi_stats(pid: str, fid: str):
        p = store.get(pid)
        with store.lock(pid):
            return p.fat_roi_stats(fid)

    # -- sections ------------------------------------------------------------

    @app.get("/projects/{pid}/sections")
    def get_section(
        pid: str,
        centerline_id: str,
        s: float,
        extent: float = 20.0,
        spacing: float = 0.1,
    ):
        p = store.get(pid)
        with store.lock(pid):
            payload = p.section_payload(centerline_id, s, extent, spacing)
        return Response(content=payload, media_type="application/octet-stream")

    # -- pipeline ------------------------------------------------------------

    @app.post("/projects/{pid}/run")
    def run(pid: str, body: dict = Body(default={})):
        p = store.get(pid)
        cfg = PipelineConfig.from_json_dict(body.get("config", {}))
        with store.lock(pid):
            return run_pipeline(p, cfg)

    return app
