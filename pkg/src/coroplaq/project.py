"""Project state, event log, persistence, and the batch pipeline.

A project owns everything derived from one study: volume references,
the optional dual-energy pair, the heart crop box, centerlines with
their markers, wall surfaces, lesions, and fat ROIs.  Every mutation
goes through an event: the public method builds a JSON payload, an
internal applier performs the deterministic computation, and the event
(sequence number, timestamp, entity, action, payload, staleness record)
is appended to the log.  Replaying the log on a fresh project with the
same id therefore reproduces the final serialized state byte for byte,
because appliers are pure functions of (state, payload) and timestamps
are carried inside the events themselves.

Derived entities are never recomputed behind the caller's back; editing
an upstream entity only flags its dependents stale.  Reports on stale
entities carry the flag so a client can decide when to re-run.

Volumes are referenced by file path and cached in memory; the cache is
not part of the serialized state.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import centerline as _cl
from . import dualenergy as _de
from . import perivascular as _pv
from . import plaque as _pl
from . import reformat as _rf
from . import vesselness as _vs
from . import wall as _wl
from .centerline import Centerline, SectionMarkers
from .errors import (
    ArclengthRangeError,
    NotFoundError,
    ParameterError,
    ParseError,
    PipelineStepError,
    StaleEntityError,
    VersionError,
)
from .plaque import CompositionThresholds
from .volume import Volume, load_volume
from .wall import WallSurface

CURRENT_SCHEMA_VERSION = 1
PROJECT_SUFFIX = ".coroplaq.json"


def canonical_json(doc) -> bytes:
    """Stable byte serialization: sorted keys, no whitespace, newline end."""
    return (
        json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        + "\n"
    ).encode("utf-8")


def _utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass(frozen=True)
class PipelineConfig:
    """Inputs the batch pipeline needs beyond the volume itself."""

    seeds: tuple | None = None          # ((x,y,z), (x,y,z)) world mm
    branch_label: str = "vessel"
    markers: tuple | None = None        # (proximal_s, distal_s); default: full length
    outer_threshold: float = _wl.OUTER_THRESHOLD_DEFAULT
    thresholds: CompositionThresholds = field(default_factory=CompositionThresholds)
    crop_box: tuple | None = None       # ((x,y,z) lo, (x,y,z) hi) world mm

    def to_json_dict(self) -> dict:
        return {
            "seeds": None
            if self.seeds is None
            else [[float(x) for x in s] for s in self.seeds],
            "branch_label": self.branch_label,
            "markers": None if self.markers is None else list(self.markers),
            "outer_threshold": self.outer_threshold,
            "thresholds": self.thresholds.to_json_dict(),
            "crop_box": None
            if self.crop_box is None
            else [[float(x) for x in p] for p in self.crop_box],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "PipelineConfig":
        thr = d.get("thresholds")
        return PipelineConfig(
            seeds=None
            if d.get("seeds") is None
            else tuple(tuple(float(x) for x in s) for s in d["seeds"]),
            branch_label=d.get("branch_label", "vessel"),
            markers=None if d.get("markers") is None else tuple(d["markers"]),
            outer_threshold=float(
                d.get("outer_threshold", _wl.OUTER_THRESHOLD_DEFAULT)
            ),
            thresholds=CompositionThresholds()
            if thr is None
            else CompositionThresholds.from_json_dict(thr),
            crop_box=None
            if d.get("crop_box") is None
            else tuple(tuple(float(x) for x in p) for p in d["crop_box"]),
        )


def heart_crop(vol: Volume, box: tuple | None) -> np.ndarray:
    """Boolean voxel mask for the heart region: the world-space box when
    given, otherwise the full volume.  The mask feeds the centerline
    graph search, which never visits excluded voxels."""
    if box is None:
        return np.ones(vol.shape, bool)
    lo = np.asarray(box[0], np.float64)
    hi = np.asarray(box[1], np.float64)
    if not (lo < hi).all():
        raise ParameterError(f"crop box must have positive extent, got {box!r}")
    ii = np.arange(vol.shape[0])
    jj = np.arange(vol.shape[1])
    kk = np.arange(vol.shape[2])
    centers = [
        vol.origin[a] + idx * vol.spacing[a] for a, idx in enumerate((ii, jj, kk))
    ]
    inside = [
        (centers[a] >= lo[a]) & (centers[a] <= hi[a]) for a in range(3)
    ]
    mask = (
        inside[0][:, None, None]
        & inside[1][None, :, None]
        & inside[2][None, None, :]
    )
    if not mask.any():
        raise ParameterError("crop box excludes every voxel")
    return mask


class Project:
    """Mutable per-study state with an append-only event log."""

    def __init__(self, project_id: str):
        if not project_id:
            raise ParameterError("project id must be non-empty")
        self.id = project_id
        self.schema_version = CURRENT_SCHEMA_VERSION
        self.volume_path: str | None = None
        self.de: dict | None = None          # {low_path, high_path, transform, warnings}
        self.crop_box: tuple | None = None
        self.centerlines: dict[str, Centerline] = {}
        self.markers: dict[str, SectionMarkers] = {}
        self.surfaces: dict[str, dict] = {}   # sid -> {centerline_id, surface, stale}
        self.lesions: dict[str, dict] = {}    # lid -> {centerline_id, napkin_ring, stale}
        self.fat_rois: dict[str, dict] = {}   # fid -> {params..., stale}
        self.thresholds = CompositionThresholds()
        self.migration_notes: list[str] = []
        self.events: list[dict] = []
        self.counters: dict[str, int] = {"centerline": 0, "lesion": 0, "fatroi": 0}
        self._volume_cache: dict[str, Volume] = {}

    # -- volume access ----------------------------------------------------

    def volume(self) -> Volume:
        if self.volume_path is None:
            raise NotFoundError(f"project {self.id}: no volume registered")
        return self._load(self.volume_path)

    def _load(self, path: str) -> Volume:
        if path not in self._volume_cache:
            self._volume_cache[path] = load_volume(path)
        return self._volume_cache[path]

    def heart_mask(self) -> np.ndarray:
        return heart_crop(self.volume(), self.crop_box)

    # -- id allocation ----------------------------------------------------

    def _next_id(self, kind: str, prefix: str) -> str:
        self.counters[kind] += 1
        return f"{prefix}{self.counters[kind]}"

    # -- event plumbing ---------------------------------------------------

    def _record(self, entity_id: str, action: str, payload: dict, stale: list):
        self.events.append(
            {
                "seq": len(self.events),
                "timestamp": _utc_now(),
                "entity_id": entity_id,
                "action": action,
                "payload": payload,
                "stale_marked": sorted(stale),
            }
        )

    def _mark_downstream_stale(self, cid: str) -> list:
        """Centerline/marker change invalidates surfaces, lesions, fat ROIs."""
        marked = []
        for sid, ent in self.surfaces.items():
            if ent["centerline_id"] == cid and not ent["stale"]:
                ent["stale"] = True
                marked.append(sid)
        marked += self._mark_lesions_stale(cid)
        marked += self._mark_fat_rois_stale(cid)
        return marked

    def _mark_lesions_stale(self, cid: str) -> list:
        marked = []
        for lid, ent in self.lesions.items():
            if ent["centerline_id"] == cid and not ent["stale"]:
                ent["stale"] = True
                marked.append(lid)
        return marked

    def _mark_fat_rois_stale(self, cid: str, base: str | None = None) -> list:
        marked = []
        for fid, ent in self.fat_rois.items():
            if ent["centerline_id"] != cid or ent["stale"]:
                continue
            if base is not None and ent["base"] != base:
                continue
            ent["stale"] = True
            marked.append(fid)
        return marked

    def _pair_stale(self, cid: str) -> bool:
        inner = self.surfaces.get(f"{cid}.inner")
        outer = self.surfaces.get(f"{cid}.outer")
        return (
            inner is None or inner["stale"] or outer is None or outer["stale"]
        )

    def _resync_dependents(self, cid: str) -> list:
        """Align lesion and fat-ROI flags with their surfaces after a recompute.

        Lesions and fat ROIs store no derived data; their reports are
        recomputed on demand.  They are stale exactly while their source
        surfaces are, so re-segmenting clears them and segmenting only one
        of the pair leaves lesions stale.  Returns ids that became stale.
        """
        pair_stale = self._pair_stale(cid)
        marked = []
        for lid, ent in sorted(self.lesions.items()):
            if ent["centerline_id"] == cid and ent["stale"] != pair_stale:
                ent["stale"] = pair_stale
                if pair_stale:
                    marked.append(lid)
        for fid, ent in sorted(self.fat_rois.items()):
            if ent["centerline_id"] != cid:
                continue
            surf = self.surfaces.get(f"{cid}.{ent['base']}")
            base_stale = surf is None or surf["stale"]
            if ent["stale"] != base_stale:
                ent["stale"] = base_stale
                if base_stale:
                    marked.append(fid)
        return marked

    # -- entity lookups ---------------------------------------------------

    def _centerline(self, cid: str) -> Centerline:
        if cid not in self.centerlines:
            raise NotFoundError(f"centerline {cid!r} not found")
        return self.centerlines[cid]

    def _markers(self, cid: str) -> SectionMarkers:
        if cid not in self.markers:
            raise NotFoundError(f"centerline {cid!r} has no markers set")
        return self.markers[cid]

    def _surface(self, sid: str) -> dict:
        if sid not in self.surfaces:
            raise NotFoundError(f"surface {sid!r} not found")
        return self.surfaces[sid]

    def _lesion(self, lid: str) -> dict:
        if lid not in self.lesions:
            raise NotFoundError(f"lesion {lid!r} not found")
        return self.lesions[lid]

    def _fat_roi(self, fid: str) -> dict:
        if fid not in self.fat_rois:
            raise NotFoundError(f"fat ROI {fid!r} not found")
        return self.fat_rois[fid]

    def _surface_pair(self, cid: str):
        inner = self._surface(f"{cid}.inner")["surface"]
        outer = self._surface(f"{cid}.outer")["surface"]
        return inner, outer

    # -- mutations (public wrappers + appliers) ----------------------------

    def register_volume(self, path: str) -> None:
        payload = {"path": path}
        self._apply_register_volume(payload)
        self._record("volume", "volume:register", payload, [])

    def _apply_register_volume(self, payload: dict):
        self._load(payload["path"])  # validate eagerly
        self.volume_path = payload["path"]

    def register_de_pair(
        self, path_a: str, meta_a: dict, path_b: str, meta_b: dict
    ) -> dict:
        payload = {
            "path_a": path_a,
            "meta_a": meta_a,
            "path_b": path_b,
            "meta_b": meta_b,
        }
        de = self._apply_register_de_pair(payload)
        self._record("de", "de:pair", payload, [])
        return de

    def _apply_register_de_pair(self, payload: dict) -> dict:
        meta_a = _de.AcquisitionMeta.from_json_dict(payload["meta_a"])
        meta_b = _de.AcquisitionMeta.from_json_dict(payload["meta_b"])
        decision = _de.detect_de_pair(meta_a, meta_b)
        if not decision.paired:
            raise ParameterError(f"volumes are not a dual-energy pair: {decision.reason}")
        paths = (payload["path_a"], payload["path_b"])
        low_path = paths[decision.low_index]
        high_path = paths[decision.high_index]
        pair = _de.register_rigid(self._load(low_path), self._load(high_path))
        self.de = {
            "low_path": low_path,
            "high_path": high_path,
            "transform": pair.transform.to_json_dict(),
            "warnings": list(pair.warnings),
        }
        return self.de

    def de_pair(self) -> _de.DePair:
        if self.de is None:
            raise NotFoundError(f"project {self.id}: no dual-energy pair registered")
        return _de.DePair(
            low_kv=self._load(self.de["low_path"]),
            high_kv=self._load(self.de["high_path"]),
            transform=_de.RigidTransform.from_json_dict(self.de["transform"]),
            warnings=tuple(self.de["warnings"]),
        )

    def set_crop_box(self, lo, hi) -> None:
        payload = {"lo": [float(x) for x in lo], "hi": [float(x) for x in hi]}
        self._apply_set_crop_box(payload)
        self._record("crop", "crop:set", payload, [])

    def _apply_set_crop_box(self, payload: dict):
        box = (tuple(payload["lo"]), tuple(payload["hi"]))
        heart_crop(self.volume(), box)  # validate against the volume
        self.crop_box = box

    def extract_centerline(
        self, seeds, branch_label: str = "vessel", mode: str = "two_seed"
    ) -> str:
        payload = {
            "seeds": [[float(x) for x in s] for s in seeds],
            "branch_label": branch_label,
            "mode": mode,
        }
        cid = self._apply_extract_centerline(payload)
        self._record(cid, "centerline:extract", payload, [])
        return cid

    def _apply_extract_centerline(self, payload: dict) -> str:
        vol = self.volume()
        mask = self.heart_mask()
        seeds = payload["seeds"]
        mode = payload.get("mode", "two_seed")
        label = payload.get("branch_label", "vessel")
        if mode == "two_seed":
            if len(seeds) != 2:
                raise ParameterError("two-seed extraction needs exactly 2 seeds")
            c = _cl.extract_centerline_two_seeds(
                vol, seeds[0], seeds[1], mask=mask, branch_label=label
            )
        elif mode == "single_seed":
            if len(seeds) != 1:
                raise ParameterError("single-seed extraction needs exactly 1 seed")
            c = _cl.extract_centerline_single_seed(vol, seeds[0], branch_label=label)
        else:
            raise ParameterError(f"unknown extraction mode {mode!r}")
        cid = self._next_id("centerline", "cl")
        self.centerlines[cid] = replace(c, id=cid)
        return cid

    def edit_centerline(self, cid: str, edit: dict) -> list:
        payload = {"centerline_id": cid, "edit": edit}
        stale = self._apply_edit_centerline(payload)
        self._record(cid, "centerline:edit", payload, stale)
        return stale

    def _apply_edit_centerline(self, payload: dict) -> list:
        cid = payload["centerline_id"]
        old = self._centerline(cid)
        new = _cl.edit_centerline(old, payload["edit"])
        new = replace(new, id=cid)
        self.centerlines[cid] = new
        if cid in self.markers:
            self.markers[cid] = _cl.reproject_markers(old, new, self.markers[cid])
        return self._mark_downstream_stale(cid)

    def set_markers(self, cid: str, proximal_s: float, distal_s: float) -> list:
        payload = {
            "centerline_id": cid,
            "proximal_s": float(proximal_s),
            "distal_s": float(distal_s),
        }
        stale = self._apply_set_markers(payload)
        self._record(cid, "markers:set", payload, stale)
        return stale

    def _apply_set_markers(self, payload: dict) -> list:
        cid = payload["centerline_id"]
        c = self._centerline(cid)
        self.markers[cid] = _cl.set_markers(
            c, payload["proximal_s"], payload["distal_s"]
        )
        return self._mark_downstream_stale(cid)

    def segment_inner(self, cid: str) -> str:
        payload = {"centerline_id": cid}
        sid, stale = self._apply_segment_inner(payload)
        self._record(sid, "surface:inner", payload, stale)
        return sid

    def _apply_segment_inner(self, payload: dict):
        cid = payload["centerline_id"]
        sv = _rf.straighten(self.volume(), self._centerline(cid), self._markers(cid))
        surface = _wl.segment_inner_wall(sv)
        sid = f"{cid}.inner"
        self.surfaces[sid] = {"centerline_id": cid, "surface": surface, "stale": False}
        return sid, self._resync_dependents(cid)

    def segment_outer(self, cid: str, threshold: float = _wl.OUTER_THRESHOLD_DEFAULT) -> str:
        payload = {"centerline_id": cid, "threshold": float(threshold)}
        sid, stale = self._apply_segment_outer(payload)
        self._record(sid, "surface:outer", payload, stale)
        return sid

    def _apply_segment_outer(self, payload: dict):
        cid = payload["centerline_id"]
        inner_ent = self._surface(f"{cid}.inner")
        sv = _rf.straighten(self.volume(), self._centerline(cid), self._markers(cid))
        surface = _wl.segment_outer_wall(
            sv, inner_ent["surface"], threshold=payload["threshold"]
        )
        sid = f"{cid}.outer"
        self.surfaces[sid] = {"centerline_id": cid, "surface": surface, "stale": False}
        return sid, self._resync_dependents(cid)

    def correct_surface(self, sid: str, constraints: list) -> list:
        payload = {"surface_id": sid, "constraints": constraints}
        stale = self._apply_correct_surface(payload)
        self._record(sid, "surface:correct", payload, stale)
        return stale

    def _apply_correct_surface(self, payload: dict) -> list:
        sid = payload["surface_id"]
        ent = self._surface(sid)
        cons = [
            _wl.EditConstraint(
                s=float(d["s"]),
                theta=float(d["theta"]),
                target_radius=float(d["target_radius"]),
                sigma_s=float(d.get("sigma_s", 2.0)),
                sigma_theta=float(d.get("sigma_theta", np.radians(30.0))),
            )
            for d in payload["constraints"]
        ]
        corrected = _wl.apply_rbf_correction(ent["surface"], cons)
        cid = ent["centerline_id"]
        # keep the pair ordered: inner <= outer everywhere after an edit
        other_kind = "outer" if corrected.kind == "inner" else "inner"
        other_sid = f"{cid}.{other_kind}"
        if other_sid in self.surfaces:
            other = self.surfaces[other_sid]["surface"]
            if corrected.kind == "inner":
                inner, outer = _wl.clamp_pair(corrected, other, edited="inner")
            else:
                inner, outer = _wl.clamp_pair(other, corrected, edited="outer")
            self.surfaces[f"{cid}.inner"]["surface"] = inner
            self.surfaces[f"{cid}.outer"]["surface"] = outer
        else:
            self.surfaces[sid]["surface"] = corrected
        # correction rewrites the surface in place; dependents recompute from
        # it on demand, so their staleness only tracks the pair's sync state
        return self._resync_dependents(cid)

    def set_thresholds(self, t_lipid_fib: float, t_fib_calc: float) -> None:
        payload = {"t_lipid_fib": float(t_lipid_fib), "t_fib_calc": float(t_fib_calc)}
        self._apply_set_thresholds(payload)
        self._record("thresholds", "thresholds:set", payload, [])

    def _apply_set_thresholds(self, payload: dict):
        self.thresholds = CompositionThresholds.from_json_dict(payload)

    def create_lesion(self, cid: str) -> str:
        payload = {"centerline_id": cid}
        lid = self._apply_create_lesion(payload)
        self._record(lid, "lesion:create", payload, [])
        return lid

    def _apply_create_lesion(self, payload: dict) -> str:
        cid = payload["centerline_id"]
        self._centerline(cid)
        self._markers(cid)
        self._surface_pair(cid)
        lid = self._next_id("lesion", "les")
        self.lesions[lid] = {
            "centerline_id": cid,
            "napkin_ring": False,
            "stale": self._pair_stale(cid),
        }
        return lid

    def set_napkin_ring(self, lid: str, value: bool) -> None:
        payload = {"lesion_id": lid, "value": bool(value)}
        self._apply_set_napkin_ring(payload)
        self._record(lid, "lesion:napkin", payload, [])

    def _apply_set_napkin_ring(self, payload: dict):
        self._lesion(payload["lesion_id"])["napkin_ring"] = payload["value"]

    def create_fat_roi(
        self, cid: str, base: str = "outer", width=6.0, s_range=None
    ) -> str:
        payload = {
            "centerline_id": cid,
            "base": base,
            "width": width,
            "s_range": None if s_range is None else [float(s) for s in s_range],
        }
        fid = self._apply_create_fat_roi(payload)
        self._record(fid, "fatroi:create", payload, [])
        return fid

    def _apply_create_fat_roi(self, payload: dict) -> str:
        cid = payload["centerline_id"]
        ent = self._surface(f"{cid}.{payload['base']}")
        roi = _pv.build_fat_roi(
            self.volume(),
            self._centerline(cid),
            ent["surface"],
            base=payload["base"],
            width=payload["width"],
            s_range=None if payload["s_range"] is None else tuple(payload["s_range"]),
        )
        fid = self._next_id("fatroi", "fat")
        self.fat_rois[fid] = {
            "centerline_id": cid,
            "base": payload["base"],
            "width": payload["width"],
            "s_range": [float(roi.s_range[0]), float(roi.s_range[1])],
            "branch_label": roi.branch_label,
            "warnings": list(roi.warnings),
            "stale": ent["stale"],
        }
        return fid

    def auto_fat_rois(self) -> tuple:
        payload = {}
        fids, notices = self._apply_auto_fat_rois(payload)
        self._record(",".join(fids) or "fatroi", "fatroi:auto", payload, [])
        return fids, notices

    def _apply_auto_fat_rois(self, payload: dict):
        entries = []
        for cid, c in sorted(self.centerlines.items()):
            sid = f"{cid}.outer"
            if sid in self.surfaces:
                entries.append((cid, c, self.surfaces[sid]["surface"]))
        rois, notices = _pv.auto_branch_rois(
            self.volume(), [(c, w) for _, c, w in entries]
        )
        fids = []
        by_label = {c.branch_label: cid for cid, c, _ in entries}
        for roi in rois:
            fid = self._next_id("fatroi", "fat")
            roi_cid = by_label[roi.branch_label]
            self.fat_rois[fid] = {
                "centerline_id": roi_cid,
                "base": roi.base,
                "width": _pv.AUTO_WIDTH,
                "s_range": [float(roi.s_range[0]), float(roi.s_range[1])],
                "branch_label": roi.branch_label,
                "warnings": list(roi.warnings),
                "stale": self.surfaces[f"{roi_cid}.outer"]["stale"],
            }
            fids.append(fid)
        return fids, notices

    _APPLIERS = {
        "volume:register": "_apply_register_volume",
        "de:pair": "_apply_register_de_pair",
        "crop:set": "_apply_set_crop_box",
        "centerline:extract": "_apply_extract_centerline",
        "centerline:edit": "_apply_edit_centerline",
        "markers:set": "_apply_set_markers",
        "surface:inner": "_apply_segment_inner",
        "surface:outer": "_apply_segment_outer",
        "surface:correct": "_apply_correct_surface",
        "thresholds:set": "_apply_set_thresholds",
        "lesion:create": "_apply_create_lesion",
        "lesion:napkin": "_apply_set_napkin_ring",
        "fatroi:create": "_apply_create_fat_roi",
        "fatroi:auto": "_apply_auto_fat_rois",
    }

    # -- read-side computations --------------------------------------------

    def rebuild_fat_roi(self, fid: str) -> _pv.FatROI:
        ent = self._fat_roi(fid)
        cid = ent["centerline_id"]
        surf = self._surface(f"{cid}.{ent['base']}")["surface"]
        try:
            return _pv.build_fat_roi(
                self.volume(),
                self._centerline(cid),
                surf,
                base=ent["base"],
                width=ent["width"],
                s_range=tuple(ent["s_range"]),
                branch_label=ent["branch_label"],
                warnings=tuple(ent["warnings"]),
            )
        except ArclengthRangeError as exc:
            if not ent["stale"]:
                raise
            raise StaleEntityError(
                f"fat ROI {fid} geometry no longer applies: {exc}"
            ) from exc

    def fat_roi_stats(self, fid: str) -> dict:
        ent = self._fat_roi(fid)
        roi = self.rebuild_fat_roi(fid)
        stats = _pv.fat_stats(roi, self.volume())
        doc = stats.to_json_dict()
        doc["roi"] = roi.to_json_dict()
        base_ent = self._surface(f"{ent['centerline_id']}.{ent['base']}")
        doc["stale"] = bool(ent["stale"] or base_ent["stale"])
        return doc

    def _lesion_markers(self, cid: str, inner: WallSurface, stale: bool):
        """Markers for a lesion computation, clamped to surface coverage when stale.

        Editing a centerline reprojects the markers onto the new polyline,
        which can drift them a fraction of a millimeter past the frozen
        surface lattice.  A stale report is a best-effort view on the old
        geometry, so the range is clamped to the overlap; an empty overlap
        means the old geometry no longer applies at all.
        """
        m = self._markers(cid)
        if not stale:
            return m
        al = inner.arclengths
        lo = max(float(m.proximal_s), float(al[0]))
        hi = min(float(m.distal_s), float(al[-1]))
        if lo >= hi:
            raise StaleEntityError(
                f"markers [{m.proximal_s:g}, {m.distal_s:g}] no longer overlap "
                f"surface coverage [{al[0]:g}, {al[-1]:g}]; recompute the surfaces"
            )
        if lo == m.proximal_s and hi == m.distal_s:
            return m
        return SectionMarkers(centerline_id=cid, proximal_s=lo, distal_s=hi)

    def _lesion_geometry(self, lid: str):
        """(centerline_id, inner, outer, markers, stale) for a lesion."""
        ent = self._lesion(lid)
        cid = ent["centerline_id"]
        inner, outer = self._surface_pair(cid)
        stale = bool(
            ent["stale"]
            or self._surface(f"{cid}.inner")["stale"]
            or self._surface(f"{cid}.outer")["stale"]
        )
        markers = self._lesion_markers(cid, inner, stale)
        return ent, cid, inner, outer, markers, stale

    def lesion_report(self, lid: str) -> dict:
        ent, cid, inner, outer, markers, stale = self._lesion_geometry(lid)
        try:
            report = _pl.build_lesion_report(
                self.volume(),
                self._centerline(cid),
                inner,
                outer,
                markers,
                thresholds=self.thresholds,
                lesion_id=lid,
                napkin_ring=ent["napkin_ring"],
            )
        except ArclengthRangeError as exc:
            if not stale:
                raise
            raise StaleEntityError(
                f"lesion {lid} geometry no longer applies: {exc}"
            ) from exc
        report = replace(report, stale=stale)
        return report.to_json_dict()

    def lesion_histogram_csv(self, lid: str) -> str:
        ent, cid, inner, outer, markers, stale = self._lesion_geometry(lid)
        try:
            region = _pl.build_plaque_region(
                self.volume(), self._centerline(cid), inner, outer, markers, lid
            )
        except ArclengthRangeError as exc:
            if not stale:
                raise
            raise StaleEntityError(
                f"lesion {lid} geometry no longer applies: {exc}"
            ) from exc
        vals = region.values(self.volume())
        hist = _pl.sparse_histogram(_pl.hu_histogram(vals))
        lines = [",".join(_pl.HIST_CSV_HEADER)]
        for b, n in hist:
            lines.append(
                f"{b},{b + 1},{n},{format(n * region.voxel_volume_mm3, '.10g')}"
            )
        return "\n".join(lines) + "\n"

    def section_payload(
        self,
        cid: str,
        s: float,
        extent: float = _rf.DEFAULT_EXTENT_MM,
        spacing: float = _rf.DEFAULT_PIXEL_MM,
    ) -> bytes:
        sec = _rf.cross_section(
            self.volume(), self._centerline(cid), s, extent=extent, spacing=spacing
        )
        return sec.to_payload()

    def preview_outer_section(
        self, cid: str, s: float, threshold: float
    ) -> dict:
        """Raw outer radii of the single section nearest s, for live preview."""
        inner_ent = self._surface(f"{cid}.inner")
        inner = inner_ent["surface"]
        al = inner.arclengths
        k = int(np.argmin(np.abs(al - float(s))))
        sec = _rf.cross_section(self.volume(), self._centerline(cid), float(al[k]))
        sampling = _wl.PolarSampling()
        sv = _rf.StraightenedVolume(sections=(sec,), step_s=inner.step_s)
        inner_row = WallSurface(
            kind="inner",
            radii=inner.radii[k : k + 1],
            arclengths=al[k : k + 1],
            step_s=inner.step_s,
        )
        raw = _wl.raw_outer_radii(sv, inner_row, threshold, sampling)
        return {
            "arclength": float(al[k]),
            "threshold": float(threshold),
            "angles_n": int(raw.shape[1]),
            "inner_radii": [float(x) for x in inner.radii[k]],
            "raw_outer_radii": [float(x) for x in raw[0]],
        }

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "id": self.id,
            "volume": None if self.volume_path is None else {"path": self.volume_path},
            "de": self.de,
            "crop_box": None
            if self.crop_box is None
            else {"lo": list(self.crop_box[0]), "hi": list(self.crop_box[1])},
            "centerlines": {
                cid: {
                    **c.to_json_dict(),
                    "markers": self.markers[cid].to_json_dict()
                    if cid in self.markers
                    else None,
                }
                for cid, c in self.centerlines.items()
            },
            "surfaces": {
                sid: {
                    "centerline_id": ent["centerline_id"],
                    "stale": ent["stale"],
                    **ent["surface"].to_json_dict(),
                }
                for sid, ent in self.surfaces.items()
            },
            "lesions": self.lesions,
            "fat_rois": self.fat_rois,
            "thresholds": self.thresholds.to_json_dict(),
            "migration_notes": self.migration_notes,
            "counters": self.counters,
            "events": self.events,
        }

    def serialize(self) -> bytes:
        return canonical_json(self.to_json_dict())

    @staticmethod
    def from_json_dict(doc: dict) -> "Project":
        version = doc.get("schema_version", 0)
        notes = list(doc.get("migration_notes", []))
        if version > CURRENT_SCHEMA_VERSION:
            raise VersionError(
                f"project schema_version {version} is newer than supported "
                f"{CURRENT_SCHEMA_VERSION}"
            )
        if version < CURRENT_SCHEMA_VERSION:
            doc, migration = _migrate(doc, version)
            notes += migration
        p = Project(doc["id"])
        p.volume_path = None if doc.get("volume") is None else doc["volume"]["path"]
        p.de = doc.get("de")
        if doc.get("crop_box") is not None:
            p.crop_box = (
                tuple(doc["crop_box"]["lo"]),
                tuple(doc["crop_box"]["hi"]),
            )
        for cid, cd in doc.get("centerlines", {}).items():
            p.centerlines[cid] = Centerline.from_json_dict(cd)
            if cd.get("markers") is not None:
                p.markers[cid] = SectionMarkers.from_json_dict(cd["markers"])
        for sid, sd in doc.get("surfaces", {}).items():
            p.surfaces[sid] = {
                "centerline_id": sd["centerline_id"],
                "stale": bool(sd["stale"]),
                "surface": WallSurface.from_json_dict(sd),
            }
        p.lesions = {lid: dict(v) for lid, v in doc.get("lesions", {}).items()}
        p.fat_rois = {fid: dict(v) for fid, v in doc.get("fat_rois", {}).items()}
        p.thresholds = CompositionThresholds.from_json_dict(
            doc.get("thresholds", CompositionThresholds().to_json_dict())
        )
        p.migration_notes = notes
        p.events = [dict(e) for e in doc.get("events", [])]
        p.counters = dict(doc.get("counters", p.counters))
        return p


def _migrate(doc: dict, version: int):
    """Bring an old project document up to the current schema."""
    if version == 0:
        doc = dict(doc)
        doc.setdefault("thresholds", CompositionThresholds().to_json_dict())
        doc.setdefault("events", [])
        doc.setdefault("counters", {"centerline": 0, "lesion": 0, "fatroi": 0})
        doc["schema_version"] = 1
        return doc, ["migrated from schema_version 0"]
    raise VersionError(f"no migration path from schema_version {version}")


def save_project(project: Project, path: str) -> str:
    with open(path, "wb") as fh:
        fh.write(project.serialize())
    return path


def load_project(path: str) -> Project:
    try:
        with open(path, "rb") as fh:
            doc = json.loads(fh.read().decode("utf-8"))
    except OSError as exc:
        raise ParseError(f"{path}: cannot read project: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{path}: corrupt project JSON: {exc}") from exc
    if not isinstance(doc, dict) or "id" not in doc:
        raise ParseError(f"{path}: not a project document")
    return Project.from_json_dict(doc)


def replay(project_id: str, events: list) -> Project:
    """Re-apply an event log onto a fresh project.

    Appliers are deterministic, and each event's stored timestamp is
    preserved verbatim, so the replayed project serializes to exactly
    the same bytes as the original.
    """
    p = Project(project_id)
    for event in events:
        applier = getattr(p, Project._APPLIERS[event["action"]])
        applier(event["payload"])
        p.events.append(dict(event))
    return p


# ---------------------------------------------------------------------------
# batch pipeline


PIPELINE_STEPS = (
    (1, "heart_isolation"),
    (2, "centerline_extraction"),
    (3, "wall_segmentation"),
    (4, "plaque_quantification"),
)


def _fresh_chain(project: Project) -> list:
    """Lesions of any complete, fully non-stale centerline chain."""
    for cid in sorted(project.centerlines):
        if cid not in project.markers or project._pair_stale(cid):
            continue
        lids = sorted(
            lid
            for lid, ent in project.lesions.items()
            if ent["centerline_id"] == cid and not ent["stale"]
        )
        if lids:
            return lids
    return []


def run_pipeline(project: Project, config: PipelineConfig) -> dict:
    """Execute the four processing steps in order on a fresh project.

    Re-running with unchanged inputs is a no-op: when a complete chain of
    derived artifacts (centerline with markers, surface pair, lesion)
    already exists with nothing stale, the project state (including its
    event log) is left untouched, so serialized output is byte-identical.
    A stale chain, e.g. after a manual centerline edit, is left in place
    and a fresh chain is built alongside it; the stale entities remain
    queryable with their stale flags until deleted or re-segmented.
    """
    if project.volume_path is None:
        raise PipelineStepError(1, "heart_isolation", "no volume registered")

    lids = _fresh_chain(project)
    if lids:
        return {"skipped": True, "lesions": lids}

    # step 1: heart isolation (crop box surrogate)
    try:
        if config.crop_box is not None:
            project.set_crop_box(config.crop_box[0], config.crop_box[1])
    except Exception as exc:
        raise PipelineStepError(1, "heart_isolation", str(exc)) from exc

    # step 2: centerline extraction
    if config.seeds is None:
        raise PipelineStepError(2, "centerline_extraction", "seeds missing")
    try:
        cid = project.extract_centerline(config.seeds, config.branch_label)
        c = project.centerlines[cid]
        if config.markers is not None:
            project.set_markers(cid, config.markers[0], config.markers[1])
        else:
            project.set_markers(cid, 0.0, c.total_length)
    except PipelineStepError:
        raise
    except Exception as exc:
        raise PipelineStepError(2, "centerline_extraction", str(exc)) from exc

    # step 3: lumen and outer wall segmentation
    try:
        project.segment_inner(cid)
        project.segment_outer(cid, config.outer_threshold)
    except Exception as exc:
        raise PipelineStepError(3, "wall_segmentation", str(exc)) from exc

    # step 4: plaque quantification over the marked span
    try:
        project.set_thresholds(
            config.thresholds.t_lipid_fib, config.thresholds.t_fib_calc
        )
        lid = project.create_lesion(cid)
        report = project.lesion_report(lid)
    except Exception as exc:
        raise PipelineStepError(4, "plaque_quantification", str(exc)) from exc

    return {
        "skipped": False,
        "centerline_id": cid,
        "lesion_id": lid,
        "report": report,
    }
