"""Command-line entry points.

    coroplaq phantom    --spec '{"kind": "stenosed_tube", ...}' --out v.mhd
    coroplaq centerline --volume v.mhd --seeds @seeds.json --out cl.json
    coroplaq report     --volume v.mhd --seeds @seeds.json --out report.json
    coroplaq run        --project p.coroplaq.json [--volume v.mhd] [--config @c.json]
    coroplaq serve      --port 8787 [--data DIR]

JSON arguments are literals or @path references to JSON files.  Seeds
take either {"a": [x,y,z], "b": [x,y,z]} for two-seed extraction or
{"seed": [x,y,z]} for single-seed tracking; coordinates are world mm.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import phantoms
from .errors import CoroplaqError, ParameterError, ParseError
from .project import (
    PipelineConfig,
    Project,
    load_project,
    run_pipeline,
    save_project,
)
from .volume import write_volume


def _read_json_arg(text: str):
    """JSON literal, or @path to a JSON file."""
    try:
        if text.startswith("@"):
            with open(text[1:], "r", encoding="utf-8") as fh:
                return json.load(fh)
        return json.loads(text)
    except OSError as exc:
        raise ParseError(f"cannot read {text[1:]!r}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"invalid JSON argument: {exc}") from exc


def _load_seeds(arg: str):
    doc = _read_json_arg(arg)
    if isinstance(doc, dict) and "a" in doc and "b" in doc:
        return [doc["a"], doc["b"]], "two_seed"
    if isinstance(doc, dict) and "seed" in doc:
        return [doc["seed"]], "single_seed"
    if isinstance(doc, list) and len(doc) == 2:
        return doc, "two_seed"
    raise ParseError(f"{arg!r}: expected {{'a','b'}}, {{'seed'}}, or a 2-point list")


def _cmd_phantom(args) -> int:
    spec = _read_json_arg(args.spec)
    ph = phantoms.make_phantom(spec)
    if isinstance(ph, phantoms.DePairPhantom):
        base, ext = os.path.splitext(args.out)
        low_path = f"{base}_low{ext or '.mhd'}"
        high_path = f"{base}_high{ext or '.mhd'}"
        write_volume(ph.low, low_path)
        write_volume(ph.high, high_path)
        for path, kvp in ((low_path, 80), (high_path, 140)):
            with open(path + ".meta.json", "w", encoding="utf-8") as fh:
                json.dump(
                    {"kvp": kvp, "frame_of_reference": "phantom", "series_time": ""},
                    fh,
                )
        print(f"wrote {low_path} and {high_path} (with .meta.json sidecars)")
        return 0
    write_volume(ph.volume, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_centerline(args) -> int:
    seeds, mode = _load_seeds(args.seeds)
    p = Project("cli")
    p.register_volume(args.volume)
    cid = p.extract_centerline(seeds, branch_label=args.label, mode=mode)
    c = p.centerlines[cid]
    doc = {**c.to_json_dict(), "markers": None, "total_length": c.total_length}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out} ({c.points.shape[0]} points, {c.total_length:.1f} mm)")
    return 0


def _cmd_report(args) -> int:
    seeds, mode = _load_seeds(args.seeds)
    if mode != "two_seed":
        raise ParameterError("report needs a two-seed file ({'a': ..., 'b': ...})")
    p = Project(os.path.splitext(os.path.basename(args.out))[0] or "report")
    p.register_volume(args.volume)
    cfg = PipelineConfig(
        seeds=(tuple(seeds[0]), tuple(seeds[1])),
        branch_label=args.label,
        markers=tuple(args.markers) if args.markers else None,
        outer_threshold=args.threshold,
    )
    result = run_pipeline(p, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(result["report"], fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_run(args) -> int:
    if os.path.exists(args.project):
        p = load_project(args.project)
    else:
        pid = os.path.basename(args.project).split(".")[0] or "project"
        p = Project(pid)
    if args.volume:
        p.register_volume(args.volume)
    cfg = (
        PipelineConfig.from_json_dict(_read_json_arg(args.config))
        if args.config
        else PipelineConfig()
    )
    result = run_pipeline(p, cfg)
    save_project(p, args.project)
    status = "skipped (fresh)" if result.get("skipped") else "completed"
    print(f"pipeline {status}; project saved to {args.project}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    uvicorn.run(
        create_app(data_dir=args.data),
        host=args.host,
        port=args.port,
        log_level="warning",
    )
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="coroplaq")
    sub = ap.add_subparsers(dest="command", required=True)

    p_ph = sub.add_parser("phantom", help="rasterize an analytic phantom volume")
    p_ph.add_argument("--spec", required=True, help="JSON literal or @file")
    p_ph.add_argument("--out", required=True, help="output .mhd path")
    p_ph.set_defaults(fn=_cmd_phantom)

    p_cl = sub.add_parser("centerline", help="extract a centerline from seeds")
    p_cl.add_argument("--volume", required=True)
    p_cl.add_argument("--seeds", required=True, help="seeds JSON literal or @file")
    p_cl.add_argument("--out", required=True, help="output centerline JSON")
    p_cl.add_argument("--label", default="vessel")
    p_cl.set_defaults(fn=_cmd_centerline)

    p_rp = sub.add_parser("report", help="full pipeline to a lesion report")
    p_rp.add_argument("--volume", required=True)
    p_rp.add_argument("--seeds", required=True)
    p_rp.add_argument("--out", required=True)
    p_rp.add_argument("--label", default="vessel")
    p_rp.add_argument("--markers", nargs=2, type=float, default=None,
                      metavar=("PROXIMAL_S", "DISTAL_S"))
    p_rp.add_argument("--threshold", type=float, default=0.3)
    p_rp.set_defaults(fn=_cmd_report)

    p_run = sub.add_parser("run", help="run the pipeline on a project file")
    p_run.add_argument("--project", required=True, help=".coroplaq.json path")
    p_run.add_argument("--volume", default=None, help="register this volume first")
    p_run.add_argument("--config", default=None, help="JSON literal or @file")
    p_run.set_defaults(fn=_cmd_run)

    p_sv = sub.add_parser("serve", help="start the session HTTP service")
    p_sv.add_argument("--port", type=int, default=8787)
    p_sv.add_argument("--host", default="127.0.0.1")
    p_sv.add_argument("--data", default=None, help="base dir for relative volume paths")
    p_sv.set_defaults(fn=_cmd_serve)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except CoroplaqError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
