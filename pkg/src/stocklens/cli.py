"""Command-line interface over the same payload builders the HTTP API uses.

Each read subcommand prints the canonical JSON document its matching
endpoint serves, byte for byte, so scripts can switch between the two
surfaces freely. Long work (design runs, tolerance sweeps) runs in the
foreground here; the service runs it in background threads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .catalog import generate_synthetic_catalog, load_catalog, save_catalog
from .designspec import spec_from_json
from .errors import CatalogParseError, CatalogValidationError
from .jsonio import SCHEMA_VERSION, canonical_dumps, read_json
from .merit.config import config_from_json
from .runs import (RunConfig, RunStateError, UnknownRunError,
                   candidate_calibration_payload, candidate_mtf_payload,
                   candidate_payload, candidate_psf_payload, create_run,
                   evolution_from_json, execute_run, load_manifest,
                   pool_entry, run_catalog, run_dir, run_summary)
from .tolerance import ToleranceConfig, run_tolerance

_SPEC_FLAGS = (
    ("fov", float), ("f_number", float), ("sensor", str),
    ("object_distance", str), ("object_tilt", float), ("fov_tol", float),
    ("pixel_pitch_um", float), ("max_elements", int), ("max_length", float),
    ("max_cost", float), ("merit_mode", str),
)


def _emit(payload: dict) -> None:
    print(canonical_dumps(payload))


def _add_root(p: argparse.ArgumentParser) -> None:
    p.add_argument("--root", default="runs",
                   help="directory holding one subdirectory per run")


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="design spec JSON file; "
                   "individual flags below override its fields")
    for name, typ in _SPEC_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), type=typ, default=None)
    p.add_argument("--flange-min", type=float, default=None)
    p.add_argument("--flange-max", type=float, default=None)


def _spec_doc(args) -> dict:
    doc = dict(read_json(args.spec)) if args.spec else {}
    for name, _ in _SPEC_FLAGS:
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    if args.flange_min is not None or args.flange_max is not None:
        lo, hi = doc.get("flange_range", (2.0, 200.0))
        doc["flange_range"] = [
            args.flange_min if args.flange_min is not None else lo,
            args.flange_max if args.flange_max is not None else hi,
        ]
    return doc


def _build_catalog_gen(sub) -> None:
    p = sub.add_parser("gen", help="write a synthetic catalog CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--counts", default=None,
                   help="JSON object of per-kind element counts")


def _cmd_catalog(args) -> int:
    if args.action == "gen":
        counts = json.loads(args.counts) if args.counts else None
        catalog = generate_synthetic_catalog(args.seed, counts)
        save_catalog(catalog, args.out)
        _emit({"schema_version": SCHEMA_VERSION, "path": args.out,
               "elements": len(catalog)})
        return 0
    try:
        catalog = load_catalog(args.path)
    except (ValueError, KeyError, CatalogParseError,
            CatalogValidationError) as exc:
        _emit({"schema_version": SCHEMA_VERSION, "valid": False,
               "error": str(exc)})
        return 2
    _emit({"schema_version": SCHEMA_VERSION, "valid": True,
           "elements": len(catalog)})
    return 0


def _cmd_design(args) -> int:
    if args.action == "run":
        spec = spec_from_json(_spec_doc(args))
        evo = evolution_from_json({
            "strategy": args.strategy, "seed": args.seed,
            "pool_size": args.pool_size, "budget": args.budget,
            "form": args.form,
        })
        merit = config_from_json(read_json(args.merit)) if args.merit else None
        d = create_run(Path(args.root), spec, evo,
                       RunConfig(iterations=args.iterations,
                                 workers=args.workers),
                       run_id=args.run_id, merit_config=merit,
                       catalog_ref=args.catalog)
        execute_run(d)
    elif args.action == "resume":
        d = run_dir(args.root, args.run_id)
        execute_run(d)
    else:
        d = run_dir(args.root, args.run_id)
    _emit(run_summary(d))
    return 0


def _cmd_candidate(args) -> int:
    d = run_dir(args.root, args.run_id)
    catalog = run_catalog(d)
    if args.action == "show":
        _emit(candidate_payload(d, catalog, args.rank))
    elif args.action == "psf":
        sys.stdout.write(candidate_psf_payload(d, catalog, args.rank,
                                               args.field, args.channel))
    elif args.action == "mtf":
        _emit(candidate_mtf_payload(d, catalog, args.rank))
    else:
        _emit(candidate_calibration_payload(d, catalog, args.rank,
                                            grid_density=args.grid_density))
    return 0


def _cmd_tolerance(args) -> int:
    d = run_dir(args.root, args.run_id)
    entry = pool_entry(d, run_catalog(d), args.rank)
    merit = config_from_json(load_manifest(d)["merit"])
    cfg = ToleranceConfig(element_sigma_um=args.element_sigma_um,
                          element_cap_um=args.element_cap_um,
                          sensor_sigma_um=args.sensor_sigma_um,
                          sensor_cap_um=args.sensor_cap_um,
                          runs=args.runs, seed=args.seed)
    if args.scale != 1.0:
        cfg = cfg.scaled(args.scale)
    report = run_tolerance(entry.system, merit, cfg)
    _emit(report.to_json())
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.root, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stocklens",
        description="design camera lenses from stock catalog elements")
    top = parser.add_subparsers(dest="command", required=True)

    cat = top.add_parser("catalog", help="generate or check catalog CSVs")
    cat_sub = cat.add_subparsers(dest="action", required=True)
    _build_catalog_gen(cat_sub)
    v = cat_sub.add_parser("validate", help="parse a catalog CSV strictly")
    v.add_argument("path")

    design = top.add_parser("design", help="run the combinatorial search")
    design_sub = design.add_subparsers(dest="action", required=True)
    r = design_sub.add_parser("run", help="create a run and execute it")
    _add_spec_flags(r)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--strategy", default="pool_swap",
                   choices=("random", "greedy", "pool", "pool_swap"))
    r.add_argument("--iterations", type=int, default=3)
    r.add_argument("--budget", type=int, default=500)
    r.add_argument("--pool-size", type=int, default=60)
    r.add_argument("--form", default="triplet")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--catalog", default="bundled",
                   help="'bundled', 'toy', or a catalog CSV path")
    r.add_argument("--merit", help="merit configuration JSON file")
    r.add_argument("--run-id", default=None)
    _add_root(r)
    for action in ("resume", "status"):
        p = design_sub.add_parser(action)
        p.add_argument("run_id")
        _add_root(p)

    cand = top.add_parser("candidate", help="inspect ranked candidates")
    cand_sub = cand.add_subparsers(dest="action", required=True)
    for action in ("show", "psf", "mtf", "calib"):
        p = cand_sub.add_parser(action)
        p.add_argument("run_id")
        p.add_argument("rank", type=int)
        if action == "psf":
            p.add_argument("--field", type=int, default=0)
            p.add_argument("--channel", default="G")
        if action == "calib":
            p.add_argument("--grid-density", type=int, default=5)
        _add_root(p)

    tol = top.add_parser("tolerance", help="assembly-error Monte Carlo")
    tol_sub = tol.add_subparsers(dest="action", required=True)
    t = tol_sub.add_parser("run")
    t.add_argument("run_id")
    t.add_argument("rank", type=int)
    t.add_argument("--runs", type=int, default=ToleranceConfig().runs)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--element-sigma-um", type=float,
                   default=ToleranceConfig().element_sigma_um)
    t.add_argument("--element-cap-um", type=float,
                   default=ToleranceConfig().element_cap_um)
    t.add_argument("--sensor-sigma-um", type=float,
                   default=ToleranceConfig().sensor_sigma_um)
    t.add_argument("--sensor-cap-um", type=float,
                   default=ToleranceConfig().sensor_cap_um)
    t.add_argument("--scale", type=float, default=1.0)
    _add_root(t)

    serve = top.add_parser("serve", help="start the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--frontend", default=None,
                       help="directory of built UI assets to mount at /")
    _add_root(serve)

    return parser


_COMMANDS = {
    "catalog": _cmd_catalog,
    "design": _cmd_design,
    "candidate": _cmd_candidate,
    "tolerance": _cmd_tolerance,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UnknownRunError as exc:
        print(f"unknown run: {exc.args[0]}", file=sys.stderr)
        return 3
    except RunStateError as exc:
        print(str(exc), file=sys.stderr)
        return 4
    except IndexError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
