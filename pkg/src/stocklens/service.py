"""HTTP API over the run coordinator.

Every JSON body is rendered with the same canonical serializer the CLI
uses, so a CLI subcommand and its matching endpoint return byte-identical
payloads. The service never mutates run state in request handlers beyond
create/cancel; long work (coordinator loops, tolerance sweeps) happens in
daemon threads, one writer per run directory, while reads go straight to
the snapshot files.
"""

from __future__ import annotations

import threading
import time
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import StreamingResponse

from .designspec import spec_from_json, validate_and_sketch
from .jsonio import SCHEMA_VERSION, canonical_dumps, read_json
from .merit.config import config_from_json
from .runs import (RunConfig, RunStateError, UnknownRunError,
                   candidate_calibration_payload, candidate_mtf_payload,
                   candidate_payload, candidate_psf_payload, create_run,
                   events_path, evolution_from_json, execute_run, list_runs,
                   load_manifest, load_status, pool_entry, request_cancel,
                   run_catalog, run_dir, run_summary)
from .tolerance import (run_tolerance, tolerance_config_from_json,
                        tolerance_config_to_json)

_TERMINAL = ("done", "failed", "cancelled")


def _json(payload: dict, status_code: int = 200) -> Response:
    return Response(content=canonical_dumps(payload) + "\n",
                    media_type="application/json", status_code=status_code)


def _error(status_code: int, message: str) -> Response:
    return _json({"schema_version": SCHEMA_VERSION, "error": message},
                 status_code)


def create_app(root, frontend_dir=None) -> FastAPI:
    """App factory; `root` is the directory that holds one subdirectory
    per run. Handlers resolve the catalog from each run's manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="stocklens", docs_url=None, redoc_url=None)
    jobs: dict[str, dict] = {}
    jobs_lock = threading.Lock()

    @app.exception_handler(UnknownRunError)
    async def _unknown_run(request: Request, exc: UnknownRunError):
        return _error(404, f"unknown run {exc.args[0]!r}")

    @app.exception_handler(RunStateError)
    async def _bad_transition(request: Request, exc: RunStateError):
        return _error(409, str(exc))

    @app.exception_handler(IndexError)
    async def _bad_rank(request: Request, exc: IndexError):
        return _error(404, str(exc))

    @app.exception_handler(FileNotFoundError)
    async def _not_ready(request: Request, exc: FileNotFoundError):
        return _error(404, str(exc))

    @app.post("/api/spec/validate")
    async def spec_validate(request: Request):
        try:
            doc = await request.json()
        except Exception:
            return _error(400, "body must be a JSON object")
        if not isinstance(doc, dict):
            return _error(400, "body must be a JSON object")
        return _json(validate_and_sketch(doc))

    @app.post("/api/runs")
    async def start_run(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "body must be a JSON object")
        try:
            spec = spec_from_json(body["spec"])
            evo_doc = dict(body.get("evolution", {}))
            if "seed" not in evo_doc:
                raise ValueError("evolution.seed is required")
            evo_doc.setdefault("strategy", "pool_swap")
            evo = evolution_from_json(evo_doc)
            cfg = RunConfig(iterations=int(body.get("iterations", 3)),
                            workers=int(body.get("workers", 1)))
            merit = (config_from_json(body["merit"])
                     if "merit" in body else None)
            catalog_ref = str(body.get("catalog", "bundled"))
            d = create_run(root, spec, evo, cfg,
                           run_id=body.get("run_id"), merit_config=merit,
                           catalog_ref=catalog_ref)
        except (KeyError, ValueError, TypeError) as exc:
            return _error(422, f"invalid run request: {exc}")
        worker = threading.Thread(target=_run_quietly, args=(d,), daemon=True)
        worker.start()
        return _json(run_summary(d), 201)

    @app.get("/api/runs")
    async def get_runs():
        summaries = [run_summary(root / rid) for rid in list_runs(root)]
        return _json({"schema_version": SCHEMA_VERSION, "runs": summaries})

    @app.get("/api/runs/{rid}")
    async def get_run(rid: str):
        return _json(run_summary(run_dir(root, rid)))

    @app.post("/api/runs/{rid}/cancel")
    async def cancel_run(rid: str):
        return _json(request_cancel(run_dir(root, rid)))

    @app.get("/api/runs/{rid}/candidates")
    async def get_candidates(rid: str):
        d = run_dir(root, rid)
        pool = _latest_pool(d)
        rows = [{"rank": i, "identity": list(e.identity), "score": e.score}
                for i, e in enumerate(pool.entries)]
        return _json({"schema_version": SCHEMA_VERSION,
                      "iteration": pool.iteration, "candidates": rows})

    @app.get("/api/runs/{rid}/candidates/{rank}")
    async def get_candidate(rid: str, rank: int):
        d = run_dir(root, rid)
        return _json(candidate_payload(d, run_catalog(d), rank))

    @app.get("/api/runs/{rid}/candidates/{rank}/psf")
    async def get_candidate_psf(rid: str, rank: int, field: int = 0,
                                channel: str = "G"):
        d = run_dir(root, rid)
        try:
            text = candidate_psf_payload(d, run_catalog(d), rank,
                                         field, channel)
        except KeyError as exc:
            return _error(404, str(exc.args[0]))
        return Response(content=text, media_type="text/plain")

    @app.get("/api/runs/{rid}/candidates/{rank}/mtf")
    async def get_candidate_mtf(rid: str, rank: int):
        d = run_dir(root, rid)
        return _json(candidate_mtf_payload(d, run_catalog(d), rank))

    @app.get("/api/runs/{rid}/candidates/{rank}/calibration")
    async def get_candidate_calibration(rid: str, rank: int,
                                        grid_density: int = 5):
        d = run_dir(root, rid)
        return _json(candidate_calibration_payload(
            d, run_catalog(d), rank, grid_density=grid_density))

    @app.post("/api/runs/{rid}/candidates/{rank}/tolerance")
    async def start_tolerance(rid: str, rank: int, request: Request):
        d = run_dir(root, rid)
        try:
            body = await request.json()
        except Exception:
            body = {}
        try:
            cfg = tolerance_config_from_json(body or {})
        except (ValueError, TypeError) as exc:
            return _error(422, f"invalid tolerance config: {exc}")
        entry = pool_entry(d, run_catalog(d), rank)  # 404 before spawning
        job = uuid.uuid4().hex[:12]
        record = {"schema_version": SCHEMA_VERSION, "job": job, "run": rid,
                  "rank": rank, "config": tolerance_config_to_json(cfg),
                  "status": "running", "report": None}
        with jobs_lock:
            jobs[job] = record
        worker = threading.Thread(
            target=_tolerance_quietly, args=(d, entry, cfg, job),
            daemon=True)
        worker.start()
        return _json({"schema_version": SCHEMA_VERSION, "job": job,
                      "status": "running"}, 202)

    @app.get("/api/tolerance/{job}")
    async def get_tolerance(job: str):
        with jobs_lock:
            record = jobs.get(job)
        if record is None:
            record = _find_persisted_job(job)
        if record is None:
            return _error(404, f"unknown tolerance job {job!r}")
        return _json(record)

    @app.get("/api/runs/{rid}/events")
    async def get_events(rid: str):
        d = run_dir(root, rid)
        return StreamingResponse(_follow_events(d),
                                 media_type="application/x-ndjson")

    def _run_quietly(d) -> None:
        try:
            execute_run(d)
        except Exception:
            pass  # status.json already records the failure

    def _tolerance_quietly(d, entry, cfg, job: str) -> None:
        try:
            merit = config_from_json(load_manifest(d)["merit"])
            report = run_tolerance(entry.system, merit, cfg)
            update = {"status": "done", "report": report.to_json()}
        except Exception as exc:
            update = {"status": "failed",
                      "error": f"{type(exc).__name__}: {exc}"}
        with jobs_lock:
            jobs[job].update(update)
            record = dict(jobs[job])
        path = Path(d) / f"tolerance_{job}.json"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(canonical_dumps(record))
        tmp.replace(path)

    def _latest_pool(d):
        from .runs import load_pool
        return load_pool(d, run_catalog(d))

    def _find_persisted_job(job: str) -> Optional[dict]:
        for rid in list_runs(root):
            path = root / rid / f"tolerance_{job}.json"
            if path.is_file():
                return read_json(path)
        return None

    def _follow_events(d):
        """Replay events.jsonl and keep tailing it until the run settles."""
        path = events_path(d)
        offset = 0
        while True:
            with open(path, "r") as fh:
                fh.seek(offset)
                chunk = fh.read()
                offset = fh.tell()
            if chunk:
                yield chunk
            if load_status(d)["status"] in _TERMINAL:
                break
            time.sleep(0.2)

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="frontend")

    return app
