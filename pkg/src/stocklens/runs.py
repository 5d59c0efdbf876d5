"""Design-run lifecycle on disk: one directory per run holding the manifest,
per-iteration pool snapshots, a status file, and an append-only event log.

The coordinator is the directory's single writer; the CLI and the HTTP
service read the same files, so both surfaces serve byte-identical payloads
by construction. Snapshots are canonical JSON keyed only by the run's seed
and configuration, which makes two runs of the same spec diffable file by
file and lets a killed run resume from its last snapshot without drift:
iteration t+1 is planned from snapshot t and the run seed alone, never from
coordinator memory.
"""

from __future__ import annotations

import os
import re
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .catalog import Catalog, bundled_catalog, load_catalog
from .designspec import DesignSpec, spec_from_json, spec_to_json
from .jsonio import SCHEMA_VERSION, canonical_dumps, read_json
from .merit.calibrate import calibration_table
from .merit.config import (MeritConfig, channel_psf_wavelength,
                           config_from_json, config_to_json)
from .merit.mtf import mtf_from_psf, mtf_scores
from .merit.psf import psf_to_text, render_psf
from .search import (CandidatePool, EvolutionConfig, PoolEntry, SplitConfig,
                     evolve, pool_from_json, pool_to_json, seed_pool,
                     spec_merit_config)

__all__ = [
    "RunConfig", "RunStateError", "UnknownRunError", "create_run",
    "execute_run", "request_cancel", "load_manifest", "load_status",
    "load_pool", "latest_iteration", "list_runs", "run_summary",
    "candidate_payload", "candidate_psf_payload", "candidate_mtf_payload",
    "candidate_calibration_payload", "evolution_to_json",
    "evolution_from_json", "events_path", "pool_entry", "resolve_catalog",
    "run_catalog",
]

QUEUED, RUNNING, DONE, FAILED, CANCELLED = \
    "queued", "running", "done", "failed", "cancelled"
_TRANSITIONS = {
    QUEUED: {RUNNING, CANCELLED, FAILED},
    RUNNING: {DONE, FAILED, CANCELLED},
    DONE: set(),
    FAILED: set(),
    CANCELLED: set(),
}

_SNAPSHOT_RE = re.compile(r"^pool_(\d{4})\.json$")


class RunStateError(ValueError):
    """Requested lifecycle transition is not allowed from the current state."""


class UnknownRunError(KeyError):
    """No run directory with that id."""


@dataclass(frozen=True)
class RunConfig:
    """Coordinator knobs that are not part of the search semantics: how many
    evolution iterations to run and how many worker processes evaluate
    candidates. Results are independent of `workers` by contract."""

    iterations: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def evolution_to_json(cfg: EvolutionConfig) -> dict:
    return {
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "pool_size": cfg.pool_size,
        "budget": cfg.budget,
        "form": cfg.form,
        "power_tol": cfg.power_tol,
        "diam_tol": cfg.diam_tol,
        "split": {
            "alpha": cfg.split.alpha,
            "diameter_tol": cfg.split.diameter_tol,
            "curvature_rule": cfg.split.curvature_rule,
            "flips": cfg.split.flips,
        },
        "max_attempts_factor": cfg.max_attempts_factor,
        "opt_max_iter": cfg.opt_max_iter,
        "opt_rel_tol": cfg.opt_rel_tol,
    }


def evolution_from_json(doc: dict) -> EvolutionConfig:
    s = doc.get("split", {})
    return EvolutionConfig(
        strategy=str(doc["strategy"]),
        seed=int(doc["seed"]),
        pool_size=int(doc.get("pool_size", 60)),
        budget=int(doc.get("budget", 500)),
        form=str(doc.get("form", "triplet")),
        power_tol=float(doc.get("power_tol", 0.25)),
        diam_tol=float(doc.get("diam_tol", 0.25)),
        split=SplitConfig(
            alpha=float(s.get("alpha", 0.25)),
            diameter_tol=float(s.get("diameter_tol", 0.25)),
            curvature_rule=bool(s.get("curvature_rule", True)),
            flips=bool(s.get("flips", True)),
        ),
        max_attempts_factor=int(doc.get("max_attempts_factor", 50)),
        opt_max_iter=int(doc.get("opt_max_iter", 200)),
        opt_rel_tol=float(doc.get("opt_rel_tol", 1e-5)),
    )


# ------------------------------------------------------------------- paths


def run_dir(root, run_id: str) -> Path:
    d = Path(root) / run_id
    if not d.is_dir():
        raise UnknownRunError(run_id)
    return d


def manifest_path(d) -> Path:
    return Path(d) / "manifest.json"


def status_path(d) -> Path:
    return Path(d) / "status.json"


def events_path(d) -> Path:
    return Path(d) / "events.jsonl"


def snapshot_path(d, iteration: int) -> Path:
    return Path(d) / f"pool_{iteration:04d}.json"


def _cancel_path(d) -> Path:
    return Path(d) / "cancel.requested"


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# --------------------------------------------------------------- lifecycle


def resolve_catalog(ref: str) -> Catalog:
    """Turn a manifest catalog reference into a Catalog: the bundled
    synthetic set, the toy benchmark set, or a CSV path."""
    if ref == "bundled":
        return bundled_catalog()
    if ref == "toy":
        from .benchmark import toy_catalog
        return toy_catalog()
    return load_catalog(ref)


def run_catalog(d) -> Catalog:
    return resolve_catalog(load_manifest(d).get("catalog", "bundled"))


def create_run(root, spec: DesignSpec, evo: EvolutionConfig,
               cfg: RunConfig = RunConfig(),
               run_id: Optional[str] = None,
               merit_config: Optional[MeritConfig] = None,
               catalog_ref: str = "bundled") -> Path:
    """Make the run directory and persist the manifest before any work.

    The manifest pins the full merit configuration (defaulted from the spec
    when not given) and the catalog reference, so every later evaluation,
    resume included, and every PSF/MTF payload uses the settings the run
    was scored with."""
    rid = run_id if run_id is not None else uuid.uuid4().hex[:12]
    mc = merit_config if merit_config is not None else spec_merit_config(spec)
    d = Path(root) / rid
    d.mkdir(parents=True, exist_ok=False)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "id": rid,
        "spec": spec_to_json(spec),
        "evolution": evolution_to_json(evo),
        "merit": config_to_json(mc),
        "catalog": catalog_ref,
        "iterations": cfg.iterations,
        "workers": cfg.workers,
    }
    _write_atomic(manifest_path(d), canonical_dumps(manifest))
    _write_status(d, {"schema_version": SCHEMA_VERSION, "id": rid,
                      "status": QUEUED, "iteration": None,
                      "iterations": cfg.iterations, "best_score": None,
                      "best_identity": None, "error": None})
    events_path(d).touch()
    return d


def load_manifest(d) -> dict:
    return read_json(manifest_path(d))


def load_status(d) -> dict:
    return read_json(status_path(d))


def _write_status(d, doc: dict) -> None:
    _write_atomic(status_path(d), canonical_dumps(doc))


def _advance(d, new_status: str, **updates) -> dict:
    doc = load_status(d)
    cur = doc["status"]
    if new_status != cur and new_status not in _TRANSITIONS[cur]:
        raise RunStateError(f"cannot go {cur} -> {new_status}")
    doc["status"] = new_status
    doc.update(updates)
    _write_status(d, doc)
    return doc


def latest_iteration(d) -> Optional[int]:
    """Highest persisted snapshot index, None before the seed snapshot."""
    best = None
    for name in os.listdir(d):
        m = _SNAPSHOT_RE.match(name)
        if m:
            it = int(m.group(1))
            best = it if best is None else max(best, it)
    return best


def load_pool(d, catalog: Catalog,
              iteration: Optional[int] = None) -> CandidatePool:
    it = latest_iteration(d) if iteration is None else iteration
    if it is None:
        raise FileNotFoundError("run has no pool snapshot yet")
    return pool_from_json(read_json(snapshot_path(d, it)), catalog)


def request_cancel(d) -> dict:
    """Ask the coordinator to stop after the current iteration; a queued
    run is cancelled on the spot."""
    doc = load_status(d)
    if doc["status"] in (DONE, FAILED, CANCELLED):
        raise RunStateError(f"cannot cancel a {doc['status']} run")
    _cancel_path(d).touch()
    if doc["status"] == QUEUED:
        return _advance(d, CANCELLED)
    return doc


def list_runs(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir()
                  if p.is_dir() and manifest_path(p).is_file())


def run_summary(d) -> dict:
    doc = load_status(d)
    doc["snapshots"] = latest_iteration(d)
    return doc


# -------------------------------------------------------------- execution


def _event_writer(d) -> Callable[[dict], None]:
    fh = open(events_path(d), "a")

    def emit(record: dict) -> None:
        fh.write(canonical_dumps(record) + "\n")
        fh.flush()

    emit.close = fh.close
    return emit


def _pool_stats(pool: CandidatePool):
    if not pool.entries:
        return None, None
    best = pool.entries[0]
    return best.score, list(best.identity)


def execute_run(d, catalog: Optional[Catalog] = None, *,
                map_fn: Optional[Callable] = None,
                memo: Optional[dict] = None) -> dict:
    """Run (or resume) the coordinator loop for one run directory.

    Fresh runs seed the pool as iteration 0; a directory that already has
    snapshots continues after the highest one, which is exactly the
    crash-resume path. Evaluation fans out over `workers` processes from
    the manifest unless a map_fn is injected; planning and reduction are
    sequential either way, so the snapshot bytes never depend on the
    worker count."""
    d = Path(d)
    manifest = load_manifest(d)
    if catalog is None:
        catalog = resolve_catalog(manifest.get("catalog", "bundled"))
    spec = spec_from_json(manifest["spec"])
    evo = evolution_from_json(manifest["evolution"])
    iterations = int(manifest["iterations"])
    workers = int(manifest.get("workers", 1))
    merit_config = _merit_config_for(d)

    status = load_status(d)
    if status["status"] not in (QUEUED, RUNNING):
        raise RunStateError(f"cannot execute a {status['status']} run")

    log = _event_writer(d)
    memo = {} if memo is None else memo
    executor = None
    try:
        if map_fn is None and workers > 1:
            executor = ProcessPoolExecutor(max_workers=workers)
            map_fn = executor.map
        start_it = latest_iteration(d)
        _advance(d, RUNNING, iteration=start_it)
        log({"event": "run", "phase": "start", "resumed_from": start_it})

        def persist(pool: CandidatePool) -> CandidatePool:
            # write, then continue from what was written: the snapshot owns
            # the run state, so a resumed coordinator and this one plan the
            # next iteration from byte-identical input
            _write_atomic(snapshot_path(d, pool.iteration),
                          canonical_dumps(pool_to_json(pool)))
            pool = load_pool(d, catalog, pool.iteration)
            best, ident = _pool_stats(pool)
            _advance(d, RUNNING, iteration=pool.iteration, best_score=best,
                     best_identity=ident)
            return pool

        if start_it is None:
            pool = persist(seed_pool(catalog, spec, evo,
                                     merit_config=merit_config, log=log,
                                     map_fn=map_fn, memo=memo))
        else:
            pool = load_pool(d, catalog, start_it)

        while pool.iteration < iterations:
            if _cancel_path(d).exists():
                doc = _advance(d, CANCELLED)
                log({"event": "run", "phase": "cancelled",
                     "iteration": pool.iteration})
                return doc
            pool = persist(evolve(pool, catalog, spec, evo,
                                  merit_config=merit_config, log=log,
                                  map_fn=map_fn, memo=memo))

        if _cancel_path(d).exists():
            doc = _advance(d, CANCELLED)
            log({"event": "run", "phase": "cancelled",
                 "iteration": pool.iteration})
            return doc
        doc = _advance(d, DONE)
        log({"event": "run", "phase": "done", "iteration": pool.iteration})
        return doc
    except Exception as exc:
        doc = _advance(d, FAILED, error=f"{type(exc).__name__}: {exc}")
        log({"event": "run", "phase": "failed", "error": doc["error"]})
        raise
    finally:
        if executor is not None:
            executor.shutdown()
        log.close()


# ------------------------------------------------------- candidate access


def pool_entry(d, catalog: Catalog, rank: int) -> PoolEntry:
    """Entry at `rank` (0 = best) in the latest snapshot."""
    pool = load_pool(d, catalog)
    if not 0 <= rank < len(pool.entries):
        raise IndexError(f"rank {rank} out of range "
                         f"(pool has {len(pool.entries)} entries)")
    return pool.entries[rank]


def _merit_config_for(d) -> MeritConfig:
    manifest = load_manifest(d)
    if "merit" in manifest:
        return config_from_json(manifest["merit"])
    return spec_merit_config(spec_from_json(manifest["spec"]))


def candidate_payload(d, catalog: Catalog, rank: int) -> dict:
    e = pool_entry(d, catalog, rank)
    doc = pool_to_json(CandidatePool(0, (e,)))["entries"][0]
    doc["schema_version"] = SCHEMA_VERSION
    doc["rank"] = rank
    return doc


def _candidate_psf(e: PoolEntry, config: MeritConfig, field_index: int,
                   channel: str):
    names = config.wavelengths.names
    if channel not in names:
        raise KeyError(f"unknown channel {channel!r}; have {list(names)}")
    if not 0 <= field_index < config.fields.n:
        raise IndexError(f"field {field_index} out of range "
                         f"(config has {config.fields.n})")
    wavelength = channel_psf_wavelength(
        config.wavelengths.channels[names.index(channel)])
    emitter = config.fields.emitters[field_index]
    return render_psf(e.system, emitter, wavelength,
                      window_um=config.psf_window_um, grid=config.psf_grid,
                      pupil_samples=config.psf_pupil_samples,
                      rings=config.rings, spokes=config.spokes)


def candidate_psf_payload(d, catalog: Catalog, rank: int,
                          field_index: int, channel: str) -> str:
    """Portable text grid (header: width height window_um wavelength_nm)
    for one (field, channel); the same bytes serve the CLI and the API."""
    e = pool_entry(d, catalog, rank)
    config = _merit_config_for(d)
    return psf_to_text(_candidate_psf(e, config, field_index, channel))


def candidate_mtf_payload(d, catalog: Catalog, rank: int) -> dict:
    e = pool_entry(d, catalog, rank)
    config = _merit_config_for(d)
    curves = []
    for i in range(config.fields.n):
        for name in config.wavelengths.names:
            curve = mtf_from_psf(_candidate_psf(e, config, i, name))
            scores = mtf_scores(curve, e.system.sensor.height,
                                config.cutoff_cpmm)
            doc = curve.to_json()
            doc.update({"field": i, "channel": name,
                        "mtf50_cpmm": scores.mtf50_cpmm,
                        "mtf_area": scores.area})
            curves.append(doc)
    return {"schema_version": SCHEMA_VERSION, "rank": rank,
            "cutoff_cpmm": config.cutoff_cpmm, "curves": curves}


def candidate_calibration_payload(d, catalog: Catalog, rank: int,
                                  grid_density: int = 5) -> dict:
    e = pool_entry(d, catalog, rank)
    config = _merit_config_for(d)
    table = calibration_table(e.system, grid_density,
                              channels=config.wavelengths.channels,
                              channel_names=config.wavelengths.names)
    doc = table.to_json()
    doc["schema_version"] = SCHEMA_VERSION
    doc["rank"] = rank
    return doc
