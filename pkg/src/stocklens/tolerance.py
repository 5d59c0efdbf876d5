"""Monte Carlo assembly-tolerance analysis.

Each run perturbs every lens part and the stop with an axial translation
and a 2-D decenter, refocuses the sensor, then shifts the sensor by its own
(larger) translation error; the per-field, per-channel MTF50 of the
perturbed system is recorded. Percentiles over thousands of such runs give
the performance range a real assembly should expect.

All perturbations are N(0, sigma^2) truncated to |delta| <= cap by
rejection resampling (clipping would pile probability onto the caps).
Manufacturing errors inside an element (radii, thickness, index) are out of
scope: those are the vendor's, not the assembler's.

Runs are independent: run i draws from its own child stream of the config
seed, so reports are reproducible run for run, any run count that prefixes
a longer one produces the longer one's leading scores, and a process pool
can evaluate runs in any order without changing the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (AfocalSystemError, InfeasibleCandidateError,
                     TooFewRaysError)
from .jsonio import SCHEMA_VERSION
from .merit.config import MeritConfig
from .merit.report import MeritReport, merit_report
from .optics.system import ElementInstance, LensSystem, Stop
from .optimize import optimize_bfl

__all__ = [
    "ToleranceConfig", "ToleranceRow", "ToleranceReport", "PerturbResult",
    "truncated_normal", "perturb", "run_tolerance", "report_from_json",
    "raw_scores_csv", "tolerance_config_to_json",
    "tolerance_config_from_json",
]

PERCENTILES = (5, 25, 50, 75, 95)


@dataclass(frozen=True)
class ToleranceConfig:
    """Assembly error model: one sigma/cap pair for the lens parts and the
    stop, a looser pair for the sensor mount."""

    element_sigma_um: float = 20.0
    element_cap_um: float = 100.0
    sensor_sigma_um: float = 100.0
    sensor_cap_um: float = 300.0
    runs: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.element_sigma_um < 0 or self.sensor_sigma_um < 0:
            raise ValueError("sigmas must be >= 0")
        if self.element_cap_um < self.element_sigma_um:
            raise ValueError("element cap must be >= element sigma")
        if self.sensor_cap_um < self.sensor_sigma_um:
            raise ValueError("sensor cap must be >= sensor sigma")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")

    def scaled(self, factor: float) -> "ToleranceConfig":
        """Same error model with every sigma and cap multiplied; stress
        testing uses this to keep the cap-to-sigma ratio fixed."""
        return ToleranceConfig(self.element_sigma_um * factor,
                               self.element_cap_um * factor,
                               self.sensor_sigma_um * factor,
                               self.sensor_cap_um * factor,
                               self.runs, self.seed)


def tolerance_config_to_json(cfg: ToleranceConfig) -> dict:
    return {"element_sigma_um": cfg.element_sigma_um,
            "element_cap_um": cfg.element_cap_um,
            "sensor_sigma_um": cfg.sensor_sigma_um,
            "sensor_cap_um": cfg.sensor_cap_um,
            "runs": cfg.runs, "seed": cfg.seed}


def tolerance_config_from_json(doc: dict) -> ToleranceConfig:
    base = ToleranceConfig()
    return ToleranceConfig(
        element_sigma_um=float(doc.get("element_sigma_um",
                                       base.element_sigma_um)),
        element_cap_um=float(doc.get("element_cap_um", base.element_cap_um)),
        sensor_sigma_um=float(doc.get("sensor_sigma_um",
                                      base.sensor_sigma_um)),
        sensor_cap_um=float(doc.get("sensor_cap_um", base.sensor_cap_um)),
        runs=int(doc.get("runs", base.runs)),
        seed=int(doc.get("seed", base.seed)),
    )


def truncated_normal(rng: np.random.Generator, sigma: float,
                     cap: float) -> float:
    """One N(0, sigma^2) draw resampled until |x| <= cap. sigma 0 draws
    nothing and returns 0 so a disabled error source spends no entropy."""
    if sigma == 0.0:
        return 0.0
    while True:
        x = float(rng.normal(0.0, sigma))
        if abs(x) <= cap:
            return x


@dataclass(frozen=True)
class PerturbResult:
    system: LensSystem
    clamped: bool          # some gap (or the sensor) hit mechanical contact
    refocused: bool        # sensor refocus ran (skipped when nothing moved)


def perturb(system: LensSystem, cfg: ToleranceConfig,
            rng: np.random.Generator,
            merit_config: Optional[MeritConfig] = None) -> PerturbResult:
    """One assembly realization of `system`.

    Draw order is part of the contract (reports are seed-reproducible):
    components front to back, each drawing axial dz then dx then dy; the
    sensor refocus runs after all part errors; the sensor's own dz draws
    last. Ideal lenses model the eye, not a manufactured part, and are
    not perturbed. A gap driven negative clamps to 0 (parts in contact)
    and flags the run. With every draw zero the input returns unchanged:
    there is nothing to refocus away."""
    sig_el = cfg.element_sigma_um / 1000.0
    cap_el = cfg.element_cap_um / 1000.0
    shifts = []
    decenters = []
    for comp in system.components:
        if isinstance(comp, (ElementInstance, Stop)):
            dz = truncated_normal(rng, sig_el, cap_el)
            dx = truncated_normal(rng, sig_el, cap_el)
            dy = truncated_normal(rng, sig_el, cap_el)
        else:
            dz, dx, dy = 0.0, 0.0, 0.0
        shifts.append(dz)
        decenters.append((dx, dy))

    moved = any(s != 0.0 for s in shifts) or \
        any(d != (0.0, 0.0) for d in decenters)
    clamped = False
    out = system
    if moved:
        gaps = list(system.air_gaps)
        for j in range(len(gaps)):
            # gap j separates component j from j+1
            g = gaps[j] + shifts[j + 1] - shifts[j]
            if g < 0.0:
                g, clamped = 0.0, True
            gaps[j] = g
        sensor_gap = system.sensor_gap - shifts[-1]
        if sensor_gap < 0.0:
            sensor_gap, clamped = 0.0, True
        out = system.with_gaps(air_gaps=gaps, sensor_gap=sensor_gap)
        out = out.with_decenters(decenters)
        if merit_config is not None:
            focus = optimize_bfl(out, merit_config)
            out = out.with_gaps(sensor_gap=focus.sensor_gap)

    dz_sensor = truncated_normal(rng, cfg.sensor_sigma_um / 1000.0,
                                 cfg.sensor_cap_um / 1000.0)
    if dz_sensor != 0.0:
        sensor_gap = out.sensor_gap + dz_sensor
        if sensor_gap < 0.0:
            sensor_gap, clamped = 0.0, True
        out = out.with_gaps(sensor_gap=sensor_gap)
    return PerturbResult(out, clamped, moved and merit_config is not None)


def _run_rng(seed: int, run: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(run,)))


def _one_run(args) -> tuple:
    """(scores per report row, failed, clamped) for one realization."""
    system, config, cfg, run, n_rows = args
    rng = _run_rng(cfg.seed, run)
    try:
        pr = perturb(system, cfg, rng, merit_config=config)
        rep = merit_report(pr.system, config, include_mtf=True)
        return (tuple(r.mtf50_cpmm for r in rep.rows), False, pr.clamped)
    except (AfocalSystemError, InfeasibleCandidateError, TooFewRaysError):
        return ((0.0,) * n_rows, True, False)


@dataclass(frozen=True)
class ToleranceRow:
    emitter_index: int
    channel: str
    nominal_mtf50_cpmm: float
    p5: float
    p25: float
    p50: float
    p75: float
    p95: float
    mean: float

    @property
    def percentiles(self) -> tuple[float, ...]:
        return (self.p5, self.p25, self.p50, self.p75, self.p95)


@dataclass(frozen=True)
class ToleranceReport:
    rows: tuple[ToleranceRow, ...]
    runs: int
    failed_runs: int
    clamped_runs: int
    seed: int
    raw: Optional[tuple] = None    # per-run score tuples, when kept

    def __post_init__(self):
        for r in self.rows:
            p = r.percentiles
            if any(b < a for a, b in zip(p, p[1:])):
                raise ValueError("percentiles must be monotone")
            if r.nominal_mtf50_cpmm < 0:
                raise ValueError("nominal mtf50 must be >= 0")

    def to_json(self) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "runs": self.runs,
            "failed_runs": self.failed_runs,
            "clamped_runs": self.clamped_runs,
            "seed": self.seed,
            "rows": [{
                "emitter": r.emitter_index,
                "channel": r.channel,
                "nominal_mtf50_cpmm": r.nominal_mtf50_cpmm,
                "p5": r.p5, "p25": r.p25, "p50": r.p50,
                "p75": r.p75, "p95": r.p95, "mean": r.mean,
            } for r in self.rows],
        }
        if self.raw is not None:
            doc["raw"] = [list(s) for s in self.raw]
        return doc


def report_from_json(doc: dict) -> ToleranceReport:
    rows = tuple(ToleranceRow(
        emitter_index=int(r["emitter"]), channel=str(r["channel"]),
        nominal_mtf50_cpmm=float(r["nominal_mtf50_cpmm"]),
        p5=float(r["p5"]), p25=float(r["p25"]), p50=float(r["p50"]),
        p75=float(r["p75"]), p95=float(r["p95"]), mean=float(r["mean"]),
    ) for r in doc["rows"])
    raw = None
    if doc.get("raw") is not None:
        raw = tuple(tuple(float(x) for x in s) for s in doc["raw"])
    return ToleranceReport(rows, int(doc["runs"]), int(doc["failed_runs"]),
                           int(doc["clamped_runs"]), int(doc["seed"]), raw)


def raw_scores_csv(report: ToleranceReport) -> str:
    """Per-run scores as CSV: run index, then one mtf50 column per
    (field, channel) row of the report."""
    if report.raw is None:
        raise ValueError("report was built without keep_raw")
    header = ["run"] + [f"mtf50_f{r.emitter_index}_{r.channel}"
                        for r in report.rows]
    lines = [",".join(header)]
    for i, scores in enumerate(report.raw):
        lines.append(",".join([str(i)] + [repr(s) for s in scores]))
    return "\n".join(lines) + "\n"


def run_tolerance(system: LensSystem, config: MeritConfig,
                  cfg: ToleranceConfig, *,
                  map_fn: Optional[Callable] = None,
                  keep_raw: bool = False,
                  progress: Optional[Callable[[int, int], None]] = None
                  ) -> ToleranceReport:
    """Monte Carlo over `cfg.runs` independent assembly realizations.

    A run whose rays die (or whose refocus cannot find an image) scores 0
    in every column and is counted in failed_runs: an assembly that cannot
    form an image is a risk, not a sample to discard. map_fn may be a
    process pool's map; per-run seeding keeps any execution order
    equivalent to the serial one."""
    nominal = merit_report(system, config, include_mtf=True)
    n_rows = len(nominal.rows)
    jobs = [(system, config, cfg, r, n_rows) for r in range(cfg.runs)]
    mapper = map_fn if map_fn is not None else map
    scores = np.zeros((cfg.runs, n_rows))
    failed = clamped = 0
    for i, (row_scores, fail, clamp) in enumerate(mapper(_one_run, jobs)):
        scores[i] = row_scores
        failed += bool(fail)
        clamped += bool(clamp)
        if progress is not None:
            progress(i + 1, cfg.runs)

    rows = []
    for j, nom in enumerate(nominal.rows):
        pct = np.percentile(scores[:, j], PERCENTILES)
        rows.append(ToleranceRow(
            emitter_index=nom.emitter_index, channel=nom.channel,
            nominal_mtf50_cpmm=nom.mtf50_cpmm,
            p5=float(pct[0]), p25=float(pct[1]), p50=float(pct[2]),
            p75=float(pct[3]), p95=float(pct[4]),
            mean=float(scores[:, j].mean()),
        ))
    raw = tuple(tuple(float(x) for x in run) for run in scores) \
        if keep_raw else None
    return ToleranceReport(tuple(rows), cfg.runs, failed, clamped,
                           cfg.seed, raw)
