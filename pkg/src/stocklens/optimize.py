"""Continuous optimization of air gaps and the sensor distance.

The component sequence is fixed; the free variables are the air gaps d and
the back focal distance d_k. The focus loop never retraces the lens: exit
rays are frozen at the last optical surface once per gap vector and only
re-intersected with the moved sensor plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AfocalSystemError, InfeasibleCandidateError, TooFewRaysError
from .jsonio import canonical_dumps
from .merit.config import MeritConfig
from .merit.stats import channel_value, objective
from .merit.wavefront import ExitBundle
from .optics import LensSystem, paraxial_trace
from .optics.sampling import emitter_bundle
from .optics.trace import TraceResult, continue_to_sensor, trace_bundle

STAGE_GEOMETRIC = "spot_or_opd"
STAGE_MTF = "mtf"

# probe points where more than this fraction of the reference live rays
# die are treated as infinitely bad (vignetting-cliff barrier)
_DEATH_FRACTION = 0.3

LogFn = Callable[[dict], None]


@dataclass(frozen=True)
class OptState:
    """Where an optimization stage ended up."""

    gaps: tuple[float, ...]
    sensor_gap: float
    objective_value: float
    stage: str                 # STAGE_GEOMETRIC or STAGE_MTF
    iterations: int
    converged: bool
    initial_objective: float = math.nan
    mtf_area: Optional[float] = None


@dataclass(frozen=True)
class BflResult:
    sensor_gap: float
    objective_value: float
    iterations: int


@dataclass(frozen=True)
class _FrozenFan:
    """One emitter/wavelength bundle parked at the last optical surface."""

    points: np.ndarray
    directions: np.ndarray
    opl: np.ndarray
    alive: np.ndarray
    wavelength: float
    chief_ok: bool


@dataclass(frozen=True)
class ExitRayCache:
    """Exit-space rays for every (emitter, channel wavelength) pair.

    Valid only for the exact gap vector it was built with; moving the
    sensor is the only change it can absorb.
    """

    system: LensSystem
    air_gaps: tuple[float, ...]
    fans: tuple            # [emitter][channel] -> tuple of _FrozenFan
    channels: tuple
    n_live: int            # live rays at the last surface, all fans pooled
    rings: int
    spokes: int


def build_exit_cache(system: LensSystem, config: MeritConfig) -> ExitRayCache:
    """Trace every merit bundle up to the last optical surface and freeze."""
    fo = paraxial_trace(system)
    fans = []
    live = 0
    for em in config.fields.emitters:
        per_channel = []
        for channel in config.wavelengths.channels:
            cf = []
            for w in channel:
                b = emitter_bundle(system, em, w, config.rings, config.spokes,
                                   fo=fo)
                state = trace_bundle(system, b.origins, b.directions, w,
                                     start_opl=b.opl0, to_sensor=False)
                live += state.n_alive
                cf.append(_FrozenFan(state.points, state.directions, state.opl,
                                     state.alive, w, b.chief_ok))
            per_channel.append(tuple(cf))
        fans.append(tuple(per_channel))
    return ExitRayCache(system=system, air_gaps=system.air_gaps,
                        fans=tuple(fans), channels=config.wavelengths.channels,
                        n_live=live, rings=config.rings, spokes=config.spokes)


def _fan_to_bundle(cache: ExitRayCache, fan: _FrozenFan, d_k: float) -> ExitBundle:
    state = TraceResult(fan.points, fan.directions, fan.opl, fan.alive)
    hits = continue_to_sensor(cache.system, state, sensor_gap=d_k)
    return ExitBundle(
        exit_points=fan.points, exit_directions=fan.directions,
        exit_opl=fan.opl, exit_alive=fan.alive,
        sensor_xy=hits.sensor_xy, sensor_points=hits.points,
        sensor_alive=hits.alive, wavelength=fan.wavelength,
        rings=cache.rings, spokes=cache.spokes, chief_ok=fan.chief_ok)


def cached_objective(cache: ExitRayCache, config: MeritConfig,
                     sensor_gap: float) -> float:
    """Eq-style aggregate merit with the sensor moved to sensor_gap, using
    only sensor re-intersection of the cached exit rays."""
    if cache.channels != config.wavelengths.channels:
        raise ValueError("cache was built for different channels")
    if len(cache.fans) != config.fields.n:
        raise ValueError("cache was built for different field sampling")
    vals = np.empty((config.fields.n, len(config.wavelengths.channels)))
    for i, per_channel in enumerate(cache.fans):
        for j, channel in enumerate(config.wavelengths.channels):
            ebs = [_fan_to_bundle(cache, fan, sensor_gap)
                   for fan in per_channel[j]]
            vals[i, j] = channel_value(cache.system, config, channel, ebs,
                                       sensor_gap=sensor_gap)
    return float(vals.mean())


def init_sensor(system: LensSystem) -> float:
    """Sensor start: the paraxial marginal ray's axis crossing behind the
    last surface. No real crossing means the candidate cannot focus."""
    fo = paraxial_trace(system)
    if fo.afocal or not math.isfinite(fo.bfl) or fo.bfl <= 0:
        raise AfocalSystemError(
            "paraxial focus is virtual or at infinity; candidate cannot focus")
    return fo.bfl


def optimize_bfl(system: LensSystem, config: MeritConfig,
                 cache: Optional[ExitRayCache] = None, *,
                 full_retrace: bool = False, tol: float = 1e-7,
                 max_iter: int = 60) -> BflResult:
    """1-D descent on the sensor distance from the paraxial focus.

    Newton steps on a local parabola fit with halving on overshoot; each
    merit evaluation re-intersects cached exit rays with the moved sensor
    (or retraces fully when full_retrace is set, for verification).
    """
    if not full_retrace and cache is None:
        cache = build_exit_cache(system, config)
    if cache is not None and cache.air_gaps != system.air_gaps:
        raise ValueError("cache was built for a different gap vector")

    def g(x: float) -> float:
        if x < 0 or not math.isfinite(x):
            return math.inf
        try:
            if full_retrace:
                return objective(system, config, sensor_gap=x)
            return cached_objective(cache, config, x)
        except TooFewRaysError:
            return math.inf

    d_k = init_sensor(system)
    f0 = g(d_k)
    if not math.isfinite(f0):
        raise InfeasibleCandidateError("merit not finite at the paraxial focus")

    h = 1e-3
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gm, gp = g(d_k - h), g(d_k + h)
        if not (math.isfinite(gm) and math.isfinite(gp)):
            h *= 0.5
            continue
        grad = (gp - gm) / (2.0 * h)
        curv = (gp - 2.0 * f0 + gm) / (h * h)
        if curv > 0.0:
            step = -grad / curv
        elif grad != 0.0:
            step = -math.copysign(0.5, grad)
        else:
            break
        step = max(-5.0, min(5.0, step))
        f1 = g(d_k + step)
        while f1 > f0 and abs(step) > tol:
            step *= 0.5
            f1 = g(d_k + step)
        if f1 <= f0:
            d_k += step
            f0 = f1
        if abs(step) <= tol:
            break
    return BflResult(sensor_gap=d_k, objective_value=f0, iterations=iterations)


class _NonFiniteProbe(Exception):
    pass


def richardson_gradient(f: Callable[[np.ndarray], float], x: Sequence[float],
                        h0: float = 1e-3) -> np.ndarray:
    """Central differences at h0 and h0/2 combined by one Richardson step,
    (4 g(h/2) - g(h)) / 3 per coordinate; exact through cubic terms."""
    x = np.asarray(x, dtype=float)

    def central(h: float) -> np.ndarray:
        g = np.empty(x.size)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            fp, fm = float(f(x + e)), float(f(x - e))
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise _NonFiniteProbe
            g[i] = (fp - fm) / (2.0 * h)
        return g

    for h in (h0, 0.5 * h0):
        try:
            return (4.0 * central(0.5 * h) - central(h)) / 3.0
        except _NonFiniteProbe:
            continue
    raise InfeasibleCandidateError("gradient probes hit a non-finite merit")


class _GapEvaluator:
    """F(d) with the sensor re-focused at every evaluation, memoized, and
    with the ray-death barrier measured against the last accepted point."""

    def __init__(self, system: LensSystem, config: MeritConfig):
        self.system = system
        self.config = config
        # the focus inner loop always descends on a geometric metric; for
        # an mtf-mode objective F is then measured at that focus
        if config.mode == "mtf":
            self.bfl_config = replace(config, mode="spot")
        else:
            self.bfl_config = config
        self.ref_live: Optional[int] = None
        self._memo: dict = {}

    def _compute(self, key: tuple) -> tuple:
        sys_d = self.system.with_gaps(air_gaps=key)
        cache = build_exit_cache(sys_d, self.config)
        try:
            res = optimize_bfl(sys_d, self.bfl_config, cache)
            if self.config.mode == self.bfl_config.mode:
                value = res.objective_value
            else:
                value = cached_objective(cache, self.config, res.sensor_gap)
            if not math.isfinite(value):
                value = math.inf
            return (value, res.sensor_gap, cache.n_live)
        except (AfocalSystemError, InfeasibleCandidateError, TooFewRaysError):
            return (math.inf, math.nan, cache.n_live)

    def __call__(self, gaps: Sequence[float]) -> tuple[float, float]:
        d = np.maximum(np.asarray(gaps, dtype=float), 0.0)
        key = tuple(round(float(x), 12) for x in d)
        entry = self._memo.get(key)
        if entry is None:
            entry = self._compute(key)
            self._memo[key] = entry
        value, d_k, live = entry
        if self.ref_live is not None and live < (1.0 - _DEATH_FRACTION) * self.ref_live:
            return math.inf, d_k
        return value, d_k

    def set_reference(self, gaps: Sequence[float]) -> None:
        key = tuple(round(float(max(x, 0.0)), 12) for x in gaps)
        entry = self._memo.get(key)
        if entry is not None:
            self.ref_live = entry[2]


def _emit(log: Optional[LogFn], stage: str, iteration: int, value: float,
          gaps: np.ndarray, d_k: float) -> None:
    if log is not None:
        log({"stage": stage, "iteration": iteration, "F": float(value),
             "gaps": [float(x) for x in gaps], "d_k": float(d_k)})


def jsonl_logger(stream) -> LogFn:
    """Adapter writing one canonical-JSON line per accepted step."""

    def emit(record: dict) -> None:
        stream.write(canonical_dumps(record) + "\n")

    return emit


def _gradient_step(ev: _GapEvaluator, d: np.ndarray, f0: float, *,
                   step0: float, shrink: float, armijo: float = 1e-4,
                   min_step: float = 1e-4):
    try:
        grad = richardson_gradient(lambda x: ev(x)[0], d, h0=0.05)
    except InfeasibleCandidateError:
        return None
    gn = float(np.linalg.norm(grad))
    if gn == 0.0 or not math.isfinite(gn):
        return None
    u = grad / gn
    alpha = step0
    while alpha >= min_step:
        d1 = np.maximum(d - alpha * u, 0.0)
        f1, dk1 = ev(d1)
        if math.isfinite(f1) and f1 <= f0 - armijo * alpha * gn:
            return d1, f1, dk1
        alpha *= shrink
    return None


def _grid_step(ev: _GapEvaluator, d: np.ndarray, f0: float, thresh: float,
               steps: Sequence[float]):
    for i in range(d.size):
        for s in steps:
            for sign in (1.0, -1.0):
                d1 = d.copy()
                d1[i] = max(d1[i] + sign * s, 0.0)
                if d1[i] == d[i]:
                    continue
                f1, dk1 = ev(d1)
                if math.isfinite(f1) and f0 - f1 > thresh:
                    return d1, f1, dk1
    return None


def optimize_gaps(system: LensSystem, config: MeritConfig, *,
                  start_gaps: Optional[Sequence[float]] = None,
                  log: Optional[LogFn] = None,
                  rel_tol: float = 1e-5, max_iter: int = 200,
                  step0: float = 0.5, shrink: float = 0.5,
                  grid_steps: Sequence[float] = (0.1, 0.25, 0.5)) -> OptState:
    """Descend on the air gaps, re-focusing the sensor at every merit call.

    Without start_gaps the best of six equal-gap fills (1..6 mm) seeds the
    descent. Gradient steps use Armijo backtracking; on stall a coordinate
    grid search takes the first improving step; the stage stops when neither
    improves the objective by more than rel_tol relative.
    """
    stage = STAGE_MTF if config.mode == "mtf" else STAGE_GEOMETRIC
    ev = _GapEvaluator(system, config)
    n_gaps = len(system.air_gaps)

    if start_gaps is not None:
        d = np.maximum(np.asarray(start_gaps, dtype=float), 0.0)
        f0, d_k = ev(d)
        if not math.isfinite(f0):
            raise InfeasibleCandidateError("starting gap vector is infeasible")
    else:
        best = None
        for a in (1.0, 2.0, 3.0, 4.0, 5.0, 6.0):
            da = np.full(n_gaps, a)
            fa, dka = ev(da)
            if math.isfinite(fa) and (best is None or fa < best[1]):
                best = (da, fa, dka)
        if best is None:
            raise InfeasibleCandidateError(
                "all six equal-gap initializations are infeasible")
        d, f0, d_k = best
    ev.set_reference(d)
    f_init = f0
    _emit(log, stage, 0, f0, d, d_k)

    iterations = 0
    converged = False
    while iterations < max_iter:
        iterations += 1
        thresh = rel_tol * abs(f0)
        cand = _gradient_step(ev, d, f0, step0=step0, shrink=shrink)
        if cand is None or f0 - cand[1] <= thresh:
            cand = _grid_step(ev, d, f0, thresh, grid_steps)
        if cand is None:
            converged = True
            break
        d, f0, d_k = cand
        ev.set_reference(d)
        _emit(log, stage, iterations, f0, d, d_k)

    return OptState(gaps=tuple(float(x) for x in d), sensor_gap=float(d_k),
                    objective_value=float(f0), stage=stage,
                    iterations=iterations, converged=converged,
                    initial_objective=float(f_init),
                    mtf_area=(-float(f0) if stage == STAGE_MTF else None))


def optimize_two_stage(system: LensSystem, config: MeritConfig, *,
                       start_gaps: Optional[Sequence[float]] = None,
                       log: Optional[LogFn] = None, rel_tol: float = 1e-5,
                       max_iter: int = 200) -> OptState:
    """Geometric stage first, then MTF-area polish from its optimum.

    Stage 1 minimizes spot (or OPD when the config says so), starting from
    start_gaps when given; stage 2 switches the objective to negative MTF
    area, restarts from the stage-1 gaps with a coarser PSF rendering, and
    its result is kept only if the MTF area did not degrade.
    """
    mode1 = "opd" if config.mode == "opd" else "spot"
    stage1 = optimize_gaps(system, replace(config, mode=mode1),
                           start_gaps=start_gaps, log=log,
                           rel_tol=rel_tol, max_iter=max_iter)
    cfg2 = replace(config, mode="mtf",
                   psf_grid=min(config.psf_grid, 64),
                   psf_pupil_samples=min(config.psf_pupil_samples, 32))
    stage2 = optimize_gaps(system, cfg2, start_gaps=stage1.gaps, log=log,
                           rel_tol=rel_tol, max_iter=max_iter)
    iterations = stage1.iterations + stage2.iterations
    area_start = -stage2.initial_objective
    if stage2.mtf_area is not None and stage2.mtf_area >= area_start:
        return replace(stage2, iterations=iterations,
                       converged=stage1.converged and stage2.converged)
    # stage 2 never improved on the stage-1 point: keep it
    return OptState(gaps=stage1.gaps, sensor_gap=stage1.sensor_gap,
                    objective_value=stage2.initial_objective, stage=STAGE_MTF,
                    iterations=iterations, converged=stage1.converged,
                    initial_objective=stage2.initial_objective,
                    mtf_area=area_start)
