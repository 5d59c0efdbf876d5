"""Discrete search over stock-element combinations.

The continuous optimizer can only move air gaps; picking WHICH elements to
combine is a combinatorial problem. This module provides the three layers of
that search:

  seeding     enumerate classic starting forms (singlet, triplet, double
              Gauss) over catalog elements whose power and diameter sit near
              the form's per-slot targets,
  pruning     cheap paraxial / illumination tests that reject most
              combinations before any continuous optimization is spent,
  evolution   iterative element splitting with a ranked candidate pool and
              four parent-selection strategies of increasing greed.

Candidate identity is the ordered stock-id sequence with orientation flags
and the stop slot; air gaps never participate in identity because they are
optimized, not chosen.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .catalog import Catalog, LensElement
from .designspec import DesignSpec
from .errors import (AfocalSystemError, FNumberUnreachableError,
                     InfeasibleCandidateError, TooFewRaysError)
from .jsonio import SCHEMA_VERSION
from .merit.config import MeritConfig, default_channels
from .merit.report import MeritReport, merit_report, report_from_json
from .merit.stats import relative_illumination
from .optics.paraxial import fov_paraxial, set_fnumber
from .optics.sampling import FieldSampling
from .optics.system import (ElementInstance, LensSystem, Stop,
                            system_from_json, system_to_json)
from .optimize import init_sensor, optimize_two_stage

STRATEGIES = ("random", "greedy", "pool", "pool_swap")
PRUNE_TESTS = ("basic", "focus", "f_number", "fov", "vignetting")

SEED_GAP_MM = 2.0          # initial element-to-element air gap
SPLIT_GAP_MM = 1.0         # initial gap inside a freshly split pair
STOP_END_GAP_MM = 1.0      # stop-to-element gap when the stop is outermost


# ---------------------------------------------------------------------------
# seed forms

@dataclass(frozen=True)
class SeedSlot:
    """One element position in a seed form.

    power_scale is signed and multiplies the target system power;
    diameter_scale multiplies the entrance-pupil diameter."""

    power_scale: float
    diameter_scale: float = 1.25

    def __post_init__(self):
        if self.power_scale == 0:
            raise ValueError("slot power_scale must be nonzero")
        if self.diameter_scale <= 0:
            raise ValueError("slot diameter_scale must be > 0")

    @property
    def sign(self) -> int:
        return 1 if self.power_scale > 0 else -1


@dataclass(frozen=True)
class SeedForm:
    name: str
    slots: tuple[SeedSlot, ...]
    stop_slots: tuple[int, ...]   # insertion indices, 0 = in front of slot 0

    def __post_init__(self):
        if not self.slots:
            raise ValueError("seed form needs at least one slot")
        k = len(self.slots)
        if not self.stop_slots:
            raise ValueError("seed form needs at least one stop slot")
        if any(not 0 <= s <= k for s in self.stop_slots):
            raise ValueError(f"stop slots must lie in 0..{k}")
        if len(set(self.stop_slots)) != len(self.stop_slots):
            raise ValueError("duplicate stop slots")


def seed_form(name: str, spec: DesignSpec = None) -> SeedForm:
    """Editable presets. Power allocation is the classic thin-lens split:
    a triplet concentrates +2 phi in each outer element against -3 phi in
    the middle; the four-element symmetric form uses +2/-1.5/-1.5/+2."""
    if name == "singlet":
        return SeedForm("singlet", (SeedSlot(1.0),), (0, 1))
    if name == "triplet":
        return SeedForm("triplet",
                        (SeedSlot(2.0), SeedSlot(-3.0), SeedSlot(2.0)),
                        (1, 2))
    if name == "double_gauss":
        return SeedForm("double_gauss",
                        (SeedSlot(2.0), SeedSlot(-1.5),
                         SeedSlot(-1.5), SeedSlot(2.0)),
                        (2,))
    raise ValueError(f"unknown seed form {name!r}; "
                     "known: singlet, triplet, double_gauss")


def _slot_candidates(catalog: Catalog, slot: SeedSlot, spec: DesignSpec,
                     power_tol: float, diam_tol: float) -> list[LensElement]:
    """Catalog elements admissible for one slot. A tolerance >= 1 removes
    that constraint entirely (only the power sign remains)."""
    base_power = slot.power_scale * spec.target_power
    base_diam = slot.diameter_scale * spec.target_efl / spec.f_number
    if power_tol < 1 and diam_tol < 1:
        return catalog.query(base_power, power_tol, base_diam, diam_tol,
                             slot.sign)
    picked = []
    for e in catalog.elements:
        if (e.power > 0) != (slot.sign > 0):
            continue
        if power_tol < 1:
            lo = (1 - power_tol) * abs(base_power)
            hi = (1 + power_tol) * abs(base_power)
            if not lo <= abs(e.power) <= hi:
                continue
        if diam_tol < 1:
            if not (1 - diam_tol) * base_diam <= e.diameter <= (1 + diam_tol) * base_diam:
                continue
        picked.append(e)
    return picked


def _orientations(element: LensElement, flips: bool) -> tuple[bool, ...]:
    # flipping a symmetric singlet is a no-op, so only one orientation exists
    if flips and not element.is_symmetric_singlet:
        return (False, True)
    return (False,)


def _insert_stop(elements: Sequence[ElementInstance],
                 element_gaps: Sequence[float], slot: int,
                 stop: Stop) -> tuple[tuple, tuple]:
    """Place the stop at insertion index `slot` among k elements (0..k).
    Interior slots split the local element gap in half so element spacing
    is preserved; outermost slots use a fixed 1 mm standoff."""
    elements = list(elements)
    gaps = list(element_gaps)
    if slot == 0:
        comps = [stop, *elements]
        out_gaps = [STOP_END_GAP_MM, *gaps]
    elif slot == len(elements):
        comps = [*elements, stop]
        out_gaps = [*gaps, STOP_END_GAP_MM]
    else:
        g = gaps[slot - 1]
        comps = elements[:slot] + [stop] + elements[slot:]
        out_gaps = gaps[:slot - 1] + [g / 2.0, g / 2.0] + gaps[slot:]
    return tuple(comps), tuple(out_gaps)


def _strip_stop(system: LensSystem) -> tuple[list, list, Stop]:
    """Element-only view: instances, element-to-element gaps (the gap the
    stop sat in is re-merged), and the stop itself."""
    comps = list(system.components)
    gaps = list(system.air_gaps)
    si = system.stop_index
    stop = comps[si]
    del comps[si]
    if si == 0:
        del gaps[0]
    elif si == len(comps):          # was last
        del gaps[-1]
    else:
        merged = gaps[si - 1] + gaps[si]
        gaps[si - 1:si + 1] = [merged]
    return comps, gaps, stop


def _assemble(elements: Sequence[ElementInstance],
              element_gaps: Sequence[float], stop_slot: int, stop: Stop,
              sensor_gap: float, sensor) -> LensSystem:
    comps, gaps = _insert_stop(elements, element_gaps, stop_slot, stop)
    return LensSystem(comps, gaps, sensor_gap, sensor)


def enumerate_seed(catalog: Catalog, spec: DesignSpec, form: SeedForm, *,
                   power_tol: float = 0.25, diam_tol: float = 0.25,
                   flips: bool = False,
                   gap_mm: float = SEED_GAP_MM) -> Iterator[LensSystem]:
    """Lazy stream over slot-candidate picks x stop slots x orientation
    flips. Initial gaps are uniform; the stop halves the gap it lands in."""
    slot_lists = [_slot_candidates(catalog, s, spec, power_tol, diam_tol)
                  for s in form.slots]
    if any(not lst for lst in slot_lists):
        return
    k = len(form.slots)
    egaps = (gap_mm,) * (k - 1)
    stop = Stop(max(spec.target_efl / (2.0 * spec.f_number), 0.5))
    sensor_gap = spec.target_efl
    for picks in itertools.product(*slot_lists):
        flip_lists = [_orientations(e, flips) for e in picks]
        for flip_vec in itertools.product(*flip_lists):
            insts = tuple(ElementInstance(e, f)
                          for e, f in zip(picks, flip_vec))
            for slot in form.stop_slots:
                yield _assemble(insts, egaps, slot, stop, sensor_gap,
                                spec.sensor)


def seed_space_size(catalog: Catalog, spec: DesignSpec, form: SeedForm, *,
                    power_tol: float = 0.25, diam_tol: float = 0.25,
                    flips: bool = False) -> int:
    """Analytic stream length: no systems are materialized. Each slot
    contributes the sum of its candidates' orientation counts (a symmetric
    singlet has one orientation, everything else two when flips are on)."""
    n = 1
    for s in form.slots:
        cands = _slot_candidates(catalog, s, spec, power_tol, diam_tol)
        n *= sum(len(_orientations(e, flips)) for e in cands)
    return n * len(form.stop_slots)


# ---------------------------------------------------------------------------
# pruning

@dataclass(frozen=True)
class PruneResult:
    passed: bool
    reason: Optional[str] = None        # failing test name
    detail: str = ""
    system: Optional[LensSystem] = None  # focused, f-number-adjusted


def _fail(reason: str, detail: str) -> PruneResult:
    return PruneResult(False, reason, detail)


def prune(system: LensSystem, spec: DesignSpec, *, ri_min: float = 0.3,
          rings: int = 6, spokes: int = 12) -> PruneResult:
    """Ordered cheap rejection tests: basic -> focus -> f_number -> fov ->
    vignetting, failing fast with the first test that trips. On success the
    returned system is focused at the paraxial BFL with the stop scaled to
    the requested f-number."""
    # basic: parts count, cost, mechanical length
    if system.element_count > spec.max_elements:
        return _fail("basic", f"{system.element_count} elements exceed "
                              f"limit {spec.max_elements}")
    if system.cost > spec.max_cost:
        return _fail("basic", f"cost {system.cost:.2f} over budget "
                              f"{spec.max_cost:.2f}")
    length = (sum(getattr(c, "thickness", 0.0) for c in system.components)
              + sum(system.air_gaps))
    if length > spec.max_length:
        return _fail("basic", f"length {length:.1f} mm over limit "
                              f"{spec.max_length:.1f} mm")

    # focus: a near-axis ray must cross the axis inside the flange window
    try:
        bfl = init_sensor(system)
    except AfocalSystemError as exc:
        return _fail("focus", str(exc))
    lo, hi = spec.flange_range
    if not lo <= bfl <= hi:
        return _fail("focus", f"BFL {bfl:.2f} mm outside flange range "
                              f"[{lo:.1f}, {hi:.1f}]")
    focused = system.with_gaps(sensor_gap=bfl)

    # f_number: the stop must be scalable to the target pupil
    try:
        focused = set_fnumber(focused, spec.f_number)
    except (FNumberUnreachableError, AfocalSystemError) as exc:
        return _fail("f_number", str(exc))

    # fov: actual field of view near the request
    fov = fov_paraxial(focused)
    if abs(fov - spec.fov) > spec.fov_tol * spec.fov:
        return _fail("fov", f"FOV {fov:.1f} deg vs requested {spec.fov:.1f} "
                            f"+/- {spec.fov_tol * 100:.0f}%")

    # vignetting: enough light at the field edge
    fields = FieldSampling.from_relative_fields((0.0, 1.0), spec.fov / 2.0)
    try:
        ri = relative_illumination(focused, fields, rings=rings,
                                   spokes=spokes)
    except TooFewRaysError:
        return _fail("vignetting", "central field bundle was lost")
    if not ri[1] >= ri_min:
        return _fail("vignetting", f"edge relative illumination "
                                   f"{ri[1]:.2f} < {ri_min}")
    return PruneResult(True, None, "", focused)


# ---------------------------------------------------------------------------
# splitting

@dataclass(frozen=True)
class SplitConfig:
    alpha: float = 0.25            # rule-3 half-power window width
    diameter_tol: float = 0.25     # rule-4 fractional diameter window
    curvature_rule: bool = True    # rule 5 on/off
    flips: bool = True             # orientations enumerated for children

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.diameter_tol < 1:
            raise ValueError("diameter_tol must lie in (0, 1)")


def admissible_split_elements(l0: LensElement, catalog: Catalog,
                              cfg: SplitConfig) -> list[LensElement]:
    """Elements allowed to replace half of l0: same power sign, roughly half
    its power, similar diameter, and no stronger curvature."""
    p0 = abs(l0.power)
    sign = 1 if l0.power > 0 else -1
    lo, hi = (1 - cfg.alpha) * p0 / 2.0, (1 + cfg.alpha) * p0 / 2.0
    dlo = (1 - cfg.diameter_tol) * l0.diameter
    dhi = (1 + cfg.diameter_tol) * l0.diameter
    out = []
    for e in catalog.elements:
        if (e.power > 0) != (sign > 0):
            continue
        if not lo < abs(e.power) < hi:
            continue
        if not dlo <= e.diameter <= dhi:
            continue
        if cfg.curvature_rule and e.max_curvature > l0.max_curvature + 1e-12:
            continue
        out.append(e)
    return out


def _split_parts(system: LensSystem, index: int):
    """Shared split scaffolding: element list and gaps with the stop removed
    and the target element excised."""
    elems, egaps, stop = _strip_stop(system)
    if not 0 <= index < len(elems):
        raise IndexError(f"element index {index} out of range")
    return elems, egaps, stop


def _assemble_split(system: LensSystem, index: int,
                    l1: LensElement, flip1: bool,
                    l2: LensElement, flip2: bool,
                    stop_slot: int) -> LensSystem:
    elems, egaps, stop = _split_parts(system, index)
    new_elems = (elems[:index]
                 + [ElementInstance(l1, flip1), ElementInstance(l2, flip2)]
                 + elems[index + 1:])
    new_egaps = egaps[:index] + [SPLIT_GAP_MM] + egaps[index:]
    return _assemble(new_elems, new_egaps, stop_slot, stop,
                     system.sensor_gap, system.sensor)


def split_element(system: LensSystem, index: int, catalog: Catalog,
                  cfg: SplitConfig = SplitConfig()) -> Iterator[LensSystem]:
    """All replacements of element `index` by an ordered admissible pair.

    The new pair starts 1 mm apart; each emitted combination re-enumerates
    every stop slot (k elements give k+1 slots), so the old stop position
    is deliberately forgotten. An empty stream is valid."""
    elems, _, _ = _split_parts(system, index)
    l0 = elems[index].element
    adm = admissible_split_elements(l0, catalog, cfg)
    k_new = len(elems) + 1
    for l1 in adm:
        for f1 in _orientations(l1, cfg.flips):
            for l2 in adm:
                for f2 in _orientations(l2, cfg.flips):
                    for slot in range(k_new + 1):
                        yield _assemble_split(system, index, l1, f1,
                                              l2, f2, slot)


def rank_split_targets(system: LensSystem) -> list[int]:
    """Element indices ordered by descending |power|, ties broken by
    descending maximum curvature, then by position."""
    elems = system.elements
    if not elems:
        raise ValueError("system has no lens elements")
    keyed = [(-abs(inst.element.power), -inst.element.max_curvature, i)
             for i, inst in enumerate(elems)]
    return [i for _, _, i in sorted(keyed)]


# ---------------------------------------------------------------------------
# candidate pool

def system_identity(system: LensSystem) -> tuple[str, ...]:
    """Dedup key: ordered stock ids with flip marks and the stop position.
    Air gaps are excluded on purpose (they are optimized, not chosen)."""
    tokens = []
    for c in system.components:
        if isinstance(c, ElementInstance):
            tokens.append(c.element.stock_id + ("*" if c.flipped else ""))
        elif isinstance(c, Stop):
            tokens.append("|stop|")
        else:
            tokens.append(f"|ideal:{c.focal_length}|")
    return tuple(tokens)


@dataclass(frozen=True)
class PoolEntry:
    system: LensSystem            # gaps already optimized, sensor focused
    report: MeritReport
    opt: dict = field(default_factory=dict)   # optimizer summary
    trace: tuple = ()                          # accepted-step log records

    @property
    def score(self) -> float:
        return self.report.mtf_area_mean

    @property
    def identity(self) -> tuple[str, ...]:
        return system_identity(self.system)


def rank_entries(entries: Iterable[PoolEntry]) -> list[PoolEntry]:
    """Descending score; ties resolved by the identity sequence so ranking
    never depends on insertion order."""
    finite = [e for e in entries if math.isfinite(e.score)]
    return sorted(finite, key=lambda e: (-e.score, e.identity))


@dataclass(frozen=True)
class CandidatePool:
    iteration: int
    entries: tuple[PoolEntry, ...]
    stagnant: bool = False

    def __post_init__(self):
        ids = [e.identity for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("pool entries must be unique by identity")

    @property
    def best(self) -> Optional[PoolEntry]:
        return self.entries[0] if self.entries else None


def pool_to_json(pool: CandidatePool) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "iteration": pool.iteration,
        "stagnant": pool.stagnant,
        "entries": [{
            "system": system_to_json(e.system),
            "report": e.report.to_json(),
            "opt": e.opt,
            "trace": list(e.trace),
        } for e in pool.entries],
    }


def pool_from_json(doc: dict, catalog: Catalog) -> CandidatePool:
    entries = tuple(PoolEntry(
        system=system_from_json(d["system"], catalog),
        report=report_from_json(d["report"]),
        opt=dict(d.get("opt", {})),
        trace=tuple(d.get("trace", ())),
    ) for d in doc["entries"])
    return CandidatePool(int(doc["iteration"]), entries,
                         bool(doc.get("stagnant", False)))


# ---------------------------------------------------------------------------
# evolution

@dataclass(frozen=True)
class EvolutionConfig:
    strategy: str
    seed: int
    pool_size: int = 60
    budget: int = 500              # continuous-optimization runs / iteration
    form: str = "triplet"          # seed form for seeding and random draws
    power_tol: float = 0.25
    diam_tol: float = 0.25
    split: SplitConfig = field(default_factory=SplitConfig)
    max_attempts_factor: int = 50  # cap on draws per optimization slot
    opt_max_iter: int = 200        # continuous-optimizer iteration cap
    opt_rel_tol: float = 1e-5      # continuous-optimizer stop tolerance

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.max_attempts_factor < 1:
            raise ValueError("max_attempts_factor must be >= 1")
        if self.opt_max_iter < 1:
            raise ValueError("opt_max_iter must be >= 1")
        if self.opt_rel_tol <= 0:
            raise ValueError("opt_rel_tol must be > 0")


def spec_merit_config(spec: DesignSpec, mode: Optional[str] = None,
                      **overrides) -> MeritConfig:
    """Merit settings shared by every candidate of a run: fields at 0, 0.5
    and 1.0 of the spec semi-diagonal angle so ranking compares like with
    like, regardless of each candidate's own achieved FOV."""
    fields = FieldSampling.from_relative_fields((0.0, 0.5, 1.0),
                                                spec.fov / 2.0)
    return MeritConfig(fields=fields, wavelengths=default_channels(),
                       mode=mode or spec.merit_mode,
                       pixel_pitch_um=spec.pixel_pitch_um, **overrides)


def _draw(rng: np.random.Generator, n: int) -> int:
    """Uniform index that spends no entropy when there is no choice, so a
    one-entry pool consumes the stream exactly like greedy does."""
    return 0 if n == 1 else int(rng.integers(n))


def _weighted_target(rng: np.random.Generator, system: LensSystem) -> int:
    """Split target drawn with probability proportional to |power|: power
    concentration is where splitting pays off."""
    elems = system.elements
    if len(elems) == 1:
        return 0
    w = np.array([abs(i.element.power) for i in elems])
    cum = np.cumsum(w / w.sum())
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(idx, len(elems) - 1)


def sample_split_child(rng: np.random.Generator, system: LensSystem,
                       catalog: Catalog, spec: DesignSpec,
                       cfg: SplitConfig) -> Optional[LensSystem]:
    """One uniformly drawn member of the parent's split space, or None when
    the parent is full or the target has no admissible pair elements."""
    elems = system.elements
    if len(elems) + 1 > spec.max_elements:
        return None
    index = _weighted_target(rng, system)
    l0 = elems[index].element
    adm = admissible_split_elements(l0, catalog, cfg)
    if not adm:
        return None
    l1 = adm[_draw(rng, len(adm))]
    o1 = _orientations(l1, cfg.flips)
    f1 = o1[_draw(rng, len(o1))]
    l2 = adm[_draw(rng, len(adm))]
    o2 = _orientations(l2, cfg.flips)
    f2 = o2[_draw(rng, len(o2))]
    slot = _draw(rng, len(elems) + 2)
    return _assemble_split(system, index, l1, f1, l2, f2, slot)


def _shape_key(system: LensSystem) -> tuple:
    signs = tuple(1 if i.element.power > 0 else -1 for i in system.elements)
    return (len(signs), signs, system.stop_index)


def _compose_swap(rng: np.random.Generator,
                  entries: Sequence[PoolEntry]) -> LensSystem:
    """pool_swap parent: pick a template, then fill each element slot from a
    uniformly drawn pool member of the same shape. Swapping only within the
    same slot index preserves the sign pattern by construction."""
    template = entries[_draw(rng, len(entries))].system
    shape = _shape_key(template)
    group = [e.system for e in entries if _shape_key(e.system) == shape]
    elems, egaps, stop = _strip_stop(template)
    picked = [group[_draw(rng, len(group))].elements[j]
              for j in range(len(elems))]
    if picked == elems:
        # every slot drew the template's own element: keep the template
        # verbatim so its optimized gap layout is not redistributed
        return template
    slot = _stop_slot(template)
    return _assemble(picked, egaps, slot, stop, template.sensor_gap,
                     template.sensor)


def _stop_slot(system: LensSystem) -> int:
    """Insertion index of the stop among the elements (0..k)."""
    return sum(1 for c in system.components[:system.stop_index]
               if isinstance(c, ElementInstance))


def _seed_draw(rng: np.random.Generator, slot_lists, form: SeedForm,
               spec: DesignSpec) -> LensSystem:
    picks = tuple(lst[_draw(rng, len(lst))] for lst in slot_lists)
    insts = tuple(ElementInstance(e) for e in picks)
    egaps = (SEED_GAP_MM,) * (len(insts) - 1)
    stop = Stop(max(spec.target_efl / (2.0 * spec.f_number), 0.5))
    slot = form.stop_slots[_draw(rng, len(form.stop_slots))]
    return _assemble(insts, egaps, slot, stop, spec.target_efl, spec.sensor)


def _strategy_stream(rng: np.random.Generator, pool: CandidatePool,
                     catalog: Catalog, spec: DesignSpec,
                     cfg: EvolutionConfig) -> Iterator[Optional[LensSystem]]:
    if cfg.strategy == "random":
        form = seed_form(cfg.form)
        slot_lists = [_slot_candidates(catalog, s, spec, cfg.power_tol,
                                       cfg.diam_tol) for s in form.slots]
        if any(not lst for lst in slot_lists):
            return
        while True:
            yield _seed_draw(rng, slot_lists, form, spec)
    elif cfg.strategy == "greedy":
        parent = pool.entries[0].system
        while True:
            yield sample_split_child(rng, parent, catalog, spec, cfg.split)
    elif cfg.strategy == "pool":
        while True:
            parent = pool.entries[_draw(rng, len(pool.entries))].system
            yield sample_split_child(rng, parent, catalog, spec, cfg.split)
    else:                                   # pool_swap
        while True:
            parent = _compose_swap(rng, pool.entries)
            yield sample_split_child(rng, parent, catalog, spec, cfg.split)


def plan_iteration(pool: CandidatePool, catalog: Catalog, spec: DesignSpec,
                   cfg: EvolutionConfig, *,
                   log: Optional[Callable[[dict], None]] = None
                   ) -> list[LensSystem]:
    """Deterministic candidate list for the next iteration: exactly the
    systems that passed pruning before the budget ran out, already focused
    and f-number adjusted. Independent of any evaluation parallelism."""
    if cfg.strategy != "random" and not pool.entries:
        raise ValueError(f"strategy {cfg.strategy!r} needs a non-empty pool")
    it_next = pool.iteration + 1
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(it_next,)))
    seen = {e.identity for e in pool.entries}
    planned: list[LensSystem] = []
    attempts = 0
    max_attempts = cfg.max_attempts_factor * cfg.budget
    stream = _strategy_stream(rng, pool, catalog, spec, cfg)
    while len(planned) < cfg.budget and attempts < max_attempts:
        cand = next(stream, None)
        if cand is None and cfg.strategy == "random":
            break                          # empty slot: nothing to draw
        attempts += 1
        if cand is None:
            continue
        ident = system_identity(cand)
        if ident in seen:
            continue
        seen.add(ident)
        pr = prune(cand, spec)
        if log is not None:
            log({"iteration": it_next, "event": "candidate",
                 "identity": list(ident), "pruned": pr.reason})
        if pr.passed:
            planned.append(pr.system)
    return planned


def evaluate_candidate(system: LensSystem, spec: DesignSpec,
                       config: MeritConfig, max_iter: int = 200,
                       rel_tol: float = 1e-5) -> Optional[PoolEntry]:
    """Pure per-candidate work: optimize gaps from the candidate's own
    initialization, re-check the achieved FOV (splitting must not silently
    drift the focal length), then measure the final report."""
    trace: list[dict] = []
    try:
        state = optimize_two_stage(system, config,
                                   start_gaps=system.air_gaps,
                                   log=trace.append, rel_tol=rel_tol,
                                   max_iter=max_iter)
    except (InfeasibleCandidateError, AfocalSystemError, TooFewRaysError):
        return None
    focused = system.with_gaps(air_gaps=state.gaps,
                               sensor_gap=state.sensor_gap)
    try:
        fov = fov_paraxial(focused)
    except AfocalSystemError:
        return None
    if abs(fov - spec.fov) > spec.fov_tol * spec.fov:
        return None
    report = merit_report(focused, config, include_mtf=True)
    opt = {"stage": state.stage, "iterations": state.iterations,
           "converged": state.converged, "objective": state.objective_value,
           "mtf_area": state.mtf_area}
    return PoolEntry(focused, report, opt, tuple(trace))


def _eval_star(args) -> Optional[PoolEntry]:
    return evaluate_candidate(*args)


def _memo_key(system: LensSystem) -> tuple:
    return (system_identity(system),
            tuple(round(g, 9) for g in system.air_gaps),
            round(system.sensor_gap, 9))


def _evaluate_planned(planned: Sequence[LensSystem], spec: DesignSpec,
                      config: MeritConfig, cfg: EvolutionConfig,
                      memo: Optional[dict], map_fn: Optional[Callable]
                      ) -> list[Optional[PoolEntry]]:
    """Evaluate candidates in plan order. evaluate_candidate is pure, so an
    optional memo keyed on identity plus the exact starting gaps skips
    repeated work without changing any result; the caller must keep one
    memo per (spec, merit config, optimizer caps) combination."""
    keys = [_memo_key(s) if memo is not None else None for s in planned]
    todo = [i for i in range(len(planned))
            if memo is None or keys[i] not in memo]
    mapper = map_fn if map_fn is not None else map
    fresh = iter(list(mapper(_eval_star,
                             [(planned[i], spec, config, cfg.opt_max_iter,
                               cfg.opt_rel_tol) for i in todo])))
    todo_set = set(todo)
    results: list[Optional[PoolEntry]] = []
    for i in range(len(planned)):
        if i in todo_set:
            r = next(fresh)
            if memo is not None:
                memo[keys[i]] = r
            results.append(r)
        else:
            results.append(memo[keys[i]])
    return results


def evolve(pool: CandidatePool, catalog: Catalog, spec: DesignSpec,
           cfg: EvolutionConfig, *, merit_config: Optional[MeritConfig] = None,
           log: Optional[Callable[[dict], None]] = None,
           map_fn: Optional[Callable] = None,
           memo: Optional[dict] = None) -> CandidatePool:
    """One evolution step: draw children by the configured strategy, spend
    the budget on prune survivors, rank parents and children together, and
    keep the best pool_size.

    map_fn may be an executor's map; candidate planning and the final
    reduction stay sequential, so results never depend on worker count."""
    mc = merit_config if merit_config is not None else spec_merit_config(spec)
    it_next = pool.iteration + 1
    planned = plan_iteration(pool, catalog, spec, cfg, log=log)
    results = _evaluate_planned(planned, spec, mc, cfg, memo, map_fn)
    children = [e for e in results if e is not None]
    if log is not None:
        for e in children:
            log({"iteration": it_next, "event": "evaluated",
                 "identity": list(e.identity), "mtf_area": e.score,
                 "objective": e.opt.get("objective")})
    if not children:
        return CandidatePool(it_next, pool.entries, stagnant=True)
    merged = rank_entries(tuple(pool.entries) + tuple(children))
    return CandidatePool(it_next, tuple(merged[:cfg.pool_size]),
                         stagnant=False)


def seed_pool(catalog: Catalog, spec: DesignSpec, cfg: EvolutionConfig, *,
              merit_config: Optional[MeritConfig] = None,
              log: Optional[Callable[[dict], None]] = None,
              map_fn: Optional[Callable] = None,
              memo: Optional[dict] = None) -> CandidatePool:
    """Iteration 0: walk the seed enumeration in its deterministic order,
    optimize the first `budget` prune survivors, keep the best pool_size."""
    mc = merit_config if merit_config is not None else spec_merit_config(spec)
    form = seed_form(cfg.form)
    planned: list[LensSystem] = []
    seen: set = set()
    for cand in enumerate_seed(catalog, spec, form, power_tol=cfg.power_tol,
                               diam_tol=cfg.diam_tol):
        if len(planned) >= cfg.budget:
            break
        ident = system_identity(cand)
        if ident in seen:
            continue
        seen.add(ident)
        pr = prune(cand, spec)
        if log is not None:
            log({"iteration": 0, "event": "candidate",
                 "identity": list(ident), "pruned": pr.reason})
        if pr.passed:
            planned.append(pr.system)
    results = _evaluate_planned(planned, spec, mc, cfg, memo, map_fn)
    children = [e for e in results if e is not None]
    if log is not None:
        for e in children:
            log({"iteration": 0, "event": "evaluated",
                 "identity": list(e.identity), "mtf_area": e.score,
                 "objective": e.opt.get("objective")})
    return CandidatePool(0, tuple(rank_entries(children)[:cfg.pool_size]))
