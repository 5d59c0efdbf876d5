import io
import json
import math
import time

import numpy as np
import pytest

import stocklens.catalog as cat
from stocklens.errors import AfocalSystemError, InfeasibleCandidateError
from stocklens.merit import MeritConfig, objective
from stocklens.optics import (
    SENSOR_FORMATS,
    ChannelWavelengths,
    ElementInstance,
    Emitter,
    FieldSampling,
    IdealLens,
    LensSystem,
    Stop,
)
from stocklens.optimize import (
    STAGE_GEOMETRIC,
    STAGE_MTF,
    build_exit_cache,
    cached_objective,
    init_sensor,
    jsonl_logger,
    optimize_bfl,
    optimize_gaps,
    optimize_two_stage,
    richardson_gradient,
)

M43 = SENSOR_FORMATS["micro_four_thirds"]
CROWN = cat.GlassSpec("bk", 1.517, 64.2)
FLINT = cat.GlassSpec("f2", 1.620, 36.4)
AXIS = Emitter.at_angle(0.0, 0.0)


def mono(fields=(0.0,), rings=12, spokes=24):
    return MeritConfig(
        fields=FieldSampling(tuple(Emitter.at_angle(0.0, a) for a in fields)),
        wavelengths=ChannelWavelengths(((550.0,),)), rings=rings, spokes=spokes)


def dcx(f=50.7, r=50.0, t=4.0, d=25.0):
    return cat.LensElement("DCX1", "t", "DCX", d, f, (r, -r), (t,),
                           (cat.GlassSpec("n15", 1.5, 60.0),), 1.0, "none")


def ach(stock_id, d, f_nom, r1, r2, r3):
    return cat.LensElement(stock_id, "t", "achromat_pos", d, f_nom,
                           (r1, r2, r3), (5.0, 2.0), (CROWN, FLINT), 1.0, "none")


def doublet_pair():
    a = ach("ACH60", 22.0, 60.0, 40.0, -35.0, -120.0)
    b = ach("ACH80", 22.0, 80.0, 50.0, -45.0, -160.0)
    return LensSystem((Stop(6.0), ElementInstance(a), ElementInstance(b)),
                      (2.0, 2.0), 30.0, M43)


def pair_objective(system, config, gaps):
    """F at a gap vector with the sensor re-focused, for scan oracles."""
    s = system.with_gaps(air_gaps=gaps)
    try:
        cache = build_exit_cache(s, config)
        return optimize_bfl(s, config, cache).objective_value
    except (AfocalSystemError, InfeasibleCandidateError):
        return math.inf


@pytest.fixture(scope="module")
def pair_run():
    system = doublet_pair()
    config = mono(fields=(0.0, 8.0), rings=8, spokes=16)
    records = []
    state = optimize_gaps(system, config, log=records.append, rel_tol=1e-7)
    return system, config, state, records


# ---------------------------------------------------------------------------
# sensor initialization


def test_init_sensor_ideal_lens_exact():
    sys1 = LensSystem((Stop(4.0), IdealLens(17.0, semi_diameter=10.0)),
                      (3.0,), 10.0, M43)
    assert init_sensor(sys1) == 17.0


def test_init_sensor_thin_singlet_near_focal():
    thin = cat.LensElement("THIN", "t", "DCX", 25.0, 50.0, (50.0, -50.0),
                           (0.02,), (cat.GlassSpec("n15", 1.5, 60.0),), 1.0, "none")
    sys1 = LensSystem((Stop(8.0), ElementInstance(thin)), (3.0,), 10.0, M43)
    assert init_sensor(sys1) == pytest.approx(50.0, rel=0.01)


def test_init_sensor_negative_lens_raises():
    neg = cat.LensElement("NEG", "t", "DCV", 25.0, -40.0, (-40.0, 40.0),
                          (2.5,), (cat.GlassSpec("n15", 1.5, 60.0),), 1.0, "none")
    sys1 = LensSystem((Stop(5.0), ElementInstance(neg)), (3.0,), 10.0, M43)
    with pytest.raises(AfocalSystemError):
        init_sensor(sys1)


# ---------------------------------------------------------------------------
# focus loop


def test_bfl_quadratic_merit_converges_fast():
    # an ideal lens has exactly quadratic spot MS in the sensor distance
    sys1 = LensSystem((Stop(4.0), IdealLens(17.0, semi_diameter=10.0)),
                      (3.0,), 10.0, M43)
    res = optimize_bfl(sys1, mono())
    assert res.sensor_gap == pytest.approx(17.0, abs=1e-6)
    assert res.objective_value < 1e-12
    assert res.iterations <= 30


def test_bfl_cached_matches_full_retrace_on_random_triplets():
    catal = cat.bundled_catalog()
    pos = [e for e in catal.positive() if len(e.radii) == 2 and e.diameter >= 15.0]
    neg = [e for e in catal.negative() if len(e.radii) == 2 and e.diameter >= 15.0]
    rng = np.random.default_rng(42)
    config = mono()
    checked = 0
    trials = 0
    while checked < 20 and trials < 120:
        trials += 1
        p1, p2 = rng.choice(len(pos), 2, replace=False)
        n1 = rng.integers(len(neg))
        gaps = tuple(rng.uniform(1.0, 4.0, size=3))
        s = LensSystem((ElementInstance(pos[p1]), Stop(5.0),
                        ElementInstance(neg[n1]), ElementInstance(pos[p2])),
                       gaps, 30.0, M43)
        try:
            cache = build_exit_cache(s, config)
            r_cached = optimize_bfl(s, config, cache)
            r_full = optimize_bfl(s, config, full_retrace=True)
        except (AfocalSystemError, InfeasibleCandidateError):
            continue
        checked += 1
        assert abs(r_cached.sensor_gap - r_full.sensor_gap) <= 1e-9
        assert r_cached.objective_value == pytest.approx(
            r_full.objective_value, rel=1e-10)
        # cache correctness away from the optimum as well
        for dk in rng.uniform(0.7, 1.3, size=2) * r_full.sensor_gap:
            assert cached_objective(cache, config, dk) == pytest.approx(
                objective(s, config, sensor_gap=dk), rel=1e-10)
    assert checked == 20


def test_bfl_cache_demands_matching_gaps():
    sys1 = LensSystem((Stop(8.0), ElementInstance(dcx())), (4.0,), 45.0, M43)
    cache = build_exit_cache(sys1, mono())
    moved = sys1.with_gaps(air_gaps=(5.0,))
    with pytest.raises(ValueError):
        optimize_bfl(moved, mono(), cache)


def test_bfl_rejects_system_with_no_live_rays():
    # the 45-degree bundle misses the lens entirely, so its channel can
    # never form a statistic and the merit is not finite anywhere
    sys1 = LensSystem((Stop(12.0), ElementInstance(dcx())), (30.0,), 40.0, M43)
    config = mono(fields=(0.0, 45.0))
    with pytest.raises(InfeasibleCandidateError):
        optimize_bfl(sys1, config)


def test_cached_evaluation_speedup():
    # 6 singlets = 12 refracting surfaces; re-intersecting the sensor only
    # must beat the full retrace by at least the surface-count factor / 2
    def pcx(sid, f):
        r = f * (CROWN.n_d - 1.0)
        return cat.LensElement(sid, "t", "PCX", 24.0, f, (r, math.inf), (3.0,),
                               (CROWN,), 1.0, "none")

    els = tuple(ElementInstance(pcx(f"P{i}", 150.0 + 20 * i)) for i in range(6))
    sys6 = LensSystem((Stop(8.0),) + els, (2.0,) * 6, 18.0, M43)
    config = mono()
    cache = build_exit_cache(sys6, config)
    dks = np.linspace(15.0, 21.0, 24)
    cached = [cached_objective(cache, config, dk) for dk in dks]  # warm-up
    t0 = time.perf_counter()
    cached = [cached_objective(cache, config, dk) for dk in dks]
    t_cached = time.perf_counter() - t0
    t0 = time.perf_counter()
    full = [objective(sys6, config, sensor_gap=dk) for dk in dks]
    t_full = time.perf_counter() - t0
    assert np.allclose(cached, full, rtol=1e-12)
    assert t_full / t_cached >= 6.0


# ---------------------------------------------------------------------------
# gradients


def test_richardson_exact_for_cubic():
    g = richardson_gradient(lambda v: float(v[0] ** 3), [2.0], h0=0.1)
    assert g[0] == pytest.approx(12.0, abs=1e-6)


def test_richardson_exact_for_linear():
    g = richardson_gradient(lambda v: 3.0 * v[0] - 2.0 * v[1] + 1.0,
                            [0.7, -1.3], h0=0.05)
    assert g[0] == pytest.approx(3.0, abs=1e-12)
    assert g[1] == pytest.approx(-2.0, abs=1e-12)


def test_richardson_reduces_step_once_then_fails():
    def clipped(edge):
        def f(v):
            return math.inf if v[0] > edge else float(v[0] ** 2)
        return f

    # first try probes x=2.1 (dead), the h0/2 retry stays inside
    g = richardson_gradient(clipped(2.05), [2.0], h0=0.1)
    assert g[0] == pytest.approx(4.0, abs=1e-9)
    # even the reduced step probes dead territory: give up
    with pytest.raises(InfeasibleCandidateError):
        richardson_gradient(clipped(2.01), [2.0], h0=0.1)


def test_richardson_matches_fine_central_difference_on_random_systems():
    rng = np.random.default_rng(7)
    config = mono(fields=(0.0, 5.0), rings=8, spokes=16)
    h0 = 0.02
    for _ in range(50):
        f_lens = rng.uniform(40.0, 80.0)
        r = f_lens * 2 * (1.5 - 1.0)
        el = cat.LensElement("R1", "t", "DCX", 25.0, f_lens, (r, -r), (4.0,),
                             (cat.GlassSpec("n15", 1.5, 60.0),), 1.0, "none")
        sys1 = LensSystem((Stop(rng.uniform(5.0, 8.0)), ElementInstance(el)),
                          (rng.uniform(2.0, 6.0),), 30.0, M43)
        dk0 = 0.95 * init_sensor(sys1)
        gaps0 = np.array(sys1.air_gaps)

        def f(d):
            return objective(sys1.with_gaps(air_gaps=d), config, sensor_gap=dk0)

        rich = richardson_gradient(f, gaps0, h0=h0)
        h = h0 / 4.0
        fine = np.array([(f(gaps0 + h) - f(gaps0 - h)) / (2 * h)])
        assert np.linalg.norm(rich - fine) <= 1e-4 * np.linalg.norm(fine)


# ---------------------------------------------------------------------------
# gap descent


def test_gap_descent_beats_coarse_scan(pair_run):
    system, config, state, _ = pair_run
    assert state.converged
    coarse = min(pair_objective(system, config, (a, b))
                 for a in np.arange(0.0, 8.01, 0.5)
                 for b in np.arange(0.0, 8.01, 0.5))
    assert state.objective_value <= coarse + 1e-9


def test_gap_descent_locally_optimal_at_scan_resolution(pair_run):
    system, config, state, _ = pair_run
    g1, g2 = state.gaps
    a_axis = np.arange(max(g1 - 0.12, 0.0), g1 + 0.1201, 0.01)
    b_axis = np.arange(max(g2 - 0.12, 0.0), g2 + 0.1201, 0.01)
    vals = np.array([[pair_objective(system, config, (a, b)) for b in b_axis]
                     for a in a_axis])
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    # the 0.01 mm scan's best point must be interior (a real minimum, not a
    # window edge) and within 0.05 mm of where the optimizer stopped
    assert 0 < i < len(a_axis) - 1 and 0 < j < len(b_axis) - 1
    assert abs(a_axis[i] - g1) <= 0.05
    assert abs(b_axis[j] - g2) <= 0.05


def test_gap_descent_log_is_monotone_and_feasible(pair_run):
    _, _, state, records = pair_run
    assert len(records) >= 2
    fs = [r["F"] for r in records]
    assert all(b <= a for a, b in zip(fs, fs[1:]))
    assert all(math.isfinite(f) for f in fs)
    assert all(g >= 0.0 for r in records for g in r["gaps"])
    assert all(r["stage"] == STAGE_GEOMETRIC for r in records)
    assert records[0]["iteration"] == 0
    assert fs[-1] == pytest.approx(state.objective_value, rel=1e-12)
    assert state.objective_value <= state.initial_objective


def test_gap_descent_reported_f_is_at_refocused_sensor(pair_run):
    system, config, state, records = pair_run
    for rec in (records[0], records[len(records) // 2], records[-1]):
        s = system.with_gaps(air_gaps=rec["gaps"])
        refocus = optimize_bfl(s, config)
        assert refocus.sensor_gap == pytest.approx(rec["d_k"], abs=1e-6)
        assert refocus.objective_value == pytest.approx(rec["F"], rel=1e-9)
    assert objective(system.with_gaps(air_gaps=state.gaps), config,
                     sensor_gap=state.sensor_gap) == pytest.approx(
                         state.objective_value, rel=1e-10)


def test_gap_descent_fixed_point(pair_run):
    system, config, state, _ = pair_run
    again = optimize_gaps(system, config, start_gaps=state.gaps, rel_tol=1e-7)
    assert again.converged
    assert again.iterations == 1
    assert np.allclose(again.gaps, state.gaps, atol=1e-12)
    assert again.objective_value == pytest.approx(state.objective_value,
                                                  rel=1e-12)


def test_gap_descent_rejects_when_all_starts_fail():
    neg = cat.LensElement("NEG", "t", "DCV", 25.0, -40.0, (-40.0, 40.0),
                          (2.5,), (cat.GlassSpec("n15", 1.5, 60.0),), 1.0, "none")
    sys1 = LensSystem((Stop(5.0), ElementInstance(neg)), (3.0,), 10.0, M43)
    with pytest.raises(InfeasibleCandidateError):
        optimize_gaps(sys1, mono())


# ---------------------------------------------------------------------------
# two-stage


def test_two_stage_structure_and_acceptance():
    sys1 = LensSystem((Stop(8.0), ElementInstance(dcx())), (4.0,), 45.0, M43)
    config = MeritConfig(
        fields=FieldSampling((AXIS, Emitter.at_angle(0.0, 6.0))),
        wavelengths=ChannelWavelengths(((550.0,),)),
        psf_grid=64, psf_pupil_samples=32, rings=10, spokes=20)
    records = []
    state = optimize_two_stage(sys1, config, log=records.append, max_iter=30)
    assert state.stage == STAGE_MTF
    assert state.mtf_area == pytest.approx(-state.objective_value, rel=1e-12)
    assert state.mtf_area > 0.0

    stages = [r["stage"] for r in records]
    assert STAGE_GEOMETRIC in stages and STAGE_MTF in stages
    for name in (STAGE_GEOMETRIC, STAGE_MTF):
        fs = [r["F"] for r in records if r["stage"] == name]
        assert all(b <= a for a, b in zip(fs, fs[1:]))
    mtf_fs = [r["F"] for r in records if r["stage"] == STAGE_MTF]
    area_at_stage1 = -mtf_fs[0]
    assert state.mtf_area >= area_at_stage1 - 1e-12


def test_two_stage_ideal_lens_is_a_noop():
    sys1 = LensSystem((Stop(4.0), IdealLens(17.0, semi_diameter=10.0)),
                      (3.0,), 10.0, M43)
    config = MeritConfig(
        fields=FieldSampling((AXIS,)),
        wavelengths=ChannelWavelengths(((550.0,),)),
        psf_grid=64, psf_pupil_samples=32)
    state = optimize_two_stage(sys1, config, max_iter=20)
    assert state.converged
    assert state.sensor_gap == pytest.approx(17.0, abs=1e-6)
    assert state.mtf_area > 0.0
    # no accepted step ever moved off the analytic focus
    assert state.objective_value == pytest.approx(state.initial_objective,
                                                  rel=1e-9)


def test_jsonl_logger_round_trips():
    buf = io.StringIO()
    emit = jsonl_logger(buf)
    emit({"stage": STAGE_GEOMETRIC, "iteration": 0, "F": 1.5,
          "gaps": [2.0, 3.0], "d_k": 41.25})
    line = buf.getvalue().strip()
    doc = json.loads(line)
    assert doc == {"stage": "spot_or_opd", "iteration": 0, "F": 1.5,
                   "gaps": [2.0, 3.0], "d_k": 41.25}
