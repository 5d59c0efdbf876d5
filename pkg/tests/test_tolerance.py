"""Assembly tolerance Monte Carlo: perturbation model and report."""

import math
from multiprocessing.pool import ThreadPool

import numpy as np
import pytest

from stocklens.benchmark import toy_benchmark
from stocklens.jsonio import canonical_dumps
from stocklens.merit.report import merit_report
from stocklens.optics.sampling import emitter_bundle
from stocklens.optics.system import (IdealLens, LensSystem, Stop,
                                     system_from_json, system_to_json)
from stocklens.optics.trace import trace_bundle
from stocklens.optimize import optimize_bfl
from stocklens.search import enumerate_seed, prune, seed_form
from stocklens.tolerance import (ToleranceConfig, ToleranceReport,
                                 ToleranceRow, perturb, raw_scores_csv,
                                 report_from_json, run_tolerance,
                                 truncated_normal)

D_GREEN = 546.1


@pytest.fixture(scope="module")
def bench():
    return toy_benchmark()


@pytest.fixture(scope="module")
def focused(bench):
    """First pruned toy singlet with the sensor at the merit focus, so the
    nominal scores are what the optimizer would actually ship."""
    spec, toy, cfg = bench.spec, bench.catalog, bench.merit_config
    for cand in enumerate_seed(toy, spec, seed_form("singlet")):
        res = prune(cand, spec)
        if res.system is not None:
            foc = optimize_bfl(res.system, cfg)
            return res.system.with_gaps(sensor_gap=foc.sensor_gap)
    raise AssertionError("no pruned toy singlet")


def small_cfg(**overrides):
    kw = dict(element_sigma_um=20.0, element_cap_um=100.0,
              sensor_sigma_um=100.0, sensor_cap_um=300.0, runs=6, seed=3)
    kw.update(overrides)
    return ToleranceConfig(**kw)


# ---------------------------------------------------------------- decenters


def test_decenters_json_roundtrip(focused, bench):
    dec = tuple((0.01 * (i + 1), -0.02 * (i + 1))
                for i in range(len(focused.components)))
    sys_d = focused.with_decenters(dec)
    back = system_from_json(system_to_json(sys_d), bench.catalog)
    assert back.decenters == dec
    # absent stays absent
    assert "decenters" not in system_to_json(focused)
    assert system_from_json(system_to_json(focused),
                            bench.catalog).decenters is None


def test_decenters_validation(focused):
    n = len(focused.components)
    with pytest.raises(ValueError):
        focused.with_decenters([(0.0, 0.0)] * (n + 1))
    with pytest.raises(ValueError):
        focused.with_decenters([(math.nan, 0.0)] * n)


def test_zero_decenters_trace_bit_identical(focused, bench):
    em = bench.merit_config.fields.emitters[1]
    b = emitter_bundle(focused, em, D_GREEN, 4, 8)
    zeros = tuple((0.0, 0.0) for _ in focused.components)
    ta = trace_bundle(focused, b.origins, b.directions, D_GREEN)
    tb = trace_bundle(focused.with_decenters(zeros), b.origins, b.directions,
                      D_GREEN)
    assert np.array_equal(ta.points, tb.points)
    assert np.array_equal(ta.directions, tb.directions)
    assert np.array_equal(ta.alive, tb.alive)
    assert np.array_equal(ta.opl, tb.opl)


def test_decenter_mirror_symmetry_on_axis(focused, bench):
    # rotating every decenter by 180 degrees about the axis must not change
    # any on-axis score: the axial field has no preferred direction
    cfg = bench.merit_config
    dec = tuple((0.03 * (i + 1), -0.02 * (i + 1))
                for i in range(len(focused.components)))
    neg = tuple((-x, -y) for x, y in dec)
    ra = merit_report(focused.with_decenters(dec), cfg, include_mtf=True)
    rb = merit_report(focused.with_decenters(neg), cfg, include_mtf=True)
    for a, b in zip(ra.rows, rb.rows):
        if a.emitter_index != 0:
            continue
        assert a.spot_rms_um == pytest.approx(b.spot_rms_um, abs=1e-9)
        assert a.mtf50_cpmm == pytest.approx(b.mtf50_cpmm, rel=1e-5)


# ------------------------------------------------------------ config, draws


@pytest.mark.parametrize("kw", [
    dict(element_sigma_um=-1.0),
    dict(sensor_sigma_um=-0.5),
    dict(element_cap_um=10.0),       # cap below the 20 um sigma
    dict(sensor_cap_um=50.0),        # cap below the 100 um sigma
    dict(runs=0),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small_cfg(**kw)


def test_config_scaled():
    base = small_cfg(runs=17, seed=9)
    s = base.scaled(4.0)
    assert s.element_sigma_um == 80.0 and s.element_cap_um == 400.0
    assert s.sensor_sigma_um == 400.0 and s.sensor_cap_um == 1200.0
    assert s.runs == 17 and s.seed == 9


def test_truncated_normal_zero_sigma_spends_no_entropy():
    a = np.random.default_rng(5)
    b = np.random.default_rng(5)
    for _ in range(4):
        assert truncated_normal(a, 0.0, 0.0) == 0.0
    assert a.normal() == b.normal()


def test_truncated_normal_bound_and_spread():
    # cap at one sigma rejects about a third of raw draws, so the clipped
    # and resampled distributions are far apart; the analytic resampled
    # sigma is sqrt(1 - 2 phi(1) / (2 Phi(1) - 1)) = 0.539546
    rng = np.random.default_rng(20260817)
    draws = np.array([truncated_normal(rng, 1.0, 1.0)
                      for _ in range(1_000_000)])
    assert np.abs(draws).max() <= 1.0
    assert abs(draws.std() / 0.539546 - 1.0) < 0.02
    assert abs(draws.mean()) < 0.002


# ----------------------------------------------------------------- perturb


def test_perturb_zero_sigma_is_identity(focused, bench):
    cfg = small_cfg(element_sigma_um=0.0, element_cap_um=0.0,
                    sensor_sigma_um=0.0, sensor_cap_um=0.0)
    pr = perturb(focused, cfg, np.random.default_rng(1),
                 merit_config=bench.merit_config)
    assert pr.system is focused
    assert not pr.clamped and not pr.refocused
    nom = merit_report(focused, bench.merit_config, include_mtf=True)
    got = merit_report(pr.system, bench.merit_config, include_mtf=True)
    for a, b in zip(nom.rows, got.rows):
        assert a.mtf50_cpmm == b.mtf50_cpmm
        assert a.spot_rms_um == b.spot_rms_um


def test_perturb_deterministic(focused, bench):
    cfg = small_cfg()
    a = perturb(focused, cfg, np.random.default_rng(42),
                merit_config=bench.merit_config)
    b = perturb(focused, cfg, np.random.default_rng(42),
                merit_config=bench.merit_config)
    assert canonical_dumps(system_to_json(a.system)) == \
        canonical_dumps(system_to_json(b.system))


def test_perturb_moves_every_part(focused, bench):
    pr = perturb(focused, small_cfg(), np.random.default_rng(0),
                 merit_config=bench.merit_config)
    out = pr.system
    assert pr.refocused
    assert out.decenters is not None
    assert len(out.decenters) == len(out.components)
    # every element and the stop got a nonzero lateral error
    for comp, (dx, dy) in zip(out.components, out.decenters):
        assert (dx, dy) != (0.0, 0.0)
    assert out.air_gaps != focused.air_gaps
    assert all(g >= 0.0 for g in out.air_gaps)


def test_perturb_decenters_respect_cap(focused, bench):
    # cap equal to sigma truncates hard; every drawn offset obeys it
    cfg = small_cfg(element_sigma_um=50.0, element_cap_um=50.0,
                    sensor_sigma_um=0.0, sensor_cap_um=0.0)
    rng = np.random.default_rng(7)
    for _ in range(60):
        pr = perturb(focused, cfg, rng, merit_config=bench.merit_config)
        for dx, dy in pr.system.decenters:
            assert abs(dx) <= 0.050 and abs(dy) <= 0.050


def test_perturb_skips_ideal_lens(focused, bench):
    comps = focused.components + (IdealLens(focal_length=17.0),)
    gaps = focused.air_gaps + (focused.sensor_gap,)
    with_eye = LensSystem(components=comps, air_gaps=gaps,
                          sensor_gap=17.0, sensor=focused.sensor)
    cfg = small_cfg(sensor_sigma_um=0.0, sensor_cap_um=0.0)
    pr = perturb(with_eye, cfg, np.random.default_rng(3), merit_config=None)
    assert pr.system.decenters[-1] == (0.0, 0.0)
    assert all(d != (0.0, 0.0) for d in pr.system.decenters[:-1])
    # the gap behind the ideal lens only changes through its neighbor
    assert pr.system.sensor_gap == 17.0


def test_perturb_clamps_contact(focused, bench):
    tight = focused.with_gaps(air_gaps=tuple(0.001 for _ in focused.air_gaps))
    cfg = small_cfg(element_sigma_um=200.0, element_cap_um=1000.0,
                    sensor_sigma_um=0.0, sensor_cap_um=0.0)
    hits = 0
    for s in range(30):
        pr = perturb(tight, cfg, np.random.default_rng(s),
                     merit_config=bench.merit_config)
        assert all(g >= 0.0 for g in pr.system.air_gaps)
        if pr.clamped:
            hits += 1
            assert min(pr.system.air_gaps) == 0.0
    assert hits > 0


# ----------------------------------------------------------- run_tolerance


def test_single_run_zero_sigma_equals_nominal(focused, bench):
    cfg = small_cfg(element_sigma_um=0.0, element_cap_um=0.0,
                    sensor_sigma_um=0.0, sensor_cap_um=0.0, runs=1)
    rep = run_tolerance(focused, bench.merit_config, cfg)
    nom = merit_report(focused, bench.merit_config, include_mtf=True)
    assert rep.runs == 1 and rep.failed_runs == 0 and rep.clamped_runs == 0
    for row, nrow in zip(rep.rows, nom.rows):
        assert row.nominal_mtf50_cpmm == nrow.mtf50_cpmm
        assert row.percentiles == (nrow.mtf50_cpmm,) * 5
        assert row.mean == nrow.mtf50_cpmm


def test_report_deterministic_bytes(focused, bench):
    cfg = small_cfg(runs=5, seed=12)
    a = run_tolerance(focused, bench.merit_config, cfg, keep_raw=True)
    b = run_tolerance(focused, bench.merit_config, cfg, keep_raw=True)
    assert canonical_dumps(a.to_json()) == canonical_dumps(b.to_json())


def test_doubling_runs_keeps_prefix(focused, bench):
    a = run_tolerance(focused, bench.merit_config, small_cfg(runs=5),
                      keep_raw=True)
    b = run_tolerance(focused, bench.merit_config, small_cfg(runs=10),
                      keep_raw=True)
    assert b.raw[:5] == a.raw


def test_thread_map_matches_serial(focused, bench):
    cfg = small_cfg(runs=8, seed=2)
    serial = run_tolerance(focused, bench.merit_config, cfg, keep_raw=True)
    with ThreadPool(3) as pool:
        threaded = run_tolerance(focused, bench.merit_config, cfg,
                                 keep_raw=True, map_fn=pool.map)
    assert canonical_dumps(serial.to_json()) == \
        canonical_dumps(threaded.to_json())


def test_rows_follow_merit_layout(focused, bench):
    rep = run_tolerance(focused, bench.merit_config, small_cfg(runs=4))
    nom = merit_report(focused, bench.merit_config, include_mtf=True)
    assert [(r.emitter_index, r.channel) for r in rep.rows] == \
        [(r.emitter_index, r.channel) for r in nom.rows]
    for row in rep.rows:
        p = row.percentiles
        assert all(b >= a for a, b in zip(p, p[1:]))


def test_median_not_above_nominal(focused, bench):
    # a focused design sits at a merit optimum, so assembly errors can only
    # pull the median down (or leave it flat), never push it up
    cfg = small_cfg(runs=300, seed=11)
    rep = run_tolerance(focused, bench.merit_config, cfg)
    for row in rep.rows:
        assert row.p50 <= row.nominal_mtf50_cpmm


def test_stress_does_not_raise_median(focused, bench):
    base = small_cfg(runs=200, seed=11)
    rep1 = run_tolerance(focused, bench.merit_config, base)
    rep4 = run_tolerance(focused, bench.merit_config, base.scaled(4.0))
    for r1, r4 in zip(rep1.rows, rep4.rows):
        assert r4.p50 <= r1.p50 + 1e-9


def test_failed_runs_scored_zero(focused, bench):
    # decenters of millimeters on a half-inch aperture kill enough rays
    # that some assemblies cannot be scored at all
    cfg = small_cfg(element_sigma_um=4000.0, element_cap_um=8000.0,
                    runs=12, seed=5)
    rep = run_tolerance(focused, bench.merit_config, cfg, keep_raw=True)
    assert rep.failed_runs > 0
    zero_rows = sum(1 for run in rep.raw if all(x == 0.0 for x in run))
    assert zero_rows >= rep.failed_runs
    for row in rep.rows:
        p = row.percentiles
        assert all(b >= a for a, b in zip(p, p[1:]))


# ----------------------------------------------------------- serialization


def test_report_json_roundtrip(focused, bench):
    rep = run_tolerance(focused, bench.merit_config, small_cfg(runs=4),
                        keep_raw=True)
    assert report_from_json(rep.to_json()) == rep
    bare = run_tolerance(focused, bench.merit_config, small_cfg(runs=4))
    assert bare.raw is None
    assert report_from_json(bare.to_json()) == bare


def test_raw_csv_layout(focused, bench):
    rep = run_tolerance(focused, bench.merit_config, small_cfg(runs=4),
                        keep_raw=True)
    lines = raw_scores_csv(rep).strip().split("\n")
    assert len(lines) == 5
    header = lines[0].split(",")
    assert header[0] == "run"
    assert len(header) == 1 + len(rep.rows)
    first = lines[1].split(",")
    assert first[0] == "0"
    assert tuple(float(x) for x in first[1:]) == rep.raw[0]
    with pytest.raises(ValueError):
        raw_scores_csv(run_tolerance(focused, bench.merit_config,
                                     small_cfg(runs=1)))


def test_report_rejects_bad_percentiles():
    row = ToleranceRow(0, "G", 10.0, p5=5.0, p25=4.0, p50=6.0, p75=7.0,
                       p95=8.0, mean=6.0)
    with pytest.raises(ValueError):
        ToleranceReport((row,), 1, 0, 0, 0)
