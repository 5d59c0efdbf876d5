"""Catalog loading, querying, dispersion, and synthetic generation."""

import math

import numpy as np
import pytest

from stocklens import catalog as cat
from stocklens.errors import CatalogParseError, CatalogValidationError, WavelengthRangeError

HEADER = ",".join(cat.CSV_COLUMNS)


def _row(stock_id="X-1", kind="PCX", d=12.5, f=50.0, r1="25.9", r2="inf",
         t1="3.1", nd=1.5168, vd=64.2, cost="19.00", coating="MgF2"):
    return f"{stock_id},acme,{kind},{d},{f},{r1},{r2},,{t1},,{nd},{vd},,,{cost},{coating}"


def test_load_three_rows(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("\n".join([
        HEADER,
        _row("A-1"),
        _row("A-2", kind="DCX", r1="51.7", r2="-51.7"),
        _row("A-3", kind="PCV", f=-40.0, r1="-20.7"),
    ]))
    c = cat.load_catalog(p)
    assert len(c) == 3
    assert c.get("A-3").power < 0
    assert c.get("A-1").radii == (25.9, 0.0)  # inf encodes flat


def test_load_rejects_bad_diameter_with_row(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("\n".join([HEADER, _row("A-1"), _row("A-2", d=-5)]))
    with pytest.raises(CatalogValidationError) as ei:
        cat.load_catalog(p)
    assert ei.value.row == 2
    assert "diameter" in str(ei.value)


def test_load_rejects_malformed_and_misshapen_rows(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("\n".join([HEADER, _row(t1="three")]))
    with pytest.raises(CatalogValidationError) as ei:
        cat.load_catalog(p)
    assert ei.value.row == 1

    p.write_text("\n".join([HEADER, _row().replace(",,3.1", ",9.0,3.1")]))  # r3 on a singlet
    with pytest.raises(CatalogParseError):
        cat.load_catalog(p)

    p.write_text("stock_id,vendor\nA,b\n")
    with pytest.raises(CatalogParseError) as ei:
        cat.load_catalog(p)
    assert "kind" in str(ei.value)


def test_load_rejects_kind_sign_mismatch(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("\n".join([HEADER, _row(kind="PCX", f=-50.0, r1="-25.9")]))
    with pytest.raises(CatalogValidationError) as ei:
        cat.load_catalog(p)
    assert ei.value.row == 1


def test_bundled_catalog_totals():
    c = cat.bundled_catalog()
    assert len(c) == 885
    assert len(c.positive()) == 770
    assert len(c.negative()) == 115


def _mk(stock_id, r1, cost, coating):
    g = cat.GlassSpec("g", 1.5168, 64.2)
    return cat.LensElement(stock_id, "acme", "PCX", 12.5, r1 / (1.5168 - 1.0),
                           (r1, 0.0), (3.0,), (g,), cost, coating)


def test_merge_coating_variants_keeps_cheapest():
    a = _mk("A", 25.9, 30.0, "MgF2")
    b = _mk("B", 25.9, 22.0, "BBAR-VIS")
    merged = cat.merge_coating_variants([a, b])
    assert len(merged) == 1
    assert merged.elements[0].stock_id == "B"
    assert merged.elements[0].cost == 22.0


def test_merge_keeps_distinct_geometry():
    a = _mk("A", 25.9, 30.0, "MgF2")
    b = _mk("B", 26.4, 30.0, "MgF2")
    assert len(cat.merge_coating_variants([a, b])) == 2


def test_merge_empty():
    assert len(cat.merge_coating_variants([])) == 0


def test_query_matches_definition():
    c = cat.bundled_catalog()
    got = c.query(33.3, 0.25, 12.5, 0.25, +1)
    lo, hi = 0.75 * 33.3, 1.25 * 33.3
    expect = [e for e in c if e.power > 0 and lo <= abs(e.power) <= hi
              and 0.75 * 12.5 <= e.diameter <= 1.25 * 12.5]
    assert sorted(e.stock_id for e in got) == sorted(e.stock_id for e in expect)
    assert all(25.0 <= abs(e.power) <= 41.7 for e in got)


def test_query_full_tolerance_partitions_catalog():
    c = cat.bundled_catalog()
    plus = c.query(200.0, 0.999, 30.0, 0.999, +1)
    minus = c.query(200.0, 0.999, 30.0, 0.999, -1)
    ids = {e.stock_id for e in plus} | {e.stock_id for e in minus}
    assert len(plus) + len(minus) == len(c) == len(ids)


def test_query_indexed_equals_linear_scan():
    c = cat.bundled_catalog()
    rng = np.random.default_rng(99)
    for _ in range(1000):
        pc = float(rng.uniform(0.5, 300.0))
        pt = float(rng.uniform(0.01, 0.99))
        dc = float(rng.uniform(4.0, 60.0))
        dt = float(rng.uniform(0.01, 0.99))
        sign = 1 if rng.random() < 0.5 else -1
        got = {e.stock_id for e in c.query(pc, pt, dc, dt, sign)}
        ref = {e.stock_id for e in c
               if (e.power > 0) == (sign > 0)
               and (1 - pt) * pc <= abs(e.power) <= (1 + pt) * pc
               and (1 - dt) * dc <= e.diameter <= (1 + dt) * dc}
        assert got == ref


def test_dispersion_anchors_exact():
    glasses = list(cat.SYNTHETIC_GLASSES)
    rng = np.random.default_rng(3)
    glasses += [cat.GlassSpec("r", float(rng.uniform(1.45, 1.9)), float(rng.uniform(20, 80)))
                for _ in range(50)]
    for g in glasses:
        assert abs(g.index(cat.D_LINE) - g.n_d) < 1e-12
        dn = g.index(cat.F_LINE) - g.index(cat.C_LINE)
        assert abs(dn - (g.n_d - 1.0) / g.v_d) < 1e-12


def test_dispersion_is_normal():
    bk7 = cat.GlassSpec("bk7", 1.5168, 64.2)
    assert bk7.index(486.13) > bk7.index(656.27)
    assert bk7.index(400.0) > bk7.index(1000.0)


def test_dispersion_range_check():
    g = cat.GlassSpec("g", 1.6, 40.0)
    with pytest.raises(WavelengthRangeError):
        g.index(379.0)
    with pytest.raises(WavelengthRangeError):
        cat.refractive_index(g, 1101.0)
    g.index(380.0)
    g.index(1100.0)


def test_glass_invariants():
    with pytest.raises(ValueError):
        cat.GlassSpec("g", 2.6, 50.0)
    with pytest.raises(ValueError):
        cat.GlassSpec("g", 1.5, 14.0)


def test_generator_deterministic():
    a = cat.generate_synthetic_catalog(7, {"DCX": 20, "PCV": 5})
    b = cat.generate_synthetic_catalog(7, {"DCX": 20, "PCV": 5})
    assert len(a) == 25
    assert a.elements == b.elements


def test_generator_default_counts_match_bundle():
    c = cat.generate_synthetic_catalog(20260817)
    assert len(c.positive()) == 770
    assert len(c.negative()) == 115


def test_generator_focal_lengths_match_lensmaker():
    # thick lensmaker for singlets; exact two-lens combination for doublets
    c = cat.generate_synthetic_catalog(11, {"DCX": 40, "PCX": 40, "PCV": 20,
                                            "DCV": 20, "meniscus": 20,
                                            "achromat_pos": 30, "achromat_neg": 10})
    for e in c:
        ns = [g.n_d for g in e.glasses]
        if len(e.radii) == 2:
            n = ns[0]
            c1 = 0.0 if e.radii[0] == 0 else 1 / e.radii[0]
            c2 = 0.0 if e.radii[1] == 0 else 1 / e.radii[1]
            t = e.center_thicknesses[0]
            phi = (n - 1) * (c1 - c2 + (n - 1) * t * c1 * c2 / n)
        else:
            r1, r2, r3 = e.radii
            t1, t2 = e.center_thicknesses
            n1, n2 = ns
            c1 = 0.0 if r1 == 0 else 1 / r1
            c2 = 0.0 if r2 == 0 else 1 / r2
            c3 = 0.0 if r3 == 0 else 1 / r3
            # surface-by-surface power combination with reduced separations
            p1, p2, p3 = (n1 - 1) * c1, (n2 - n1) * c2, (1 - n2) * c3
            # reduced-angle trace: u is n*slope, transfer uses gap/n
            y, u = 1.0, 0.0
            for pw, gap, nm in ((p1, t1, n1), (p2, t2, n2), (p3, 0.0, 1.0)):
                u = u - y * pw
                y = y + gap * u / nm
            phi = -u
        assert abs(1.0 / phi - e.focal_length) <= 0.01 * abs(e.focal_length)


def test_generated_elements_survive_roundtrip(tmp_path):
    c = cat.generate_synthetic_catalog(5, {"DCX": 10, "achromat_pos": 5, "PCV": 5})
    p = tmp_path / "gen.csv"
    cat.save_catalog(c, p)
    r = cat.load_catalog(p)
    assert len(r) == 20
    for a, b in zip(c.elements, r.elements):
        assert a.stock_id == b.stock_id and a.kind == b.kind
        assert b.focal_length == pytest.approx(a.focal_length, rel=1e-8)
        assert b.radii == pytest.approx(a.radii, rel=1e-8, abs=1e-9)


def test_element_property_helpers():
    g = cat.GlassSpec("g", 1.5168, 64.2)
    e = cat.LensElement("A", "acme", "DCX", 12.5, 48.0, (50.0, -50.0), (3.0,), (g,), 10.0, "none")
    assert e.power == pytest.approx(1000.0 / 48.0)
    assert e.max_curvature == pytest.approx(1.0 / 50.0)
    assert e.is_symmetric_singlet
    flat = cat.LensElement("B", "acme", "PCX", 12.5, 48.0, (24.9, 0.0), (3.0,), (g,), 10.0, "none")
    assert flat.max_curvature == pytest.approx(1.0 / 24.9)
    assert not flat.is_symmetric_singlet
