"""Off-the-shelf lens element catalog: loading, validation, indexing, queries,
glass dispersion, and a deterministic synthetic catalog generator.

Units: mm for geometry, nm for wavelength, diopters (1/m) for power.
A radius of 0.0 encodes a flat surface internally; the CSV file format writes
flat radii as the literal string ``inf``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CatalogParseError, CatalogValidationError, WavelengthRangeError

# Fraunhofer reference lines (nm) anchoring the dispersion fit.
D_LINE = 587.56
F_LINE = 486.13
C_LINE = 656.27

KINDS = ("DCX", "DCV", "PCX", "PCV", "meniscus", "achromat_pos", "achromat_neg")
POSITIVE_KINDS = frozenset({"DCX", "PCX", "achromat_pos"})
NEGATIVE_KINDS = frozenset({"DCV", "PCV", "achromat_neg"})

CSV_COLUMNS = [
    "stock_id", "vendor", "kind", "diameter_mm", "focal_length_mm",
    "r1_mm", "r2_mm", "r3_mm", "t1_mm", "t2_mm",
    "glass1_nd", "glass1_vd", "glass2_nd", "glass2_vd", "cost", "coating",
]


@dataclass(frozen=True)
class GlassSpec:
    """Two-parameter glass model anchored at the d line.

    The Cauchy coefficients A, B (n = A + B/lambda_um^2) are solved from
    (n_d, v_d) so that n(d) = n_d and n(F) - n(C) = (n_d - 1)/v_d exactly.
    """

    name: str
    n_d: float
    v_d: float

    def __post_init__(self):
        if not 1.0 < self.n_d < 2.5:
            raise ValueError(f"glass {self.name}: n_d {self.n_d} outside (1.0, 2.5)")
        if not 15 < self.v_d < 100:
            raise ValueError(f"glass {self.name}: v_d {self.v_d} outside (15, 100)")

    @property
    def cauchy(self) -> tuple[float, float]:
        lf, lc, ld = F_LINE / 1e3, C_LINE / 1e3, D_LINE / 1e3
        b = ((self.n_d - 1.0) / self.v_d) / (1.0 / lf**2 - 1.0 / lc**2)
        a = self.n_d - b / ld**2
        return a, b

    def index(self, wavelength_nm: float) -> float:
        """n(lambda); valid for 380 <= lambda <= 1100 nm."""
        w = np.asarray(wavelength_nm, dtype=float)
        if np.any(w < 380.0) or np.any(w > 1100.0):
            raise WavelengthRangeError(f"wavelength {wavelength_nm} nm outside [380, 1100]")
        a, b = self.cauchy
        out = a + b / (w / 1e3) ** 2
        return float(out) if out.ndim == 0 else out


def refractive_index(glass: GlassSpec, wavelength_nm: float) -> float:
    return glass.index(wavelength_nm)


@dataclass(frozen=True)
class LensElement:
    """One catalog entry: a singlet or a cemented doublet.

    ``radii`` has one more entry than ``center_thicknesses``; ``glasses``
    matches thickness count. Radii are signed, 0.0 means flat.
    """

    stock_id: str
    vendor: str
    kind: str
    diameter: float
    focal_length: float
    radii: tuple[float, ...]
    center_thicknesses: tuple[float, ...]
    glasses: tuple[GlassSpec, ...]
    cost: float
    coating: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.stock_id}: unknown kind {self.kind!r}")
        if len(self.radii) != len(self.center_thicknesses) + 1:
            raise ValueError(f"{self.stock_id}: radii count must be thickness count + 1")
        if len(self.glasses) != len(self.center_thicknesses):
            raise ValueError(f"{self.stock_id}: glasses count must match thickness count")
        if self.diameter <= 0:
            raise ValueError(f"{self.stock_id}: diameter must be > 0")
        if any(t <= 0 for t in self.center_thicknesses):
            raise ValueError(f"{self.stock_id}: thicknesses must be > 0")
        if self.kind in POSITIVE_KINDS and self.focal_length <= 0:
            raise ValueError(f"{self.stock_id}: {self.kind} must have focal_length > 0")
        if self.kind in NEGATIVE_KINDS and self.focal_length >= 0:
            raise ValueError(f"{self.stock_id}: {self.kind} must have focal_length < 0")

    @property
    def power(self) -> float:
        """Refractive power in diopters (focal length in mm)."""
        return 1000.0 / self.focal_length

    @property
    def max_curvature(self) -> float:
        """Largest |1/R| over the element's surfaces (1/mm); flats contribute 0."""
        return max((abs(1.0 / r) for r in self.radii if r != 0.0), default=0.0)

    @property
    def is_symmetric_singlet(self) -> bool:
        return len(self.radii) == 2 and abs(self.radii[0] + self.radii[1]) < 1e-9

    def _geometry_key(self):
        return (
            self.kind,
            round(self.diameter, 6),
            tuple(round(r, 6) for r in self.radii),
            tuple(round(t, 6) for t in self.center_thicknesses),
            tuple((round(g.n_d, 6), round(g.v_d, 6)) for g in self.glasses),
        )


class Catalog:
    """Immutable, indexed collection of lens elements.

    Safe for concurrent reads. Construct via :func:`merge_coating_variants`,
    :func:`load_catalog`, or :func:`generate_synthetic_catalog`.
    """

    def __init__(self, elements: Sequence[LensElement]):
        self.elements: tuple[LensElement, ...] = tuple(
            sorted(elements, key=lambda e: e.stock_id)
        )
        self._by_id = {e.stock_id: e for e in self.elements}
        self._powers = np.array([abs(e.power) for e in self.elements])
        self._diams = np.array([e.diameter for e in self.elements])
        self._signs = np.array([1 if e.power > 0 else -1 for e in self.elements])
        # per-sign index sorted by |power| for windowed queries
        self._sign_order = {
            s: np.array(
                sorted(np.nonzero(self._signs == s)[0], key=lambda i: self._powers[i]),
                dtype=int,
            )
            for s in (+1, -1)
        }

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def get(self, stock_id: str) -> LensElement:
        return self._by_id[stock_id]

    def positive(self) -> list[LensElement]:
        return [e for e in self.elements if e.power > 0]

    def negative(self) -> list[LensElement]:
        return [e for e in self.elements if e.power < 0]

    def query(
        self,
        power_center: float,
        power_tol: float,
        diam_center: float,
        diam_tol: float,
        sign: int,
    ) -> list[LensElement]:
        """Elements of the given power sign with |power| within ``power_tol``
        (fractional) of |power_center| and diameter within ``diam_tol`` of
        ``diam_center``. Bounds are inclusive."""
        if not (0 < power_tol < 1 and 0 < diam_tol < 1):
            raise ValueError("tolerances must lie in (0, 1)")
        order = self._sign_order[+1 if sign >= 0 else -1]
        pc = abs(power_center)
        lo, hi = (1 - power_tol) * pc, (1 + power_tol) * pc
        sorted_pow = self._powers[order]
        i0 = int(np.searchsorted(sorted_pow, lo, side="left"))
        i1 = int(np.searchsorted(sorted_pow, hi, side="right"))
        picked = order[i0:i1]
        dlo, dhi = (1 - diam_tol) * diam_center, (1 + diam_tol) * diam_center
        picked = picked[(self._diams[picked] >= dlo) & (self._diams[picked] <= dhi)]
        return [self.elements[i] for i in sorted(picked)]


def merge_coating_variants(raw: Iterable[LensElement]) -> Catalog:
    """Collapse entries identical in everything but coating, keeping the
    cheapest variant of each geometry+glass group."""
    best: dict[tuple, LensElement] = {}
    for e in raw:
        key = e._geometry_key()
        kept = best.get(key)
        if kept is None or e.cost < kept.cost:
            best[key] = e
    return Catalog(list(best.values()))


# ---------------------------------------------------------------------------
# CSV file format


def _fmt_radius(r: float) -> str:
    return "inf" if r == 0.0 else f"{r:.9g}"


def _parse_radius(text: str) -> float:
    return 0.0 if text.strip() in ("inf", "-inf") else float(text)


def element_to_row(e: LensElement) -> list[str]:
    doublet = len(e.center_thicknesses) == 2
    return [
        e.stock_id,
        e.vendor,
        e.kind,
        f"{e.diameter:.9g}",
        f"{e.focal_length:.9g}",
        _fmt_radius(e.radii[0]),
        _fmt_radius(e.radii[1]),
        _fmt_radius(e.radii[2]) if doublet else "",
        f"{e.center_thicknesses[0]:.9g}",
        f"{e.center_thicknesses[1]:.9g}" if doublet else "",
        f"{e.glasses[0].n_d:.9g}",
        f"{e.glasses[0].v_d:.9g}",
        f"{e.glasses[1].n_d:.9g}" if doublet else "",
        f"{e.glasses[1].v_d:.9g}" if doublet else "",
        f"{e.cost:.2f}",
        e.coating,
    ]


def _row_to_element(row: Mapping[str, str], rownum: int) -> LensElement:
    def need(col: str) -> str:
        v = row.get(col)
        if v is None or v.strip() == "":
            raise CatalogParseError(rownum, f"missing value for {col}")
        return v.strip()

    def opt(col: str) -> str:
        v = row.get(col)
        return "" if v is None else v.strip()

    try:
        kind = need("kind")
        doublet = opt("t2_mm") != ""
        radii = [_parse_radius(need("r1_mm")), _parse_radius(need("r2_mm"))]
        thick = [float(need("t1_mm"))]
        glasses = [GlassSpec("glass1", float(need("glass1_nd")), float(need("glass1_vd")))]
        if doublet:
            radii.append(_parse_radius(need("r3_mm")))
            thick.append(float(need("t2_mm")))
            glasses.append(GlassSpec("glass2", float(need("glass2_nd")), float(need("glass2_vd"))))
        elif opt("r3_mm") or opt("glass2_nd") or opt("glass2_vd"):
            raise CatalogParseError(rownum, "singlet row carries doublet-only columns")
        return LensElement(
            stock_id=need("stock_id"),
            vendor=need("vendor"),
            kind=kind,
            diameter=float(need("diameter_mm")),
            focal_length=float(need("focal_length_mm")),
            radii=tuple(radii),
            center_thicknesses=tuple(thick),
            glasses=tuple(glasses),
            cost=float(need("cost")),
            coating=opt("coating"),
        )
    except CatalogParseError:
        raise
    except ValueError as exc:
        raise CatalogValidationError(rownum, str(exc)) from exc


def load_catalog(path) -> Catalog:
    """Load and validate a catalog CSV; coating variants are merged.

    Raises :class:`CatalogParseError` / :class:`CatalogValidationError`
    naming the offending row (1-based, excluding the header).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _load_csv(fh)


def loads_catalog(text: str) -> Catalog:
    return _load_csv(io.StringIO(text))


def _load_csv(fh) -> Catalog:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise CatalogParseError(0, "empty file")
    missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise CatalogParseError(0, f"header missing columns: {', '.join(missing)}")
    elements = []
    for rownum, row in enumerate(reader, start=1):
        elements.append(_row_to_element(row, rownum))
    return merge_coating_variants(elements)


def save_catalog(catalog_or_elements, path) -> None:
    elements = list(catalog_or_elements)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for e in elements:
            writer.writerow(element_to_row(e))


def bundled_catalog() -> Catalog:
    """The catalog CSV shipped with the package (885 synthetic elements)."""
    text = resources.files("stocklens").joinpath("data/catalog885.csv").read_text("utf-8")
    return loads_catalog(text)


# ---------------------------------------------------------------------------
# Synthetic catalog generation

# Plausible optical glass palette spanning the crown-to-flint line.
SYNTHETIC_GLASSES = [
    GlassSpec("SYN-K9", 1.5168, 64.2),
    GlassSpec("SYN-K5", 1.5224, 59.5),
    GlassSpec("SYN-BAK1", 1.5725, 57.5),
    GlassSpec("SYN-SK11", 1.5638, 60.8),
    GlassSpec("SYN-SK16", 1.6204, 60.3),
    GlassSpec("SYN-LAK22", 1.6516, 55.9),
    GlassSpec("SYN-BALF4", 1.5796, 53.9),
    GlassSpec("SYN-LLF1", 1.5481, 45.8),
    GlassSpec("SYN-F2", 1.6200, 36.4),
    GlassSpec("SYN-F5", 1.6034, 38.0),
    GlassSpec("SYN-SF2", 1.6477, 33.8),
    GlassSpec("SYN-SF5", 1.6727, 32.2),
    GlassSpec("SYN-SF11", 1.7847, 25.7),
    GlassSpec("SYN-LASF9", 1.8503, 32.2),
]
_CROWNS = [g for g in SYNTHETIC_GLASSES if g.v_d > 50]
_FLINTS = [g for g in SYNTHETIC_GLASSES if g.v_d < 42]

# Diameter ladder with weights strongly peaked below 30 mm; negative lenses
# skew smaller and shorter, as beam-expansion parts do.
_DIAMETERS = np.array([6.0, 9.0, 12.5, 12.7, 15.0, 18.0, 20.0, 22.4, 25.0, 25.4, 30.0, 35.0, 40.0, 50.0])
_DIAM_WEIGHTS = np.array([10, 14, 12, 12, 10, 8, 7, 5, 6, 6, 4, 2, 2, 1], dtype=float)
_NEG_DIAM_WEIGHTS = np.array([18, 20, 14, 14, 9, 5, 4, 2, 2, 2, 1, 1, 1, 1], dtype=float)

BUNDLE_COUNTS = {
    "DCX": 320, "PCX": 260, "achromat_pos": 140, "meniscus": 50,
    "DCV": 55, "PCV": 40, "achromat_neg": 20,
}  # meniscus generated with positive power; proportion is our pick, see README

_COATINGS = ["MgF2", "BBAR-VIS", "none"]
_VENDORS = ["amber-optics", "borealis", "cardinal-photonics", "dioptra"]

_MIN_EDGE = 0.8  # mm, thinnest allowed edge/center for generated parts


def _sag(radius: float, h: float) -> float:
    """Signed surface sag at semi-aperture h (positive bulges toward -z)."""
    if radius == 0.0:
        return 0.0
    s = radius * radius - h * h
    if s <= 0:
        return math.inf
    return h * h / (radius + math.copysign(math.sqrt(s), radius))


def _element_efl(radii: Sequence[float], thicknesses: Sequence[float], indices: Sequence[float]) -> float:
    """Paraxial EFL of an isolated element (y-u trace at the d line)."""
    ns = [1.0] + list(indices) + [1.0]
    y, u = 1.0, 0.0
    for i, r in enumerate(radii):
        if i > 0:
            y = y + thicknesses[i - 1] * u
        c = 0.0 if r == 0.0 else 1.0 / r
        u = (ns[i] * u - y * c * (ns[i + 1] - ns[i])) / ns[i + 1]
    if u == 0.0:
        return math.inf
    return -1.0 / u


def _solve_equiconvex(f: float, n: float, t: float) -> float:
    """Front radius of a symmetric thick lens (R2 = -R1) hitting EFL f."""
    a = (n - 1.0) ** 2 * t / n
    b = -2.0 * (n - 1.0)
    c = 1.0 / f
    disc = b * b - 4 * a * c
    if disc <= 0:
        return math.nan
    x = (-b - math.sqrt(disc)) / (2 * a)  # root continuous with the thin-lens limit
    return 1.0 / x


def _edge_thickness(radii, thicknesses, h) -> float:
    sag_front = _sag(radii[0], h)
    sag_back = _sag(radii[-1], h)
    if math.isinf(sag_front) or math.isinf(sag_back):
        return -math.inf
    return sum(thicknesses) + sag_back - sag_front


def _make_singlet(rng, kind: str) -> LensElement | None:
    negative = kind in ("DCV", "PCV")
    weights = _NEG_DIAM_WEIGHTS if negative else _DIAM_WEIGHTS
    d = float(rng.choice(_DIAMETERS, p=weights / weights.sum()))
    glass = SYNTHETIC_GLASSES[int(rng.integers(len(SYNTHETIC_GLASSES)))]
    n = glass.n_d
    h = d / 2.0
    sign = -1 if negative else 1
    if negative:
        # concave surfaces carry no center-thickness penalty, so short focal
        # lengths stay manufacturable down to |R| ~ semi-diameter
        f_lo = max(4.0, 0.55 * d)
        f_hi = 400.0
    else:
        f_lo = max(6.0, 0.7 * d / (n - 1.0))
        f_hi = 1200.0
    f = float(np.exp(rng.uniform(np.log(f_lo), np.log(f_hi)))) * sign

    if kind == "PCX":
        r1 = (n - 1.0) * f
        if abs(r1) < 1.02 * h:
            return None
        t = _sag(r1, h) + max(1.5, 0.05 * d)
        radii = (r1, 0.0)
    elif kind == "PCV":
        r1 = (n - 1.0) * f  # f < 0 so r1 < 0
        if abs(r1) < 1.02 * h:
            return None
        t = max(1.2, 0.04 * d)
        radii = (r1, 0.0)
    elif kind in ("DCX", "DCV"):
        t = max(1.2, 0.04 * d) if kind == "DCV" else max(2.0, 0.1 * d)
        for _ in range(3):
            r1 = _solve_equiconvex(f, n, t)
            if math.isnan(r1) or abs(r1) < 1.02 * h:
                return None
            if kind == "DCV":
                break
            t_needed = 2 * _sag(r1, h) + max(1.0, 0.05 * d)
            if t_needed <= t:
                break
            t = t_needed
        radii = (r1, -r1)
    else:  # positive meniscus
        ratio = float(rng.uniform(1.6, 4.0))
        r1 = f * (n - 1.0) * (1.0 - 1.0 / ratio)
        r2 = r1 * ratio
        if abs(r1) < 1.05 * h:
            return None
        t = _sag(r1, h) - _sag(r2, h) + max(1.2, 0.05 * d)
        radii = (r1, r2)

    thicknesses = (t,)
    if t <= 0 or t > 0.55 * d + 4 or _edge_thickness(radii, thicknesses, h) < _MIN_EDGE:
        return None
    efl = _element_efl(radii, thicknesses, [n])
    if not math.isfinite(efl) or efl * sign <= 0:
        return None
    return _finish(rng, kind, d, efl, radii, thicknesses, (glass,))


def _make_achromat(rng, kind: str) -> LensElement | None:
    d = float(rng.choice(_DIAMETERS, p=_DIAM_WEIGHTS / _DIAM_WEIGHTS.sum()))
    crown = _CROWNS[int(rng.integers(len(_CROWNS)))]
    flint = _FLINTS[int(rng.integers(len(_FLINTS)))]
    h = d / 2.0
    sign = 1 if kind == "achromat_pos" else -1
    f_lo = max(12.0, 1.4 * d)
    f = float(np.exp(rng.uniform(np.log(f_lo), np.log(1500.0)))) * sign

    phi = 1.0 / f
    v1, v2 = crown.v_d, flint.v_d
    phi1 = phi * v1 / (v1 - v2)
    phi2 = -phi * v2 / (v1 - v2)
    r1 = 2.0 * (crown.n_d - 1.0) / phi1
    if abs(r1) < 1.05 * h:
        return None
    r2 = -r1
    inv_r3 = 1.0 / r2 - phi2 / (flint.n_d - 1.0)
    r3 = 0.0 if abs(inv_r3) < 1e-7 else 1.0 / inv_r3
    if r3 != 0.0 and abs(r3) < 1.05 * h:
        return None

    if kind == "achromat_pos":
        t1 = _sag(r1, h) - _sag(r2, h) + max(1.8, 0.08 * d)
    else:
        t1 = max(1.4, 0.05 * d)
    t2 = max(1.4, 0.05 * d)
    radii = (r1, r2, r3)
    thicknesses = (t1, t2)
    if t1 <= 0 or _edge_thickness((r1, r2), (t1,), h) < _MIN_EDGE:
        return None
    if _edge_thickness((r2, r3), (t2,), h) < _MIN_EDGE:
        return None
    efl = _element_efl(radii, thicknesses, [crown.n_d, flint.n_d])
    if not math.isfinite(efl) or efl * sign <= 0:
        return None
    return _finish(rng, kind, d, efl, radii, thicknesses, (crown, flint))


def _finish(rng, kind, d, efl, radii, thicknesses, glasses) -> LensElement:
    base_cost = {"DCX": 20, "PCX": 18, "PCV": 22, "DCV": 24, "meniscus": 38,
                 "achromat_pos": 45, "achromat_neg": 52}[kind]
    cost = base_cost * (d / 12.5) ** 1.15 * float(np.exp(rng.normal(0.0, 0.18)))
    coating = _COATINGS[int(rng.choice(3, p=[0.6, 0.3, 0.1]))]
    vendor = _VENDORS[int(rng.integers(len(_VENDORS)))]
    return LensElement(
        stock_id="",  # assigned after generation, in deterministic order
        vendor=vendor,
        kind=kind,
        diameter=d,
        focal_length=round(efl, 6),
        radii=tuple(round(r, 6) for r in radii),
        center_thicknesses=tuple(round(t, 6) for t in thicknesses),
        glasses=glasses,
        cost=round(cost, 2),
        coating=coating,
    )


def generate_synthetic_catalog(seed: int, counts: Mapping[str, int] | None = None) -> Catalog:
    """Deterministically generate a catalog with the given per-kind counts.

    Defaults to :data:`BUNDLE_COUNTS` (770 positive + 115 negative elements).
    Every generated element satisfies the LensElement invariants and its
    stated focal length is the element's exact paraxial EFL.
    """
    counts = dict(BUNDLE_COUNTS if counts is None else counts)
    rng = np.random.default_rng(seed)
    made: list[LensElement] = []
    for kind in KINDS:  # fixed kind order for determinism
        want = int(counts.get(kind, 0))
        if want < 0:
            raise ValueError(f"count for {kind} must be >= 0")
        got = 0
        while got < want:
            maker = _make_achromat if kind.startswith("achromat") else _make_singlet
            e = maker(rng, kind)
            if e is None:
                continue
            made.append(e)
            got += 1
    out = [replace(e, stock_id=f"SYN-{i:05d}") for i, e in enumerate(made, start=1)]
    return merge_coating_variants(out)
