"""User-facing design specification and the first-order sanity sketch.

A DesignSpec captures what the photographer asks for (field of view,
f-number, sensor, mechanical envelope, budget); everything downstream
(seed enumeration, pruning, optimization) reads its targets from here.
validate_and_sketch turns a raw, possibly broken spec document into
per-field diagnostics plus a thin-lens layout drawing for the UI, without
tracing a single real ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

from .jsonio import SCHEMA_VERSION, parse_float
from .merit.config import MODES
from .optics.system import SENSOR_FORMATS, SensorFormat


@dataclass(frozen=True)
class VirtualImageSpec:
    """Head-mounted / loupe mode: the lens feeds an eye instead of a sensor."""

    eye_focal: float      # mm
    eye_relief: float     # mm
    target_fov: float     # degrees, apparent

    def __post_init__(self):
        if self.eye_focal <= 0 or self.eye_relief < 0:
            raise ValueError("eye focal length must be > 0, relief >= 0")
        if not 0 < self.target_fov < 180:
            raise ValueError("target_fov must lie in (0, 180)")


@dataclass(frozen=True)
class DesignSpec:
    fov: float                                   # full diagonal FOV, degrees
    f_number: float
    sensor: SensorFormat
    object_distance: float = math.inf            # mm in front of the lens
    object_tilt: float = 0.0                     # degrees about x
    fov_tol: float = 0.05                        # fractional
    pixel_pitch_um: float = 4.3
    flange_range: tuple[float, float] = (2.0, 200.0)   # allowed BFL, mm
    max_elements: int = 6
    max_length: float = 150.0                    # first to last vertex, mm
    max_cost: float = 1000.0
    virtual_image: Optional[VirtualImageSpec] = None
    merit_mode: str = "spot"

    def __post_init__(self):
        if not 0 < self.fov < 180:
            raise ValueError("fov must lie in (0, 180) degrees")
        if self.f_number <= 0:
            raise ValueError("f_number must be > 0")
        if self.max_elements < 1:
            raise ValueError("max_elements must be >= 1")
        lo, hi = self.flange_range
        if not (0 <= lo <= hi):
            raise ValueError("flange_range must satisfy 0 <= min <= max")
        object.__setattr__(self, "flange_range", (float(lo), float(hi)))
        if not 0 < self.fov_tol < 1:
            raise ValueError("fov_tol must be a fraction in (0, 1)")
        if self.object_distance <= 0:
            raise ValueError("object_distance must be > 0 (mm) or infinity")
        if not -90 < self.object_tilt < 90:
            raise ValueError("object_tilt must lie in (-90, 90) degrees")
        if self.pixel_pitch_um <= 0:
            raise ValueError("pixel_pitch_um must be > 0")
        if self.max_length <= 0 or self.max_cost <= 0:
            raise ValueError("max_length and max_cost must be > 0")
        if self.merit_mode not in MODES:
            raise ValueError(f"merit_mode must be one of {MODES}")

    @property
    def target_efl(self) -> float:
        """Focal length that covers the sensor diagonal at the asked FOV."""
        half = math.radians(self.fov / 2.0)
        return self.sensor.diagonal / 2.0 / math.tan(half)

    @property
    def target_power(self) -> float:
        """Target system power in diopters."""
        return 1000.0 / self.target_efl


def spec_to_json(spec: DesignSpec) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "fov": spec.fov,
        "fov_tol": spec.fov_tol,
        "f_number": spec.f_number,
        "sensor": {"width": spec.sensor.width, "height": spec.sensor.height,
                   "name": spec.sensor.name},
        "object_distance": ("inf" if math.isinf(spec.object_distance)
                            else spec.object_distance),
        "object_tilt": spec.object_tilt,
        "pixel_pitch_um": spec.pixel_pitch_um,
        "flange_range": list(spec.flange_range),
        "max_elements": spec.max_elements,
        "max_length": spec.max_length,
        "max_cost": spec.max_cost,
        "merit_mode": spec.merit_mode,
    }
    if spec.virtual_image is not None:
        vi = spec.virtual_image
        doc["virtual_image"] = {"eye_focal": vi.eye_focal,
                                "eye_relief": vi.eye_relief,
                                "target_fov": vi.target_fov}
    return doc


def _sensor_from_doc(raw: Union[str, dict]) -> SensorFormat:
    if isinstance(raw, str):
        if raw not in SENSOR_FORMATS:
            raise ValueError(f"unknown sensor format {raw!r}; "
                             f"known: {sorted(SENSOR_FORMATS)}")
        return SENSOR_FORMATS[raw]
    return SensorFormat(float(raw["width"]), float(raw["height"]),
                        str(raw.get("name", "custom")))


def spec_from_json(doc: dict) -> DesignSpec:
    """Strict parse; raises ValueError/KeyError on a bad document."""
    vi = None
    if doc.get("virtual_image") is not None:
        v = doc["virtual_image"]
        vi = VirtualImageSpec(float(v["eye_focal"]), float(v["eye_relief"]),
                              float(v["target_fov"]))
    flange = doc.get("flange_range", (2.0, 200.0))
    return DesignSpec(
        fov=float(doc["fov"]),
        f_number=float(doc["f_number"]),
        sensor=_sensor_from_doc(doc["sensor"]),
        object_distance=parse_float(doc.get("object_distance", "inf")),
        object_tilt=float(doc.get("object_tilt", 0.0)),
        fov_tol=float(doc.get("fov_tol", 0.05)),
        pixel_pitch_um=float(doc.get("pixel_pitch_um", 4.3)),
        flange_range=(float(flange[0]), float(flange[1])),
        max_elements=int(doc.get("max_elements", 6)),
        max_length=float(doc.get("max_length", 150.0)),
        max_cost=float(doc.get("max_cost", 1000.0)),
        virtual_image=vi,
        merit_mode=str(doc.get("merit_mode", "spot")),
    )


def _diag(field_name: str, severity: str, message: str) -> dict:
    return {"field": field_name, "severity": severity, "message": message}


def _rotated_segment(zc: float, half: float, tilt_deg: float) -> list:
    """Vertical segment of the given half-height at z=zc, rotated about its
    center by tilt_deg (rotation about the x axis drawn in the z-y plane)."""
    t = math.radians(tilt_deg)
    dz, dy = half * math.sin(t), half * math.cos(t)
    return [[zc - dz, -dy], [zc + dz, dy]]


def _sketch(spec: DesignSpec) -> dict:
    """Thin-lens layout: object plane, lens box, sensor plane, marginal and
    chief rays as [z, y] polylines. Pure arithmetic, so it is always fast."""
    efl = spec.target_efl
    semi_ap = efl / spec.f_number / 2.0
    half_field = math.radians(spec.fov / 2.0)
    semi_diag = spec.sensor.diagonal / 2.0

    at_infinity = math.isinf(spec.object_distance)
    if at_infinity:
        z_obj, z_img = -3.0 * efl, efl
        obj_half = 3.0 * efl * math.tan(half_field)
    else:
        u = spec.object_distance
        z_obj = -u
        # thin-lens conjugate; behind-focus objects have no real image
        z_img = math.inf if u <= efl else 1.0 / (1.0 / efl - 1.0 / u)
        obj_half = u * math.tan(half_field)

    planes = [
        {"name": "object", "at_infinity": at_infinity,
         "polyline": _rotated_segment(z_obj, obj_half, spec.object_tilt)},
        {"name": "lens", "polyline": [[0.0, -semi_ap * 1.15],
                                      [0.0, semi_ap * 1.15]]},
    ]
    rays = []
    if math.isfinite(z_img):
        planes.append({"name": "sensor",
                       "polyline": _rotated_segment(z_img, semi_diag, 0.0)})
        # marginal ray: axial point through the pupil edge to the axial image
        start_z = z_obj if not at_infinity else -2.0 * efl
        rays.append({"name": "marginal",
                     "polyline": [[start_z, 0.0 if not at_infinity else semi_ap],
                                  [0.0, semi_ap], [z_img, 0.0]]})
        # chief ray: full-field point through the lens center
        y_img = z_img * math.tan(half_field)
        rays.append({"name": "chief",
                     "polyline": [[start_z, -obj_half if not at_infinity
                                   else -2.0 * efl * math.tan(half_field)],
                                  [0.0, 0.0], [z_img, y_img]]})

    return {"efl_mm": efl, "f_number": spec.f_number,
            "semi_aperture_mm": semi_ap, "sensor_name": spec.sensor.name,
            "planes": planes, "rays": rays}


def validate_and_sketch(doc: Union[dict, DesignSpec]) -> dict:
    """Per-field diagnostics plus a first-order sketch.

    Accepts a raw JSON document (the UI posts unvalidated forms) or an
    already-built DesignSpec. Error-severity diagnostics suppress the
    sketch; warnings and infos do not."""
    diagnostics: list[dict] = []
    spec: Optional[DesignSpec] = None

    if isinstance(doc, DesignSpec):
        spec = doc
    else:
        try:
            spec = spec_from_json(doc)
        except KeyError as exc:
            diagnostics.append(_diag(str(exc.args[0]), "error",
                                     "required field is missing"))
        except (ValueError, TypeError) as exc:
            msg = str(exc)
            fld = next((f for f in ("fov_tol", "fov", "f_number", "sensor",
                                    "object_distance", "object_tilt",
                                    "flange_range", "max_elements",
                                    "max_length", "max_cost", "pixel_pitch_um",
                                    "merit_mode", "virtual_image", "eye_focal",
                                    "target_fov") if f in msg), "spec")
            diagnostics.append(_diag(fld, "error", msg))

    if spec is not None:
        if spec.f_number < 0.95:
            diagnostics.append(_diag("f_number", "warning",
                                     "very fast target; stock-lens search "
                                     "is unlikely to reach it"))
        if spec.fov > 100.0:
            diagnostics.append(_diag("fov", "warning",
                                     "ultra-wide field; expect strong "
                                     "vignetting pruning"))
        if (math.isfinite(spec.object_distance)
                and spec.object_distance <= spec.target_efl):
            diagnostics.append(_diag("object_distance", "error",
                                     "object sits inside the front focal "
                                     "distance; no real image forms"))
        if (math.isfinite(spec.object_distance)
                and spec.object_distance < 10.0 * spec.target_efl
                and spec.object_distance > spec.target_efl):
            diagnostics.append(_diag("object_distance", "info",
                                     "close-focus conjugate; image distance "
                                     "exceeds the focal length noticeably"))
        if spec.target_efl > spec.max_length:
            diagnostics.append(_diag("max_length", "warning",
                                     "target focal length exceeds the length "
                                     "budget; only telephoto forms can fit"))

    has_error = any(d["severity"] == "error" for d in diagnostics)
    sketch = _sketch(spec) if spec is not None and not has_error else None
    return {"schema_version": SCHEMA_VERSION,
            "valid": spec is not None and not has_error,
            "diagnostics": diagnostics, "sketch": sketch}
