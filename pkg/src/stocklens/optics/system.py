"""Lens system model: ordered components with air gaps and a sensor.

Coordinate frame: optical axis is +z, first optical surface vertex at z = 0,
object space at z < 0. All lengths in mm, angles in degrees at the API
boundary (radians internally).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from ..catalog import Catalog, GlassSpec, LensElement
from ..jsonio import SCHEMA_VERSION


@dataclass(frozen=True)
class SensorFormat:
    width: float
    height: float
    name: str = "custom"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be > 0")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


SENSOR_FORMATS = {
    "micro_four_thirds": SensorFormat(17.3, 13.0, "micro_four_thirds"),
    "aps_c": SensorFormat(23.5, 15.6, "aps_c"),
    "full_frame": SensorFormat(36.0, 24.0, "full_frame"),
    "one_inch": SensorFormat(13.2, 8.8, "one_inch"),
}


@dataclass(frozen=True)
class TiltGeometry:
    """Tilted object plane (view-camera mode) and optimizable sensor tilt.

    Tilts are rotations about the x axis (a sensor-parallel axis); the object
    plane sits object_distance mm in front of the first surface on axis.
    """

    object_plane_tilt: float
    object_distance: float
    sensor_tilt: float = 0.0

    def __post_init__(self):
        if not (abs(self.object_plane_tilt) < 90 and abs(self.sensor_tilt) < 90):
            raise ValueError("|tilts| must be < 90 degrees")
        if self.object_distance <= 0:
            raise ValueError("object_distance must be > 0")


@dataclass(frozen=True)
class Stop:
    aperture_radius: float

    def __post_init__(self):
        if self.aperture_radius <= 0:
            raise ValueError("aperture_radius must be > 0")


@dataclass(frozen=True)
class IdealLens:
    """Phase-perfect thin lens (used as the eye model for virtual-image work)."""

    focal_length: float
    semi_diameter: float = 25.0

    def __post_init__(self):
        if self.focal_length == 0:
            raise ValueError("focal_length must be nonzero")
        if self.semi_diameter <= 0:
            raise ValueError("semi_diameter must be > 0")


@dataclass(frozen=True)
class ElementInstance:
    element: LensElement
    flipped: bool = False

    def __post_init__(self):
        # flipping a symmetric singlet is a no-op; normalize so instance
        # identity is canonical
        if self.flipped and self.element.is_symmetric_singlet:
            object.__setattr__(self, "flipped", False)

    @property
    def radii(self) -> tuple[float, ...]:
        r = self.element.radii
        return tuple(-x for x in reversed(r)) if self.flipped else r

    @property
    def center_thicknesses(self) -> tuple[float, ...]:
        t = self.element.center_thicknesses
        return tuple(reversed(t)) if self.flipped else t

    @property
    def glasses(self) -> tuple[GlassSpec, ...]:
        g = self.element.glasses
        return tuple(reversed(g)) if self.flipped else g

    @property
    def thickness(self) -> float:
        return sum(self.element.center_thicknesses)


Component = Union[ElementInstance, Stop, IdealLens]

REFRACT, STOP, IDEAL = "refract", "stop", "ideal"


@dataclass(frozen=True)
class Surface:
    """One trace step: a refracting cap, the stop plane, or an ideal lens.

    x0/y0 shift the vertex (and the aperture center) off the nominal axis;
    assembly tolerancing is their only producer."""

    kind: str
    z: float
    curvature: float
    semi_diameter: float
    glass_before: Optional[GlassSpec]
    glass_after: Optional[GlassSpec]
    focal_length: float = 0.0  # ideal lenses only
    x0: float = 0.0
    y0: float = 0.0


@dataclass(frozen=True)
class LensSystem:
    """Component sequence c with air gaps d and a sensor d_k behind the last
    surface. Exactly one Stop; gaps >= 0 (0 = parts in contact)."""

    components: tuple[Component, ...]
    air_gaps: tuple[float, ...]
    sensor_gap: float
    sensor: SensorFormat
    tilt: Optional[TiltGeometry] = None
    decenters: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "air_gaps", tuple(float(g) for g in self.air_gaps))
        if len(self.components) < 2:
            raise ValueError("need at least 2 components")
        if len(self.air_gaps) != len(self.components) - 1:
            raise ValueError("air_gaps must have len(components) - 1 entries")
        if sum(1 for c in self.components if isinstance(c, Stop)) != 1:
            raise ValueError("exactly one Stop required")
        if any(g < 0 for g in self.air_gaps):
            raise ValueError("air gaps must be >= 0")
        if self.decenters is not None:
            d = tuple((float(x), float(y)) for x, y in self.decenters)
            object.__setattr__(self, "decenters", d)
            if len(d) != len(self.components):
                raise ValueError("decenters must have one (dx, dy) per component")
            if not all(math.isfinite(x) and math.isfinite(y) for x, y in d):
                raise ValueError("decenters must be finite")

    @property
    def stop_index(self) -> int:
        return next(i for i, c in enumerate(self.components) if isinstance(c, Stop))

    @property
    def elements(self) -> list[ElementInstance]:
        return [c for c in self.components if isinstance(c, ElementInstance)]

    @property
    def cost(self) -> float:
        return sum(e.element.cost for e in self.elements)

    @property
    def element_count(self) -> int:
        return len(self.elements)

    def surfaces(self) -> list[Surface]:
        out: list[Surface] = []
        z = 0.0
        for i, comp in enumerate(self.components):
            dx, dy = (0.0, 0.0) if self.decenters is None else self.decenters[i]
            if isinstance(comp, ElementInstance):
                radii = comp.radii
                thicks = comp.center_thicknesses
                glasses = comp.glasses
                media: list[Optional[GlassSpec]] = [None, *glasses, None]
                semi = comp.element.diameter / 2.0
                for j, r in enumerate(radii):
                    out.append(Surface(REFRACT, z, 0.0 if r == 0.0 else 1.0 / r,
                                       semi, media[j], media[j + 1],
                                       x0=dx, y0=dy))
                    if j < len(thicks):
                        z += thicks[j]
            elif isinstance(comp, Stop):
                out.append(Surface(STOP, z, 0.0, comp.aperture_radius, None, None,
                                   x0=dx, y0=dy))
            else:
                out.append(Surface(IDEAL, z, 0.0, comp.semi_diameter, None, None,
                                   focal_length=comp.focal_length, x0=dx, y0=dy))
            if i < len(self.air_gaps):
                z += self.air_gaps[i]
        return out

    @property
    def last_surface_z(self) -> float:
        return self.surfaces()[-1].z

    @property
    def sensor_z(self) -> float:
        return self.last_surface_z + self.sensor_gap

    @property
    def total_length(self) -> float:
        """First vertex to sensor along the axis."""
        return self.sensor_z

    def sensor_plane(self) -> tuple:
        """(point, unit normal) of the sensor plane; tilted about x if set."""
        import numpy as np
        p = np.array([0.0, 0.0, self.sensor_z])
        if self.tilt is not None and self.tilt.sensor_tilt != 0.0:
            a = math.radians(self.tilt.sensor_tilt)
            n = np.array([0.0, -math.sin(a), math.cos(a)])
        else:
            n = np.array([0.0, 0.0, 1.0])
        return p, n

    def with_gaps(self, air_gaps: Sequence[float] | None = None,
                  sensor_gap: float | None = None) -> "LensSystem":
        return replace(
            self,
            air_gaps=tuple(air_gaps) if air_gaps is not None else self.air_gaps,
            sensor_gap=float(sensor_gap) if sensor_gap is not None else self.sensor_gap,
        )

    def with_stop_radius(self, radius: float) -> "LensSystem":
        comps = tuple(Stop(radius) if isinstance(c, Stop) else c for c in self.components)
        return replace(self, components=comps)

    def with_decenters(self, decenters) -> "LensSystem":
        d = tuple((float(x), float(y)) for x, y in decenters) \
            if decenters is not None else None
        return replace(self, decenters=d)


# ---------------------------------------------------------------------------
# JSON serialization (9-significant-digit round trip, see jsonio)


def system_to_json(system: LensSystem) -> dict:
    comps = []
    for c in system.components:
        if isinstance(c, ElementInstance):
            comps.append({"type": "element", "stock_id": c.element.stock_id,
                          "flipped": c.flipped})
        elif isinstance(c, Stop):
            comps.append({"type": "stop", "aperture_radius": c.aperture_radius})
        else:
            comps.append({"type": "ideal", "focal_length": c.focal_length,
                          "semi_diameter": c.semi_diameter})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "components": comps,
        "air_gaps": list(system.air_gaps),
        "sensor_gap": system.sensor_gap,
        "sensor": {"width": system.sensor.width, "height": system.sensor.height,
                   "name": system.sensor.name},
    }
    if system.tilt is not None:
        doc["tilt"] = {
            "object_plane_tilt_deg": system.tilt.object_plane_tilt,
            "object_distance_mm": system.tilt.object_distance,
            "sensor_tilt_deg": system.tilt.sensor_tilt,
        }
    if system.decenters is not None:
        doc["decenters"] = [list(d) for d in system.decenters]
    return doc


def system_from_json(doc: dict, catalog: Catalog) -> LensSystem:
    comps: list[Component] = []
    for c in doc["components"]:
        if c["type"] == "element":
            comps.append(ElementInstance(catalog.get(c["stock_id"]), bool(c.get("flipped", False))))
        elif c["type"] == "stop":
            comps.append(Stop(float(c["aperture_radius"])))
        elif c["type"] == "ideal":
            comps.append(IdealLens(float(c["focal_length"]), float(c["semi_diameter"])))
        else:
            raise ValueError(f"unknown component type {c['type']!r}")
    s = doc["sensor"]
    tilt = None
    if doc.get("tilt") is not None:
        t = doc["tilt"]
        tilt = TiltGeometry(float(t["object_plane_tilt_deg"]),
                            float(t["object_distance_mm"]),
                            float(t.get("sensor_tilt_deg", 0.0)))
    dec = None
    if doc.get("decenters") is not None:
        dec = tuple((float(d[0]), float(d[1])) for d in doc["decenters"])
    return LensSystem(
        components=tuple(comps),
        air_gaps=tuple(float(g) for g in doc["air_gaps"]),
        sensor_gap=float(doc["sensor_gap"]),
        sensor=SensorFormat(float(s["width"]), float(s["height"]), str(s.get("name", "custom"))),
        tilt=tilt,
        decenters=dec,
    )
