"""Field and pupil sampling: emitters, RGB wavelength channels, entrance-pupil
ray fans, chief-ray solving, and the chief-ray based field of view.

Pupil fans use equal-area rings (default 12 rings x 24 spokes = 288 rays)
plus the chief ray at index 0, deterministically ordered so merit values are
reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import AfocalSystemError
from .paraxial import FirstOrder, fov_paraxial, paraxial_trace
from .system import STOP, LensSystem
from .trace import trace_bundle

RINGS = 12
SPOKES = 24


@dataclass(frozen=True)
class Emitter:
    """Point light source: a field angle (infinite conjugate) or a 3-D point."""

    angle: Optional[tuple[float, float]] = None   # degrees (ax, ay)
    point: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        if (self.angle is None) == (self.point is None):
            raise ValueError("exactly one of angle or point")
        if self.point is not None and self.point[2] >= 0:
            raise ValueError("emitter point must lie in object space (z < 0)")

    @staticmethod
    def at_angle(ax_deg: float, ay_deg: float) -> "Emitter":
        return Emitter(angle=(float(ax_deg), float(ay_deg)))

    @staticmethod
    def at_point(x: float, y: float, z: float) -> "Emitter":
        return Emitter(point=(float(x), float(y), float(z)))

    @property
    def is_central(self) -> bool:
        if self.angle is not None:
            return self.angle == (0.0, 0.0)
        return self.point[0] == 0.0 and self.point[1] == 0.0

    def direction(self) -> np.ndarray:
        ax, ay = self.angle
        d = np.array([math.tan(math.radians(ax)), math.tan(math.radians(ay)), 1.0])
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class FieldSampling:
    emitters: tuple[Emitter, ...]

    def __post_init__(self):
        if len(self.emitters) < 1:
            raise ValueError("need at least one emitter")
        if not any(e.is_central for e in self.emitters):
            raise ValueError("field sampling must include the central point")

    @property
    def n(self) -> int:
        return len(self.emitters)

    @staticmethod
    def from_relative_fields(fractions: Sequence[float], max_angle_deg: float) -> "FieldSampling":
        ems = tuple(Emitter.at_angle(0.0, f * max_angle_deg) for f in fractions)
        return FieldSampling(ems)


@dataclass(frozen=True)
class ChannelWavelengths:
    channels: tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]
    names: tuple[str, str, str] = ("R", "G", "B")

    def __post_init__(self):
        for ch in self.channels:
            if len(ch) == 0:
                raise ValueError("every channel needs at least one wavelength")
            for w in ch:
                if not 380.0 <= w <= 780.0:
                    raise ValueError(f"wavelength {w} nm outside visible range [380, 780]")


def default_channels() -> ChannelWavelengths:
    return ChannelWavelengths((
        (620.0, 656.3, 680.0),
        (510.0, 546.1, 587.6),
        (450.0, 486.1, 495.0),
    ))


def pupil_grid(rings: int = RINGS, spokes: int = SPOKES) -> np.ndarray:
    """Equal-area unit-disk samples, (rings*spokes, 2), fixed ordering."""
    rr = np.sqrt((np.arange(1, rings + 1) - 0.5) / rings)
    th = np.arange(spokes) * (2.0 * math.pi / spokes)
    r, t = np.meshgrid(rr, th, indexing="ij")
    return np.stack([(r * np.cos(t)).ravel(), (r * np.sin(t)).ravel()], axis=1)


@dataclass
class Bundle:
    origins: np.ndarray
    directions: np.ndarray
    opl0: np.ndarray
    wavelength: float
    chief_ok: bool
    chief_index: int = 0


def _stop_surface_index(system: LensSystem) -> int:
    return next(i for i, s in enumerate(system.surfaces()) if s.kind == STOP)


def _stop_hit(system: LensSystem, origin: np.ndarray, direction: np.ndarray,
              wavelength: float, stop_idx: int):
    res = trace_bundle(system, origin[None, :], direction[None, :], wavelength,
                       to_sensor=False, record=True)
    pt = res.surface_points[stop_idx][0]
    # alive at the surface before the stop means the stop-plane hit is real
    # (the stop's own clipping may kill it there without invalidating the hit)
    before_ok = stop_idx == 0 or bool(res.surface_alive[stop_idx - 1][0])
    return pt[:2], before_ok


def solve_chief(system: LensSystem, emitter: Emitter, wavelength: float,
                fo: Optional[FirstOrder] = None, tol: float = 1e-9,
                max_iter: int = 10):
    """Launch state whose real ray crosses the stop surface on axis.

    Returns (origin, direction, ok). Newton iteration with a finite-difference
    2x2 Jacobian; the paraxial entrance pupil provides the starting aim.
    """
    fo = fo or paraxial_trace(system)
    ep = fo.entrance_pupil
    ep_z = ep.z if math.isfinite(ep.z) else fo.stop_z
    stop_idx = _stop_surface_index(system)
    z0 = min(0.0, ep_z) - 10.0

    if emitter.angle is not None:
        d = emitter.direction()

        def launch(b):
            L = (ep_z - z0) / d[2]
            anchor = np.array([b[0], b[1], ep_z]) - L * d
            return anchor, d
    else:
        p = np.array(emitter.point)

        def launch(b):
            aim = np.array([b[0], b[1], ep_z])
            dd = aim - p
            return p, dd / np.linalg.norm(dd)

    b = np.zeros(2)
    delta = max(1e-4, 1e-6 * abs(ep_z - z0))
    ok = False
    for _ in range(max_iter):
        o, d_ = launch(b)
        h0, reached = _stop_hit(system, o, d_, wavelength, stop_idx)
        if not reached:
            break
        if np.hypot(*h0) < tol:
            ok = True
            break
        J = np.empty((2, 2))
        bad = False
        for j in range(2):
            bp = b.copy()
            bp[j] += delta
            oo, dd = launch(bp)
            hj, r2 = _stop_hit(system, oo, dd, wavelength, stop_idx)
            if not r2:
                bad = True
                break
            J[:, j] = (hj - h0) / delta
        if bad:
            break
        try:
            b = b - np.linalg.solve(J, h0)
        except np.linalg.LinAlgError:
            break
    o, d_ = launch(b)
    return o, d_, ok


def emitter_bundle(system: LensSystem, emitter: Emitter, wavelength: float,
                   rings: int = RINGS, spokes: int = SPOKES,
                   fo: Optional[FirstOrder] = None) -> Bundle:
    """Chief ray plus an equal-area fan filling the entrance pupil.

    All rays share a common input wavefront so accumulated path differences
    are physical: plane waves for angle emitters, the source point itself for
    finite emitters.
    """
    fo = fo or paraxial_trace(system)
    ep = fo.entrance_pupil
    ep_z = ep.z if math.isfinite(ep.z) else fo.stop_z
    ep_r = ep.diameter / 2.0
    if not math.isfinite(ep_r) or ep_r <= 0:
        ep_r = fo.stop_radius
    z0 = min(0.0, ep_z) - 10.0

    chief_o, chief_d, chief_ok = solve_chief(system, emitter, wavelength, fo)
    pts = pupil_grid(rings, spokes) * ep_r
    ep_pts = np.column_stack([pts, np.full(len(pts), ep_z)])

    if emitter.angle is not None:
        d = emitter.direction()
        L = (ep_z - z0) / d[2]
        origins = ep_pts - L * d
        dirs = np.broadcast_to(d, origins.shape).copy()
        origins = np.vstack([chief_o, origins])
        dirs = np.vstack([chief_d, dirs])
        # common plane wavefront through the chief launch point
        opl0 = (origins - chief_o) @ d
        opl0 = opl0 - opl0.min()
    else:
        p = np.array(emitter.point)
        dirs = ep_pts - p
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(p, dirs.shape).copy()
        origins = np.vstack([chief_o, origins])
        dirs = np.vstack([chief_d, dirs])
        opl0 = np.zeros(len(dirs))

    return Bundle(origins, dirs, opl0, wavelength, chief_ok)


def system_fov(system: LensSystem) -> float:
    """Full diagonal field of view, degrees, from real chief-ray tracing;
    falls back to the paraxial formula when the chief ray dies."""
    fo = paraxial_trace(system)
    if fo.afocal:
        raise AfocalSystemError("FOV undefined for afocal system")
    target = system.sensor.diagonal / 2.0

    def hit_radius(theta_deg: float):
        em = Emitter.at_angle(0.0, theta_deg)
        o, d, ok = solve_chief(system, em, 587.56, fo)
        if not ok:
            return None
        res = trace_bundle(system, o[None, :], d[None, :], 587.56)
        if not res.alive[0]:
            return None
        return float(np.hypot(*res.sensor_xy[0]))

    th = math.degrees(math.atan(target / abs(fo.efl)))
    t1, t2 = 0.85 * th, th
    r1, r2 = hit_radius(t1), hit_radius(t2)
    if r1 is None or r2 is None:
        return fov_paraxial(system)
    for _ in range(20):
        if abs(r2 - r1) < 1e-12:
            break
        t3 = t2 + (target - r2) * (t2 - t1) / (r2 - r1)
        t3 = max(0.0, min(t3, 89.0))
        r3 = hit_radius(t3)
        if r3 is None:
            return fov_paraxial(system)
        t1, r1, t2, r2 = t2, r2, t3, r3
        if abs(r2 - target) < 1e-9:
            break
    return 2.0 * t2
