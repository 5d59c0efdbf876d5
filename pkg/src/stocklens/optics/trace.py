"""Exact sequential ray tracing.

Batched over rays: origins and directions are (N, 3) float arrays, with a
boolean alive mask. Ray death (surface miss, rim/stop clipping, total
internal reflection) is a normal outcome, not an error; dead rays keep the
state they had at death. Optical path length accumulates geometric length
times the local refractive index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .system import IDEAL, REFRACT, STOP, LensSystem, Surface

_EPS = 1e-9


@dataclass
class Ray:
    origin: np.ndarray        # mm, 3-vector
    direction: np.ndarray     # unit 3-vector
    wavelength: float         # nm
    accumulated_path: float = 0.0
    alive: bool = True

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        self.direction = d / np.linalg.norm(d)


@dataclass
class TraceResult:
    """Bundle state after tracing; positions sit on the last plane reached."""

    points: np.ndarray        # (N, 3)
    directions: np.ndarray    # (N, 3)
    opl: np.ndarray           # (N,)
    alive: np.ndarray         # (N,) bool
    sensor_xy: Optional[np.ndarray] = None   # (N, 2) in-sensor-plane coords
    surface_points: Optional[list] = None    # per-surface (N, 3) when recorded
    surface_alive: Optional[list] = None     # per-surface (N,) bool when recorded
    surface_opl: Optional[list] = None       # per-surface (N,) when recorded

    @property
    def n_alive(self) -> int:
        return int(np.count_nonzero(self.alive))


def _index(glass, wavelength: float) -> float:
    return 1.0 if glass is None else glass.index(wavelength)


def _refract(d: np.ndarray, nrm: np.ndarray, n1: float, n2: float, alive: np.ndarray):
    """Vector Snell. Returns new directions and updated alive mask (TIR kills)."""
    # orient normals against the incoming direction
    flip = np.sum(d * nrm, axis=1) > 0
    nrm = np.where(flip[:, None], -nrm, nrm)
    cosi = -np.sum(d * nrm, axis=1)
    mu = n1 / n2
    k = 1.0 - mu * mu * (1.0 - cosi * cosi)
    ok = alive & (k >= 0.0)
    ksafe = np.where(k > 0.0, k, 0.0)
    out = mu * d + (mu * cosi - np.sqrt(ksafe))[:, None] * nrm
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    out = np.where(ok[:, None], out / np.where(norm == 0, 1.0, norm), d)
    return out, ok


def _intersect_sphere(o, d, alive, zv: float, curv: float,
                      x0: float = 0.0, y0: float = 0.0):
    """Nearest forward hit on the vertex-side cap of a spherical surface."""
    R = 1.0 / curv
    zc = zv + R
    oc = o - np.array([x0, y0, zc])
    b = np.sum(d * oc, axis=1)
    c = np.sum(oc * oc, axis=1) - R * R
    disc = b * b - c
    ok = alive & (disc >= 0.0)
    sq = np.sqrt(np.where(disc >= 0, disc, 0.0))
    best = np.full(o.shape[0], np.inf)
    for t in (-b - sq, -b + sq):
        zhit = o[:, 2] + t * d[:, 2]
        cap = (zc - zhit) * R > 0.0
        cand = ok & (t > _EPS) & cap & (t < best)
        best = np.where(cand, t, best)
    ok = ok & np.isfinite(best)
    t = np.where(ok, best, 0.0)
    return t, ok


def _intersect_plane(o, d, alive, p0: np.ndarray, nrm: np.ndarray, min_t=_EPS):
    denom = d @ nrm
    ok = alive & (np.abs(denom) > 1e-15)
    t = np.where(ok, ((p0 - o) @ nrm) / np.where(denom == 0, 1.0, denom), 0.0)
    ok = ok & (t > min_t)
    return np.where(ok, t, 0.0), ok


def _trace_over_surfaces(surfaces, o, d, wavelength, opl, alive, record=False):
    o, d = o.copy(), d.copy()
    opl, alive = opl.copy(), alive.copy()
    snapshots = [] if record else None
    alive_hist = [] if record else None
    opl_hist = [] if record else None
    for s in surfaces:
        n1 = _index(s.glass_before, wavelength)
        if s.kind == REFRACT and s.curvature != 0.0:
            t, ok = _intersect_sphere(o, d, alive, s.z, s.curvature,
                                      s.x0, s.y0)
        else:
            # components in contact (gap 0) put consecutive planes at equal z,
            # so zero-length propagation must survive
            t, ok = _intersect_plane(
                o, d, alive, np.array([0.0, 0.0, s.z]), np.array([0.0, 0.0, 1.0]),
                min_t=-1e-9)
        hit = o + t[:, None] * d
        # aperture radius is measured from the (possibly decentered) vertex
        r2 = (hit[:, 0] - s.x0) ** 2 + (hit[:, 1] - s.y0) ** 2
        # rays that intersect the surface advance to it even if the aperture
        # then clips them, so a dead ray rests at its clip point
        o = np.where(ok[:, None], hit, o)
        opl = np.where(ok, opl + n1 * t, opl)
        ok = ok & (r2 <= s.semi_diameter ** 2)

        if s.kind == REFRACT:
            n2 = _index(s.glass_after, wavelength)
            if s.curvature != 0.0:
                R = 1.0 / s.curvature
                nrm = (hit - np.array([s.x0, s.y0, s.z + R])) / R
            else:
                nrm = np.broadcast_to(np.array([0.0, 0.0, -1.0]), d.shape)
            newd, ok = _refract(d, nrm, n1, n2, ok)
            d = np.where(ok[:, None], newd, d)
        elif s.kind == IDEAL:
            f = s.focal_length
            dz = d[:, 2]
            live = ok & (np.abs(dz) > 1e-15)
            sx = d[:, 0] / np.where(dz == 0, 1.0, dz) - (hit[:, 0] - s.x0) / f
            sy = d[:, 1] / np.where(dz == 0, 1.0, dz) - (hit[:, 1] - s.y0) / f
            norm = np.sqrt(1.0 + sx * sx + sy * sy)
            newd = np.stack([sx / norm, sy / norm, np.ones_like(sx) / norm], axis=1)
            newd *= np.sign(dz)[:, None]
            d = np.where(live[:, None], newd, d)
            # phase term making a collimated bundle exactly stigmatic at f
            rho2 = r2
            dphi = np.sign(f) * (abs(f) - np.sqrt(f * f + rho2))
            opl = np.where(live, opl + dphi, opl)
            ok = live
        # STOP: clipping already applied, no direction change

        alive = ok  # ok was derived from alive at every step above
        if record:
            snapshots.append(o.copy())
            alive_hist.append(alive.copy())
            opl_hist.append(opl.copy())
    return o, d, opl, alive, snapshots, alive_hist, opl_hist

def sensor_frame(system: LensSystem, sensor_gap: Optional[float] = None):
    """(origin, normal, ex, ey) of the sensor plane, optionally at another gap."""
    if sensor_gap is not None:
        system = system.with_gaps(sensor_gap=sensor_gap)
    p0, nrm = system.sensor_plane()
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.cross(nrm, ex)
    ey /= np.linalg.norm(ey)
    return p0, nrm, ex, ey


_sensor_frame = sensor_frame


def trace_bundle(
    system: LensSystem,
    origins: np.ndarray,
    directions: np.ndarray,
    wavelength: float,
    start_opl: Optional[np.ndarray] = None,
    to_sensor: bool = True,
    sensor_gap: Optional[float] = None,
    record: bool = False,
) -> TraceResult:
    """Trace a bundle through every surface and (optionally) onto the sensor.

    sensor_gap overrides the system's own value without rebuilding it, which
    is what the focus inner loop needs.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    n = o.shape[0]
    opl = np.zeros(n) if start_opl is None else np.asarray(start_opl, dtype=float).copy()
    alive = np.ones(n, dtype=bool)

    o, d, opl, alive, snaps, ahist, ohist = _trace_over_surfaces(
        system.surfaces(), o, d, wavelength, opl, alive, record=record)

    res = TraceResult(o, d, opl, alive, surface_points=snaps, surface_alive=ahist,
                      surface_opl=ohist)
    if to_sensor:
        res = continue_to_sensor(system, res, sensor_gap=sensor_gap)
    return res


def continue_to_sensor(system: LensSystem, state: TraceResult,
                       sensor_gap: Optional[float] = None) -> TraceResult:
    """Propagate exit-space rays (in air) onto the sensor plane.

    This is the cached-ray fast path: a state frozen at the last surface can
    be re-intersected with any sensor position without retracing the lens.
    """
    if sensor_gap is None:
        sys_eff = system
    else:
        sys_eff = system.with_gaps(sensor_gap=sensor_gap)
    p0, nrm, ex, ey = _sensor_frame(sys_eff)
    # allow t ~ 0 so a sensor in contact with the last vertex still resolves
    t, ok = _intersect_plane(state.points, state.directions, state.alive, p0, nrm,
                             min_t=-1e-9)
    hit = state.points + t[:, None] * state.directions
    pts = np.where(ok[:, None], hit, state.points)
    opl = np.where(ok, state.opl + t, state.opl)
    rel = pts - p0
    xy = np.stack([rel @ ex, rel @ ey], axis=1)
    return TraceResult(pts, state.directions.copy(), opl, ok, sensor_xy=xy,
                       surface_points=state.surface_points,
                       surface_alive=state.surface_alive,
                       surface_opl=state.surface_opl)


def trace_ray(system: LensSystem, ray: Ray) -> Ray:
    """Single-ray wrapper over trace_bundle."""
    res = trace_bundle(system, ray.origin[None, :], ray.direction[None, :],
                       ray.wavelength, start_opl=np.array([ray.accumulated_path]))
    return Ray(res.points[0], res.directions[0], ray.wavelength,
               float(res.opl[0]), bool(res.alive[0]))


def reversed_surfaces(system: LensSystem) -> list:
    """Surface list for tracing right-to-left: same geometry, swapped media."""
    out = []
    for s in reversed(system.surfaces()):
        out.append(Surface(s.kind, s.z, s.curvature, s.semi_diameter,
                           s.glass_after, s.glass_before, s.focal_length,
                           s.x0, s.y0))
    return out


def trace_backward(system: LensSystem, origins, directions, wavelength: float) -> TraceResult:
    """Trace rays travelling in -z back through the system (no sensor step)."""
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    opl = np.zeros(o.shape[0])
    alive = np.ones(o.shape[0], dtype=bool)
    o, d, opl, alive, _, _, _ = _trace_over_surfaces(
        reversed_surfaces(system), o, d, wavelength, opl, alive)
    return TraceResult(o, d, opl, alive)
