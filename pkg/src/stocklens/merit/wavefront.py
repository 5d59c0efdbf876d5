"""Exit-pupil wavefront construction shared by the OPD statistic and the
diffraction PSF: trace an emitter's pupil fan, freeze it at the last optical
surface, and express each ray's optical path on the image-space reference
sphere (centered on the chief-ray sensor hit, through the exit-pupil center).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import TooFewRaysError
from ..optics import (
    Emitter,
    FirstOrder,
    LensSystem,
    continue_to_sensor,
    emitter_bundle,
    paraxial_trace,
    sensor_frame,
    trace_bundle,
)
from ..optics.sampling import RINGS, SPOKES

_MIN_RAYS = 3
# reference-sphere radius used when the exit pupil sits at infinity
# (image-space telecentric); large enough to act as a plane
_FAR_RADIUS = 1e7


@dataclass(frozen=True)
class ExitBundle:
    """A pupil fan frozen at the last optical surface plus its sensor hits.
    Ray 0 is the chief; rays 1.. follow the rings x spokes pupil grid order."""

    exit_points: np.ndarray       # (N, 3) on the last surface
    exit_directions: np.ndarray   # (N, 3)
    exit_opl: np.ndarray          # (N,) mm, from the common input wavefront
    exit_alive: np.ndarray        # (N,) bool at the last surface
    sensor_xy: np.ndarray         # (N, 2) in-plane sensor coords, mm
    sensor_points: np.ndarray     # (N, 3)
    sensor_alive: np.ndarray      # (N,) bool
    wavelength: float             # nm
    rings: int
    spokes: int
    chief_ok: bool


@dataclass(frozen=True)
class ExitWavefront:
    """Per-ray optical path deviation on the reference sphere, plus the
    geometry needed to diffract it onto the sensor."""

    w_mm: np.ndarray              # OPL minus the chief's, on the sphere
    alive: np.ndarray             # rays with a valid sphere crossing
    rings: int
    spokes: int
    chief_xy: np.ndarray          # sensor-plane coords of the patch center, mm
    center: np.ndarray            # sphere center (3,) = image point, mm
    radius: float                 # sphere radius, mm
    pupil_z: float                # exit-pupil plane position, mm
    pupil_radius: float           # exit-pupil semi-diameter, mm
    sensor_ex: np.ndarray         # sensor in-plane basis
    sensor_ey: np.ndarray
    wavelength: float             # nm

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())


def trace_emitter(system: LensSystem, emitter: Emitter, wavelength: float,
                  sensor_gap: Optional[float] = None,
                  rings: int = RINGS, spokes: int = SPOKES,
                  fo: Optional[FirstOrder] = None) -> ExitBundle:
    """One trace serving spot, OPD, illumination, and PSF needs."""
    b = emitter_bundle(system, emitter, wavelength, rings, spokes, fo=fo)
    state = trace_bundle(system, b.origins, b.directions, wavelength,
                         start_opl=b.opl0, to_sensor=False)
    hits = continue_to_sensor(system, state, sensor_gap=sensor_gap)
    return ExitBundle(
        exit_points=state.points, exit_directions=state.directions,
        exit_opl=state.opl, exit_alive=state.alive,
        sensor_xy=hits.sensor_xy, sensor_points=hits.points,
        sensor_alive=hits.alive, wavelength=wavelength,
        rings=rings, spokes=spokes, chief_ok=b.chief_ok)


def exit_wavefront(system: LensSystem, eb: ExitBundle,
                   sensor_gap: Optional[float] = None,
                   fo: Optional[FirstOrder] = None) -> ExitWavefront:
    """Reference-sphere OPD for a traced bundle.

    The sphere is centered on the chief-ray sensor hit (bundle centroid if
    the chief died) and passes through the exit-pupil center; exit rays are
    extended, forward or backward, to their first sphere crossing in air.
    """
    alive = eb.sensor_alive
    if int(alive.sum()) < _MIN_RAYS:
        raise TooFewRaysError(
            f"{int(alive.sum())} live rays at the sensor, need {_MIN_RAYS}")
    fo = fo or paraxial_trace(system, eb.wavelength)

    chief_good = bool(alive[0])
    if chief_good:
        center = eb.sensor_points[0]
        chief_xy = eb.sensor_xy[0]
    else:
        center = eb.sensor_points[alive].mean(axis=0)
        chief_xy = eb.sensor_xy[alive].mean(axis=0)

    z_xp = fo.exit_pupil.z
    a_xp = fo.exit_pupil.diameter / 2.0
    if not np.isfinite(a_xp) or a_xp <= 0:
        a_xp = fo.stop_radius
    if np.isfinite(z_xp):
        radius = float(np.linalg.norm(center - np.array([0.0, 0.0, z_xp])))
        if radius < 1e-9:
            radius = _FAR_RADIUS
    else:
        radius = _FAR_RADIUS

    o, d = eb.exit_points, eb.exit_directions
    s = center - o
    sd = np.einsum("ij,ij->i", s, d)
    disc = sd * sd - (np.einsum("ij,ij->i", s, s) - radius * radius)
    valid = alive & (disc > 0.0)
    t = np.where(valid, sd - np.sqrt(np.maximum(disc, 0.0)), 0.0)
    opl_sphere = eb.exit_opl + t   # image space is air, index 1

    if chief_good and valid[0]:
        ref = opl_sphere[0]
    else:
        ref = opl_sphere[valid].mean()
    w = np.where(valid, opl_sphere - ref, 0.0)

    if int(valid.sum()) < _MIN_RAYS:
        raise TooFewRaysError("too few rays intersect the reference sphere")

    _, _, ex, ey = sensor_frame(system, sensor_gap)
    return ExitWavefront(
        w_mm=w, alive=valid, rings=eb.rings, spokes=eb.spokes,
        chief_xy=np.asarray(chief_xy, dtype=float), center=center,
        radius=radius, pupil_z=z_xp if np.isfinite(z_xp) else fo.stop_z,
        pupil_radius=a_xp, sensor_ex=ex, sensor_ey=ey,
        wavelength=eb.wavelength)
