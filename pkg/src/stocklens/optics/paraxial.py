"""First-order (paraxial) system analysis.

Reduced-angle y-omega trace: omega = n*u, surface power phi = c*(n2 - n1),
refraction omega' = omega - y*phi, transfer y' = y + (t/n)*omega. Evaluated
at the d line unless a wavelength is passed. Paraxial surface power is
direction-independent, which the pupil imaging (stop imaged toward object
space / toward image space) relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..catalog import D_LINE
from ..errors import AfocalSystemError, FNumberUnreachableError
from .system import IDEAL, REFRACT, STOP, LensSystem

_AFOCAL_TOL = 1e-12


@dataclass(frozen=True)
class PupilInfo:
    z: float          # axial position, mm (math.inf for telecentric)
    diameter: float   # mm


@dataclass(frozen=True)
class FirstOrder:
    efl: float
    bfl: float
    ffl: float                # front focal point distance ahead of surface 1
    p_front: float            # front principal plane z
    p_rear: float             # rear principal plane z
    afocal: bool
    entrance_pupil: PupilInfo
    exit_pupil: PupilInfo
    stop_z: float
    stop_radius: float


@dataclass(frozen=True)
class _Stage:
    phi: float        # surface power
    red_gap: float    # reduced distance to the next surface, (dz)/n
    z: float
    semi: float
    kind: str


def _stages(system: LensSystem, wavelength: float) -> list[_Stage]:
    surfs = system.surfaces()
    out = []
    for i, s in enumerate(surfs):
        if s.kind == REFRACT:
            n1 = 1.0 if s.glass_before is None else s.glass_before.index(wavelength)
            n2 = 1.0 if s.glass_after is None else s.glass_after.index(wavelength)
            phi = s.curvature * (n2 - n1)
            n_after = n2
        elif s.kind == IDEAL:
            phi, n_after = 1.0 / s.focal_length, 1.0
        else:
            phi, n_after = 0.0, 1.0
        gap = (surfs[i + 1].z - s.z) if i + 1 < len(surfs) else 0.0
        out.append(_Stage(phi, gap / n_after, s.z, s.semi_diameter, s.kind))
    return out


def _run(stages, y: float, omega: float, collect=False):
    """Refract-then-transfer through each stage; heights are at-surface."""
    ys = [] if collect else None
    for st in stages:
        omega = omega - y * st.phi
        if collect:
            ys.append(y)
        y = y + st.red_gap * omega
    return (y, omega, ys) if collect else (y, omega)


def paraxial_trace(system: LensSystem, wavelength: float = D_LINE) -> FirstOrder:
    """First-order summary. Afocal systems are flagged, never raised here."""
    stages = _stages(system, wavelength)
    surfs = system.surfaces()
    z_first, z_last = surfs[0].z, surfs[-1].z

    y_out, w_out = _run(stages, 1.0, 0.0)
    afocal = abs(w_out) < _AFOCAL_TOL
    if afocal:
        efl = bfl = ffl = math.inf
        p_rear = p_front = math.nan
    else:
        efl = -1.0 / w_out
        bfl = -y_out / w_out
        p_rear = z_last + bfl - efl
        yb, wb = _run(list(reversed(stages)), 1.0, 0.0)
        ffl = -yb / wb
        p_front = z_first - ffl + efl

    k = next(i for i, st in enumerate(stages) if st.kind == STOP)
    stop = stages[k]
    a = stop.semi

    # (transfer, power) walks away from the stop in both directions
    fwd = [(stages[j - 1].red_gap, stages[j].phi) for j in range(k + 1, len(stages))]
    bwd = [(stages[j].red_gap, stages[j].phi) for j in range(k - 1, -1, -1)]
    xp = _image_pupil(fwd, a, exit_plane=z_last, anchor=stop.z, direction=+1)
    ep = _image_pupil(bwd, a, exit_plane=stop.z - z_first, anchor=stop.z, direction=-1)

    return FirstOrder(efl=efl, bfl=bfl, ffl=ffl, p_front=p_front, p_rear=p_rear,
                      afocal=afocal, entrance_pupil=ep, exit_pupil=xp,
                      stop_z=stop.z, stop_radius=a)


def _image_pupil(walk, a: float, exit_plane: float, anchor: float, direction: int) -> PupilInfo:
    if not walk:
        return PupilInfo(anchor, 2 * a)
    yA, wA = 0.0, 1.0   # from stop center
    yB, wB = 1.0, 0.0   # from stop edge, unit height
    for gap, phi in walk:
        yA += gap * wA
        wA -= yA * phi
        yB += gap * wB
        wB -= yB * phi
    if abs(wA) < _AFOCAL_TOL:
        return PupilInfo(math.inf * direction, math.inf)
    travel = -yA / wA                      # distance past the exit plane
    mag = yB + travel * wB
    if direction > 0:
        z = exit_plane + travel            # exit_plane is z_last
    else:
        z = anchor - (exit_plane + travel)  # mirrored frame, measured from stop
    return PupilInfo(z, 2 * a * abs(mag))


def marginal_heights(system: LensSystem, height: float, wavelength: float = D_LINE):
    """|y| at each surface for a parallel input ray at the given height."""
    stages = _stages(system, wavelength)
    _, _, ys = _run(stages, height, 0.0, collect=True)
    return [(abs(y), st) for y, st in zip(ys, stages)]


def paraxial_image_distance(system: LensSystem, object_z: float,
                            wavelength: float = D_LINE) -> float:
    """Axis crossing behind the last surface for an axial object point at
    object_z (< 0); inf/negative means no real image."""
    stages = _stages(system, wavelength)
    u0 = 1e-4
    y0 = u0 * (stages[0].z - object_z)
    y, w = _run(stages, y0, u0)
    if abs(w) < _AFOCAL_TOL:
        return math.inf
    return -y / w


def paraxial_chief_hit(system: LensSystem, tan_field: float,
                       wavelength: float = D_LINE) -> float:
    """Gaussian sensor height of the chief ray for a field slope tan(theta).

    Launches a linear chief through the entrance-pupil center and carries it
    to the sensor plane; this is the distortion-free reference mapping (the
    f*tan(theta) law generalized to the actual pupil and sensor positions).
    """
    fo = paraxial_trace(system, wavelength)
    ep_z = fo.entrance_pupil.z
    if not math.isfinite(ep_z):
        ep_z = fo.stop_z
    stages = _stages(system, wavelength)
    y0 = (stages[0].z - ep_z) * tan_field
    y, w = _run(stages, y0, tan_field)
    return y + (system.sensor_z - stages[-1].z) * w


def fov_paraxial(system: LensSystem) -> float:
    """Full diagonal FOV from efl and sensor size, degrees."""
    fo = paraxial_trace(system)
    if fo.afocal:
        raise AfocalSystemError("system has no focal length")
    return math.degrees(2.0 * math.atan(system.sensor.diagonal / 2.0 / abs(fo.efl)))


def set_fnumber(system: LensSystem, target: float) -> LensSystem:
    """Scale the stop so efl / entrance-pupil-diameter hits the target.

    Raises FNumberUnreachableError when the needed pupil cannot pass every
    element's clear aperture (pruning test 3) or the target is below 0.8.
    """
    if target < 0.8:
        raise FNumberUnreachableError(f"target f/{target} below practical bound 0.8")
    fo = paraxial_trace(system)
    if fo.afocal:
        raise AfocalSystemError("cannot set f-number on an afocal system")
    epd_now = fo.entrance_pupil.diameter
    if not math.isfinite(epd_now) or epd_now <= 0:
        raise FNumberUnreachableError("entrance pupil is degenerate")
    epd_want = abs(fo.efl) / target
    new_radius = fo.stop_radius * epd_want / epd_now
    out = system.with_stop_radius(new_radius)

    for absy, st in marginal_heights(out, epd_want / 2.0):
        if st.kind in (REFRACT, IDEAL) and absy > st.semi + 1e-9:
            raise FNumberUnreachableError(
                f"f/{target} needs ray height {absy:.3f} mm at z={st.z:.3f}, "
                f"clear semi-aperture is {st.semi:.3f} mm")

    achieved = abs(paraxial_trace(out).efl) / paraxial_trace(out).entrance_pupil.diameter
    if abs(achieved - target) > 0.01 * target:
        raise FNumberUnreachableError(
            f"achieved f/{achieved:.3f} vs target f/{target:.3f}")
    return out
