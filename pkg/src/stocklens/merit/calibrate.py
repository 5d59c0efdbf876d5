"""Distortion and lateral-color calibration tables: real chief-ray image
positions per channel on a regular field grid, compared against the Gaussian
chief-ray prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..optics import Emitter, LensSystem, paraxial_chief_hit, paraxial_trace, system_fov
from ..optics.trace import trace_bundle
from ..optics.sampling import solve_chief
from .config import channel_psf_wavelength


@dataclass(frozen=True)
class CalibrationTable:
    """Field angles in degrees; every displacement field in mm on the sensor.
    positions_mm[c, iy, ix] is the channel-c chief hit; distortion_mm is the
    channel-mean hit minus the Gaussian prediction; lca_mm[c] is channel c
    minus the channel mean. Dead chief rays are NaN entries."""

    angles_x_deg: np.ndarray          # (nx,)
    angles_y_deg: np.ndarray          # (ny,)
    channel_names: tuple
    positions_mm: np.ndarray          # (C, ny, nx, 2)
    predicted_mm: np.ndarray          # (ny, nx, 2)
    distortion_mm: np.ndarray         # (ny, nx, 2)
    lca_mm: np.ndarray                # (C, ny, nx, 2)

    def to_json(self) -> dict:
        return {
            "units": {"angles": "deg", "positions": "mm"},
            "angles_x_deg": [float(a) for a in self.angles_x_deg],
            "angles_y_deg": [float(a) for a in self.angles_y_deg],
            "channels": list(self.channel_names),
            "positions_mm": self.positions_mm.tolist(),
            "predicted_mm": self.predicted_mm.tolist(),
            "distortion_mm": self.distortion_mm.tolist(),
            "lca_mm": self.lca_mm.tolist(),
        }


def _chief_hit(system: LensSystem, emitter: Emitter, wavelength: float,
               fo, sensor_gap: Optional[float]):
    o, d, ok = solve_chief(system, emitter, wavelength, fo)
    if not ok:
        return np.array([math.nan, math.nan])
    res = trace_bundle(system, o[None, :], d[None, :], wavelength,
                       sensor_gap=sensor_gap)
    if not res.alive[0]:
        return np.array([math.nan, math.nan])
    return res.sensor_xy[0]


def calibration_table(system: LensSystem, grid_density: int = 5,
                      channels: Optional[Sequence[Sequence[float]]] = None,
                      channel_names: Optional[Sequence[str]] = None,
                      sensor_gap: Optional[float] = None) -> CalibrationTable:
    """Chief-ray image coordinates over a grid_density x grid_density field
    grid. grid_density must be odd so the on-axis point is sampled; per-axis
    extents split the diagonal semi-field in proportion to the sensor sides.
    """
    if grid_density < 3 or grid_density % 2 == 0:
        raise ValueError("grid_density must be odd and at least 3")
    if channels is None:
        from ..optics import default_channels
        ch = default_channels()
        channels, names = ch.channels, ch.names
    else:
        channels = tuple(tuple(c) for c in channels)
        names = tuple(channel_names) if channel_names is not None else tuple(
            f"ch{i}" for i in range(len(channels)))
    reps = [channel_psf_wavelength(c) for c in channels]

    if sensor_gap is not None:
        system = system.with_gaps(sensor_gap=sensor_gap)

    half = math.radians(system_fov(system) / 2.0)
    sens = system.sensor
    ax_max = math.degrees(math.atan(math.tan(half) * sens.width / sens.diagonal))
    ay_max = math.degrees(math.atan(math.tan(half) * sens.height / sens.diagonal))
    axs = np.linspace(-ax_max, ax_max, grid_density)
    ays = np.linspace(-ay_max, ay_max, grid_density)

    scale = paraxial_chief_hit(system, 1.0)
    pred = np.empty((grid_density, grid_density, 2))
    for iy, ay in enumerate(ays):
        for ix, ax in enumerate(axs):
            pred[iy, ix] = (math.tan(math.radians(ax)) * scale,
                            math.tan(math.radians(ay)) * scale)

    fo = paraxial_trace(system)
    pos = np.empty((len(channels), grid_density, grid_density, 2))
    for c, w in enumerate(reps):
        for iy, ay in enumerate(ays):
            for ix, ax in enumerate(axs):
                pos[c, iy, ix] = _chief_hit(
                    system, Emitter.at_angle(ax, ay), w, fo, None)

    mean_pos = pos.mean(axis=0)
    return CalibrationTable(
        angles_x_deg=axs, angles_y_deg=ays, channel_names=tuple(names),
        positions_mm=pos, predicted_mm=pred,
        distortion_mm=mean_pos - pred, lca_mm=pos - mean_pos[None])
