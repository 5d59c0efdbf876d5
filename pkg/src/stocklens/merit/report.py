"""Full per-field, per-channel quality report for a focused lens system."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..jsonio import SCHEMA_VERSION
from ..optics import LensSystem, paraxial_trace
from .config import MeritConfig, channel_psf_wavelength
from .mtf import mtf_from_psf, mtf_scores
from .psf import psf_from_wavefront
from .stats import _channel_bundles, _opd_ms, _ri_raw, _spot_ms
from .wavefront import exit_wavefront


@dataclass(frozen=True)
class MeritRow:
    emitter_index: int
    channel: str
    spot_rms_um: float
    opd_rms_waves: float
    mtf_area: float
    mtf50_cpmm: float
    mtf50_lwph: float
    mtf50_at_cutoff: bool
    relative_illumination: float


@dataclass(frozen=True)
class MeritReport:
    mode: str
    objective_value: float
    rows: tuple
    sensor_name: str
    sensor_height_mm: float
    cutoff_cpmm: float

    @property
    def mtf_area_mean(self) -> float:
        """The ranking score: unweighted mean over field and channels."""
        return float(np.mean([r.mtf_area for r in self.rows]))

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "objective": self.objective_value,
            "sensor": self.sensor_name,
            "sensor_height_mm": self.sensor_height_mm,
            "mtf_integration_cutoff_cpmm": self.cutoff_cpmm,
            "mtf_area_mean": self.mtf_area_mean,
            "rows": [{
                "emitter": r.emitter_index,
                "channel": r.channel,
                "spot_rms_um": r.spot_rms_um,
                "opd_rms_waves": r.opd_rms_waves,
                "mtf_area": r.mtf_area,
                "mtf50_cpmm": r.mtf50_cpmm,
                "mtf50_lwph": r.mtf50_lwph,
                "mtf50_at_cutoff": r.mtf50_at_cutoff,
                "relative_illumination": r.relative_illumination,
            } for r in self.rows],
        }


def merit_report(system: LensSystem, config: MeritConfig,
                 sensor_gap: Optional[float] = None,
                 include_mtf: bool = True) -> MeritReport:
    """Evaluate every statistic for every (emitter, channel) pair.

    Relative illumination is normalized per channel against the central
    field. The aggregate objective follows config.mode and equals the mean
    of the corresponding per-pair values."""
    fo = paraxial_trace(system)
    emitters = config.fields.emitters
    central = next(i for i, e in enumerate(emitters) if e.is_central)
    names = config.wavelengths.names
    channels = config.wavelengths.channels

    spot_ms = np.empty((len(emitters), len(channels)))
    opd_ms = np.empty_like(spot_ms)
    ri_raw = np.empty_like(spot_ms)
    areas = np.empty_like(spot_ms)
    scores_tbl = {}

    for i, em in enumerate(emitters):
        for j, channel in enumerate(channels):
            ebs = _channel_bundles(system, em, channel, sensor_gap,
                                   config.rings, config.spokes, fo=fo)
            spot_ms[i, j] = _spot_ms(ebs)
            opd_ms[i, j] = _opd_ms(system, ebs, sensor_gap)
            ri_raw[i, j] = _ri_raw(system, ebs, sensor_gap)
            if include_mtf:
                rep = channel_psf_wavelength(channel)
                eb = ebs[channel.index(rep)]
                wf = exit_wavefront(system, eb, sensor_gap=sensor_gap)
                psf = psf_from_wavefront(wf, config.psf_window_um,
                                         config.psf_grid,
                                         config.psf_pupil_samples)
                sc = mtf_scores(mtf_from_psf(psf), system.sensor.height,
                                config.cutoff_cpmm)
                areas[i, j] = sc.area
                scores_tbl[i, j] = sc

    rows = []
    for i in range(len(emitters)):
        for j, name in enumerate(names):
            ref = ri_raw[central, j]
            ri = ri_raw[i, j] / ref if ref > 0 else 0.0
            if include_mtf:
                sc = scores_tbl[i, j]
                area, m50, lwph, flag = sc.area, sc.mtf50_cpmm, sc.mtf50_lwph, sc.mtf50_at_cutoff
            else:
                area, m50, lwph, flag = 0.0, 0.0, 0.0, True
            rows.append(MeritRow(
                emitter_index=i, channel=name,
                spot_rms_um=math.sqrt(spot_ms[i, j]) * 1e3,
                opd_rms_waves=math.sqrt(opd_ms[i, j]),
                mtf_area=area, mtf50_cpmm=m50, mtf50_lwph=lwph,
                mtf50_at_cutoff=flag, relative_illumination=ri))

    if config.mode == "spot":
        f = float(np.mean(spot_ms * 1e6))
    elif config.mode == "opd":
        f = float(np.mean(opd_ms))
    else:
        f = float(np.mean(-areas))
    return MeritReport(mode=config.mode, objective_value=f, rows=tuple(rows),
                       sensor_name=system.sensor.name,
                       sensor_height_mm=system.sensor.height,
                       cutoff_cpmm=config.cutoff_cpmm)


def report_from_json(doc: dict) -> MeritReport:
    """Inverse of MeritReport.to_json (pool snapshots round-trip through it)."""
    rows = tuple(MeritRow(
        emitter_index=int(r["emitter"]), channel=str(r["channel"]),
        spot_rms_um=float(r["spot_rms_um"]),
        opd_rms_waves=float(r["opd_rms_waves"]),
        mtf_area=float(r["mtf_area"]), mtf50_cpmm=float(r["mtf50_cpmm"]),
        mtf50_lwph=float(r["mtf50_lwph"]),
        mtf50_at_cutoff=bool(r["mtf50_at_cutoff"]),
        relative_illumination=float(r["relative_illumination"]),
    ) for r in doc["rows"])
    return MeritReport(mode=str(doc["mode"]),
                       objective_value=float(doc["objective"]),
                       rows=rows, sensor_name=str(doc["sensor"]),
                       sensor_height_mm=float(doc["sensor_height_mm"]),
                       cutoff_cpmm=float(doc["mtf_integration_cutoff_cpmm"]))
