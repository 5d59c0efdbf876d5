"""Geometric sharpness statistics and the scalar objective: spot size about
the centroid, reference-sphere OPD, the per-emitter/per-channel aggregate,
and relative illumination across the field."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..catalog import D_LINE
from ..errors import TooFewRaysError
from ..optics import Emitter, FieldSampling, LensSystem, paraxial_trace, sensor_frame
from ..optics.sampling import RINGS, SPOKES
from .config import MeritConfig, channel_psf_wavelength
from .wavefront import ExitBundle, exit_wavefront, trace_emitter

_MIN_RAYS = 3


def spot_ms_from_hits(xy: np.ndarray, alive: np.ndarray) -> float:
    """Mean squared radial distance from the centroid of the live hits, mm^2.
    Hits pooled across wavelengths share one centroid per channel."""
    pts = xy[alive]
    if pts.shape[0] < _MIN_RAYS:
        raise TooFewRaysError(f"{pts.shape[0]} live rays, need {_MIN_RAYS}")
    c = pts.mean(axis=0)
    d = pts - c
    return float(np.mean(np.einsum("ij,ij->i", d, d)))


def _channel_bundles(system: LensSystem, emitter: Emitter,
                     wavelengths: Sequence[float],
                     sensor_gap: Optional[float],
                     rings: int, spokes: int, fo=None) -> list[ExitBundle]:
    return [trace_emitter(system, emitter, w, sensor_gap, rings, spokes, fo=fo)
            for w in wavelengths]


def _spot_ms(bundles: Sequence[ExitBundle]) -> float:
    xy = np.vstack([b.sensor_xy for b in bundles])
    alive = np.concatenate([b.sensor_alive for b in bundles])
    return spot_ms_from_hits(xy, alive)


def spot_stat(system: LensSystem, emitter: Emitter,
              wavelengths: Sequence[float],
              sensor_gap: Optional[float] = None,
              rings: int = RINGS, spokes: int = SPOKES) -> float:
    """RMS spot radius about the pooled centroid, micrometers."""
    ebs = _channel_bundles(system, emitter, wavelengths, sensor_gap, rings, spokes)
    return math.sqrt(_spot_ms(ebs)) * 1e3


def _opd_ms(system: LensSystem, bundles: Sequence[ExitBundle],
            sensor_gap: Optional[float]) -> float:
    """Pooled mean squared OPD deviation, waves^2; each wavelength is
    referenced to its own sphere and mean."""
    sq, count = 0.0, 0
    for eb in bundles:
        wf = exit_wavefront(system, eb, sensor_gap=sensor_gap)
        lam_mm = eb.wavelength * 1e-6
        w = wf.w_mm[wf.alive] / lam_mm
        dev = w - w.mean()
        sq += float(np.sum(dev * dev))
        count += dev.size
    if count < _MIN_RAYS:
        raise TooFewRaysError(f"{count} live rays, need {_MIN_RAYS}")
    return sq / count


def opd_stat(system: LensSystem, emitter: Emitter,
             wavelengths: Sequence[float],
             sensor_gap: Optional[float] = None,
             rings: int = RINGS, spokes: int = SPOKES) -> float:
    """RMS optical-path deviation about the mean on the reference sphere,
    in waves."""
    ebs = _channel_bundles(system, emitter, wavelengths, sensor_gap, rings, spokes)
    return math.sqrt(_opd_ms(system, ebs, sensor_gap))


def _ri_raw(system: LensSystem, bundles: Sequence[ExitBundle],
            sensor_gap: Optional[float]) -> float:
    """Live-ray fraction times the cos^4 obliquity of the chief at the
    sensor; normalization against the central field happens in the caller."""
    alive = np.concatenate([b.sensor_alive for b in bundles])
    frac = float(alive.mean())
    if frac == 0.0:
        return 0.0
    _, nrm, _, _ = sensor_frame(system, sensor_gap)
    b0 = bundles[0]
    if b0.sensor_alive[0]:
        d = b0.exit_directions[0]
    else:
        d = b0.exit_directions[b0.sensor_alive].mean(axis=0)
        d = d / np.linalg.norm(d)
    cosx = abs(float(np.dot(d, nrm)))
    return frac * cosx ** 4


def relative_illumination(system: LensSystem, fields: FieldSampling,
                          wavelength: float = D_LINE,
                          sensor_gap: Optional[float] = None,
                          rings: int = RINGS, spokes: int = SPOKES) -> np.ndarray:
    """Per-field illumination relative to the central field."""
    fo = paraxial_trace(system)
    raws = []
    for em in fields.emitters:
        ebs = _channel_bundles(system, em, (wavelength,), sensor_gap,
                               rings, spokes, fo=fo)
        raws.append(_ri_raw(system, ebs, sensor_gap))
    central = next(i for i, e in enumerate(fields.emitters) if e.is_central)
    ref = raws[central]
    if ref <= 0.0:
        raise TooFewRaysError("no live rays at the central field")
    return np.array(raws) / ref


def channel_value(system: LensSystem, config: MeritConfig,
                  channel: Sequence[float], ebs: Sequence[ExitBundle],
                  sensor_gap: Optional[float] = None) -> float:
    """One merit table entry from already-traced bundles.

    The bundles may come from a fresh trace or from cached exit rays
    re-intersected with a moved sensor; the arithmetic is identical, which
    is what makes the cached focus loop exact. For mtf mode the bundle at
    the channel's representative wavelength must be present."""
    from .mtf import mtf_from_psf, mtf_scores
    from .psf import psf_from_wavefront

    if config.mode == "mtf":
        w = channel_psf_wavelength(channel)
        eb = next(b for b in ebs if b.wavelength == w)
        wf = exit_wavefront(system, eb, sensor_gap=sensor_gap)
        psf = psf_from_wavefront(wf, config.psf_window_um, config.psf_grid,
                                 config.psf_pupil_samples)
        scores = mtf_scores(mtf_from_psf(psf), system.sensor.height,
                            config.cutoff_cpmm)
        return -scores.area
    if config.mode == "spot":
        return _spot_ms(ebs) * 1e6
    return _opd_ms(system, ebs, sensor_gap)


def pair_values(system: LensSystem, config: MeritConfig,
                sensor_gap: Optional[float] = None) -> np.ndarray:
    """The (n_emitters, n_channels) table the objective averages.

    spot mode: mean squared spot error, um^2. opd mode: mean squared OPD,
    waves^2. mtf mode: negative area under the channel's MTF curve (computed
    at the channel's representative wavelength), so smaller is better in
    every mode. Channels are independent: each gets its own centroid or
    reference, so rigid lateral color shifts do not change the value."""
    fo = paraxial_trace(system)
    n_e, n_c = config.fields.n, len(config.wavelengths.channels)
    out = np.empty((n_e, n_c))
    for i, em in enumerate(config.fields.emitters):
        for j, channel in enumerate(config.wavelengths.channels):
            if config.mode == "mtf":
                ws = (channel_psf_wavelength(channel),)
            else:
                ws = channel
            ebs = _channel_bundles(system, em, ws, sensor_gap,
                                   config.rings, config.spokes, fo=fo)
            out[i, j] = channel_value(system, config, channel, ebs, sensor_gap)
    return out


def objective(system: LensSystem, config: MeritConfig,
              sensor_gap: Optional[float] = None) -> float:
    """Unweighted mean of the per-emitter, per-channel values."""
    return float(pair_values(system, config, sensor_gap).mean())
