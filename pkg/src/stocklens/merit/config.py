"""Merit-function configuration: which sharpness measure to aggregate, over
which field points and wavelength channels, and the PSF/MTF grid settings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from ..optics import ChannelWavelengths, FieldSampling, default_channels, system_fov
from ..optics.sampling import RINGS, SPOKES

MODES = ("spot", "opd", "mtf")


@dataclass(frozen=True)
class MeritConfig:
    fields: FieldSampling
    wavelengths: ChannelWavelengths
    mode: str = "spot"
    psf_window_um: float = 65.0
    psf_grid: int = 128
    psf_pupil_samples: int = 64
    pixel_pitch_um: float = 4.3
    mtf_integration_cutoff: Optional[float] = None   # cycles/mm
    rings: int = RINGS
    spokes: int = SPOKES

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.psf_window_um <= 0:
            raise ValueError("psf_window_um must be positive")
        g = self.psf_grid
        if g < 2 or (g & (g - 1)) != 0:
            raise ValueError("psf_grid must be a power of two")
        if self.psf_pupil_samples < 4:
            raise ValueError("psf_pupil_samples too small")
        if self.pixel_pitch_um <= 0:
            raise ValueError("pixel_pitch_um must be positive")
        if self.mtf_integration_cutoff is not None and self.mtf_integration_cutoff <= 0:
            raise ValueError("mtf_integration_cutoff must be positive")
        if self.rings < 1 or self.spokes < 3:
            raise ValueError("need at least 1 ring and 3 spokes")

    @property
    def cutoff_cpmm(self) -> float:
        """MTF integration cutoff; defaults to the sensor Nyquist frequency."""
        if self.mtf_integration_cutoff is not None:
            return self.mtf_integration_cutoff
        return 1.0 / (2.0 * self.pixel_pitch_um * 1e-3)


def channel_psf_wavelength(channel: Sequence[float]) -> float:
    """Representative wavelength used for a channel's diffraction PSF: the
    middle entry of the sorted list (656.3/546.1/486.1 nm for the defaults)."""
    s = sorted(channel)
    return s[len(s) // 2]


def default_config(system, mode: str = "spot",
                   relative_fields: Sequence[float] = (0.0, 0.5, 1.0)) -> MeritConfig:
    """Fields at the given fractions of the semi-diagonal field angle, with
    the default RGB wavelength sets."""
    half = system_fov(system) / 2.0
    fields = FieldSampling.from_relative_fields(tuple(relative_fields), half)
    return MeritConfig(fields=fields, wavelengths=default_channels(), mode=mode)


def config_to_json(config: MeritConfig) -> dict:
    ems = []
    for e in config.fields.emitters:
        if e.angle is not None:
            ems.append({"angle_deg": list(e.angle)})
        else:
            ems.append({"point_mm": list(e.point)})
    return {
        "mode": config.mode,
        "emitters": ems,
        "channels": {n: list(c) for n, c in
                     zip(config.wavelengths.names, config.wavelengths.channels)},
        "psf_window_um": config.psf_window_um,
        "psf_grid": config.psf_grid,
        "psf_pupil_samples": config.psf_pupil_samples,
        "pixel_pitch_um": config.pixel_pitch_um,
        "mtf_integration_cutoff_cpmm": config.cutoff_cpmm,
        "rings": config.rings,
        "spokes": config.spokes,
    }


def config_from_json(doc: dict) -> MeritConfig:
    from ..optics import Emitter

    ems = []
    for e in doc["emitters"]:
        if "angle_deg" in e:
            ems.append(Emitter.at_angle(*e["angle_deg"]))
        else:
            ems.append(Emitter.at_point(*e["point_mm"]))
    ch = doc["channels"]
    names = tuple(ch.keys())
    wl = ChannelWavelengths(tuple(tuple(ch[n]) for n in names), names=names)
    cutoff = doc.get("mtf_integration_cutoff_cpmm")
    return MeritConfig(
        fields=FieldSampling(tuple(ems)),
        wavelengths=wl,
        mode=doc["mode"],
        psf_window_um=doc.get("psf_window_um", 65.0),
        psf_grid=doc.get("psf_grid", 128),
        psf_pupil_samples=doc.get("psf_pupil_samples", 64),
        pixel_pitch_um=doc.get("pixel_pitch_um", 4.3),
        mtf_integration_cutoff=cutoff,
        rings=doc.get("rings", RINGS),
        spokes=doc.get("spokes", SPOKES),
    )
