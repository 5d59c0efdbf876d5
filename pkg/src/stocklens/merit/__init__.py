from .config import (
    MODES,
    MeritConfig,
    channel_psf_wavelength,
    config_from_json,
    config_to_json,
    default_config,
)
from .wavefront import ExitBundle, ExitWavefront, exit_wavefront, trace_emitter
from .psf import PsfGrid, psf_from_text, psf_from_wavefront, psf_to_text, render_psf
from .mtf import MtfCurve, MtfScores, diffraction_mtf, mtf_from_psf, mtf_scores
from .stats import (
    objective,
    opd_stat,
    pair_values,
    relative_illumination,
    spot_ms_from_hits,
    spot_stat,
)
from .calibrate import CalibrationTable, calibration_table
from .report import MeritReport, MeritRow, merit_report

__all__ = [
    "MODES", "MeritConfig", "channel_psf_wavelength", "config_from_json",
    "config_to_json", "default_config",
    "ExitBundle", "ExitWavefront", "exit_wavefront", "trace_emitter",
    "PsfGrid", "psf_from_text", "psf_from_wavefront", "psf_to_text", "render_psf",
    "MtfCurve", "MtfScores", "diffraction_mtf", "mtf_from_psf", "mtf_scores",
    "objective", "opd_stat", "pair_values", "relative_illumination",
    "spot_ms_from_hits", "spot_stat",
    "CalibrationTable", "calibration_table",
    "MeritReport", "MeritRow", "merit_report",
]
