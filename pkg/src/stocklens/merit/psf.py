"""Diffraction point-spread functions: the exit-pupil wavefront is resampled
onto a uniform Cartesian pupil grid (bicubic in the polar launch coordinates)
and propagated to a small sensor patch by direct Rayleigh-Sommerfeld
summation from the reference sphere."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from ..optics import Emitter, LensSystem
from ..optics.sampling import RINGS, SPOKES
from .wavefront import ExitWavefront, exit_wavefront, trace_emitter

# pupil-sample complex terms per chunk of the summation
_CHUNK_BUDGET = 4_000_000


@dataclass(frozen=True)
class PsfGrid:
    intensity: np.ndarray        # (n, n), row-major, total exactly 1
    window_um: float             # physical side of the square patch
    wavelength_nm: float
    center_xy: tuple             # sensor coords the patch is centered on, mm

    @property
    def n(self) -> int:
        return self.intensity.shape[0]

    @property
    def pixel_um(self) -> float:
        return self.window_um / self.n


def _pupil_maps(wf: ExitWavefront):
    """Bicubic OPD interpolant over (radius, azimuth) plus the per-cell
    aliveness table; dead cells borrow their ring's mean before fitting so
    the spline stays tame, the amplitude mask handles the actual hole."""
    rings, spokes = wf.rings, wf.spokes
    w = wf.w_mm[1:].reshape(rings, spokes)
    ok = wf.alive[1:].reshape(rings, spokes)

    filled = w.copy()
    overall = w[ok].mean() if ok.any() else 0.0
    for i in range(rings):
        row_ok = ok[i]
        if not row_ok.all():
            fill = w[i][row_ok].mean() if row_ok.any() else overall
            filled[i, ~row_ok] = fill

    rho_levels = np.sqrt((np.arange(1, rings + 1) - 0.5) / rings)
    if wf.alive[0]:
        center_val = wf.w_mm[0]
    else:
        center_val = filled[0].mean()
    rho_all = np.concatenate([[0.0], rho_levels])
    vals = np.vstack([np.full(spokes, center_val), filled])

    dth = 2.0 * math.pi / spokes
    th = np.arange(spokes) * dth
    th_pad = np.concatenate([th[-3:] - 2.0 * math.pi, th, th[:3] + 2.0 * math.pi])
    vals_pad = np.hstack([vals[:, -3:], vals, vals[:, :3]])
    spline = RectBivariateSpline(rho_all, th_pad, vals_pad, kx=3, ky=3, s=0)

    def opd(rho, theta):
        return spline.ev(rho, theta)

    def live(rho, theta):
        ring = np.clip((rho * rho * rings).astype(int), 0, rings - 1)
        spoke = np.rint(theta / dth).astype(int) % spokes
        return ok[ring, spoke]

    return opd, live


def psf_from_wavefront(wf: ExitWavefront, window_um: float = 65.0,
                       grid: int = 128, pupil_samples: int = 64) -> PsfGrid:
    """Rayleigh-Sommerfeld propagation of the exit wavefront onto a square
    sensor patch centered on the chief hit. Quadrature uses planar pupil
    measure; the obliquity and 1/r factors carry the natural apodization."""
    opd, live = _pupil_maps(wf)
    a = wf.pupil_radius
    lam_mm = wf.wavelength * 1e-6
    k = 2.0 * math.pi / lam_mm

    c = (np.arange(pupil_samples) + 0.5) / pupil_samples * 2.0 - 1.0
    gx, gy = np.meshgrid(c, c, indexing="xy")
    rho = np.hypot(gx, gy).ravel()
    theta = np.mod(np.arctan2(gy, gx).ravel(), 2.0 * math.pi)

    # partial-coverage weights for cells straddling the rim, by 4x4
    # subsampling; interior cells weigh 1, the rest taper smoothly
    cell = 2.0 / pupil_samples
    sub = (np.arange(4) + 0.5) / 4.0 * cell - cell / 2.0
    sx, sy = np.meshgrid(sub, sub, indexing="xy")
    rr = np.hypot(gx.ravel()[:, None] + sx.ravel()[None, :],
                  gy.ravel()[:, None] + sy.ravel()[None, :])
    weight = (rr <= 1.0).mean(axis=1)
    edge = np.abs(rho - 1.0) > cell
    weight[edge & (rho < 1.0)] = 1.0
    weight[edge & (rho > 1.0)] = 0.0

    amp = weight > 0.0
    rho_l = np.minimum(rho, 1.0)
    amp[amp] &= live(rho_l[amp], theta[amp])

    rho_q, th_q = rho_l[amp], theta[amp]
    w_q = opd(rho_q, th_q)
    wt_q = weight[amp]
    q_plane = np.column_stack([
        rho_q * np.cos(th_q) * a,
        rho_q * np.sin(th_q) * a,
        np.full(rho_q.size, wf.pupil_z),
    ])
    v = q_plane - wf.center
    vn = np.linalg.norm(v, axis=1, keepdims=True)
    q = wf.center + wf.radius * v / vn          # projected onto the sphere
    n_q = (wf.center - q) / wf.radius           # sphere normal, toward image

    px_mm = window_um * 1e-3 / grid
    u = (np.arange(grid) - (grid - 1) / 2.0) * px_mm
    uu, vv = np.meshgrid(u, u, indexing="xy")
    p0 = wf.center[None, :]
    p = (p0 + uu.ravel()[:, None] * wf.sensor_ex[None, :]
         + vv.ravel()[:, None] * wf.sensor_ey[None, :])

    u_q = wt_q * np.exp(1j * k * w_q)
    field = np.empty(p.shape[0], dtype=complex)
    block = max(1, _CHUNK_BUDGET // max(1, q.shape[0]))
    for i in range(0, p.shape[0], block):
        diff = p[i:i + block, None, :] - q[None, :, :]
        r = np.linalg.norm(diff, axis=2)
        cosx = np.einsum("ijk,jk->ij", diff, n_q) / r
        field[i:i + block] = ((np.exp(1j * k * r) / r) * cosx) @ u_q

    inten = np.abs(field.reshape(grid, grid)) ** 2
    inten /= inten.sum()
    return PsfGrid(inten, float(window_um), float(wf.wavelength),
                   (float(wf.chief_xy[0]), float(wf.chief_xy[1])))


def render_psf(system: LensSystem, emitter: Emitter, wavelength: float,
               sensor_gap: Optional[float] = None, *,
               window_um: float = 65.0, grid: int = 128,
               pupil_samples: int = 64,
               rings: int = RINGS, spokes: int = SPOKES) -> PsfGrid:
    eb = trace_emitter(system, emitter, wavelength, sensor_gap, rings, spokes)
    wf = exit_wavefront(system, eb, sensor_gap=sensor_gap)
    return psf_from_wavefront(wf, window_um, grid, pupil_samples)


def psf_to_text(psf: PsfGrid) -> str:
    """Portable float grid: 'width height window_um wavelength_nm' header,
    then one row of values per line, row-major."""
    lines = [f"{psf.n} {psf.n} {psf.window_um:.9g} {psf.wavelength_nm:.9g}"]
    for row in psf.intensity:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def psf_from_text(text: str) -> PsfGrid:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    w, h, window_um, wavelength = lines[0].split()
    w, h = int(w), int(h)
    vals = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    if vals.shape != (h, w):
        raise ValueError(f"expected {h}x{w} grid, got {vals.shape}")
    return PsfGrid(vals, float(window_um), float(wavelength), (0.0, 0.0))
