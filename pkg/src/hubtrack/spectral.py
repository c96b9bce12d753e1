"""Harmonic spectra, numerical gradients and the brick-wall field filter."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lattice import ParameterError

log = logging.getLogger(__name__)

WINDOWS = {"blackman": np.blackman, "hann": np.hanning, "none": np.ones}


@dataclass(frozen=True)
class Spectrum:
    """One-sided power of a real signal against harmonic order omega/omega0.

    Bins are scaled so that ``power.sum()`` equals the energy of the windowed
    signal, ``sum(|w x|^2)``.
    """

    orders: np.ndarray
    power: np.ndarray
    window: str = "blackman"
    quantity: str = "|FFT(dJ/dt)|^2"

    def band(self, upper: float) -> np.ndarray:
        return self.orders <= upper + 1e-12


def numerical_gradient(series, dt: float) -> np.ndarray:
    """Second-order centred differences, second-order one-sided at the ends."""
    series = np.asarray(series, dtype=float)
    if series.size < 3:
        raise ParameterError("numerical gradient needs at least 3 samples")
    return np.gradient(series, dt, edge_order=2)


def harmonic_spectrum(djdt, dt: float, omega0: float, window: str = "blackman") -> Spectrum:
    x = np.asarray(djdt, dtype=float)
    try:
        w = WINDOWS[window](x.size)
    except KeyError:
        raise ParameterError(f"unknown window {window!r}") from None
    n = x.size
    coeffs = np.fft.rfft(w * x)
    power = np.abs(coeffs) ** 2 / n
    # interior bins stand for both +omega and -omega
    power[1 : (n + 1) // 2] *= 2.0
    omega = 2.0 * np.pi * np.fft.rfftfreq(n, dt)
    return Spectrum(orders=omega / omega0, power=power, window=window)


def lowpass_filter(phi, dt: float, omega_c: float) -> np.ndarray:
    """Zero every Fourier component above angular frequency ``omega_c``."""
    if omega_c < 0:
        raise ParameterError("cut-off must be non-negative")
    phi = np.asarray(phi, dtype=float)
    n = phi.size
    omega = 2.0 * np.pi * np.fft.rfftfreq(n, dt)
    if omega_c >= omega[-1]:
        return phi.copy()
    coeffs = np.fft.rfft(phi)
    coeffs[omega > omega_c] = 0.0
    return np.fft.irfft(coeffs, n=n)


def spectral_mismatch(run: Spectrum, target: Spectrum, upper_order: float, floor: float = 1e-12) -> float:
    """Mean absolute log10 power difference over harmonic orders <= upper_order.

    Both spectra are normalised to unit peak inside the band first, so a
    scaled target (k J_T) compares by shape only.
    """
    band = target.band(upper_order)
    a = run.power[band] / max(run.power[band].max(), floor)
    b = target.power[band] / max(target.power[band].max(), floor)
    return float(np.mean(np.abs(np.log10(a + floor) - np.log10(b + floor))))


@dataclass
class SweepEntry:
    omega_c: float
    spectrum: Spectrum | None
    mismatch: float
    trajectory: object = None
    error: str | None = None


def filter_sweep(
    model,
    psi0,
    traj,
    cutoffs,
    omega0: float,
    window: str = "blackman",
    target_spectrum: Spectrum | None = None,
    mismatch_order: float | None = None,
    norm_tol: float = 1e-8,
) -> list[SweepEntry]:
    """Low-pass the tracking field at each cut-off and re-run the driven system.

    Mismatch is measured against ``target_spectrum`` (by default the spectrum
    of the tracked target current) over orders up to ``mismatch_order``, by
    default the largest cut-off, so every entry is scored on the same band.
    A failed propagation is logged and recorded; the sweep continues.
    """
    from .dynamics import IntegratorError, SampledField, TimeGrid, propagate_driven

    dt = traj.dt
    grid = TimeGrid(dt, len(traj.times) - 1)
    if target_spectrum is None:
        source = traj.J_target if traj.J_target is not None else traj.J
        target_spectrum = harmonic_spectrum(numerical_gradient(source, dt), dt, omega0, window)
    upper = mismatch_order if mismatch_order is not None else max(cutoffs) / omega0
    entries = []
    for omega_c in cutoffs:
        field = SampledField(traj.times, lowpass_filter(traj.phi, dt, omega_c))
        try:
            run = propagate_driven(model, psi0, field, grid, norm_tol=norm_tol)
        except IntegratorError as exc:
            log.warning("cut-off %.4g failed: %s", omega_c, exc)
            entries.append(SweepEntry(omega_c, None, float("nan"), exc.trajectory, str(exc)))
            continue
        spec = harmonic_spectrum(numerical_gradient(run.J, dt), dt, omega0, window)
        entries.append(SweepEntry(omega_c, spec, spectral_mismatch(spec, target_spectrum, upper), run))
    return entries
