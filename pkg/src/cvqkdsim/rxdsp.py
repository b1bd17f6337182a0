"""Receiver DSP: spectral whitening, pilot-aided frequency and phase
recovery, synchronization, matched filtering and the symbol-correlation
diagnostic.

The processing order mirrors the offline receiver chain: whiten the raw ADC
trace, estimate the LO detuning from the pilot, downconvert, track the
carrier phase with an unscented Kalman filter on the pilot, correct the
quantum band, then matched-filter and downsample.  The high-pass and RRC
filters are bit-identical to the transmitter's so that signal, vacuum and
electronic traces all measure the same temporal mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import signal as sg

from .core import SampleBuffer, SymbolFrame
from .txdsp import HighPassSpec, RrcFilter, highpass

__all__ = [
    "WhiteningFilter",
    "UkfConfig",
    "UkfResult",
    "SyncResult",
    "PilotNotFoundError",
    "build_whitening",
    "apply_whitening",
    "estimate_freq_offset",
    "downconvert",
    "extract_pilot",
    "estimate_ukf_config",
    "ukf_phase_track",
    "upsample_phases",
    "phase_correct",
    "synchronize",
    "matched_filter_downsample",
    "autocorrelation",
]


class PilotNotFoundError(RuntimeError):
    """No spectral line above threshold in the searched band."""


@dataclass(frozen=True)
class WhiteningFilter:
    """Linear-phase FIR flattening the receiver's noise spectrum."""

    taps: np.ndarray
    source_frames: int


def build_whitening(
    vacuum_frames: list[SampleBuffer],
    n_taps: int = 513,
    floor_ratio: float = 1e-4,
) -> WhiteningFilter:
    """Whitening filter from the averaged vacuum-noise spectrum.

    The magnitude response is ``1/sqrt(PSD)`` of the frame-averaged vacuum
    periodogram (power whitening), with the PSD floored at ``floor_ratio``
    times its median to avoid amplifying empty band edges.  The realization
    is a windowed linear-phase FIR.
    """
    if len(vacuum_frames) < 10:
        raise ValueError("need at least 10 vacuum frames")
    rate = vacuum_frames[0].rate
    nper = min(4096, min(len(f) for f in vacuum_frames))
    psd = None
    for frame in vacuum_frames:
        if frame.rate != rate:
            raise ValueError("vacuum frames must share a sample rate")
        f, p = sg.welch(frame.samples.real, fs=rate, nperseg=nper)
        psd = p if psd is None else psd + p
    psd /= len(vacuum_frames)
    # the detector response is smooth on MHz scales; a short moving average
    # keeps periodogram estimation noise out of the filter itself
    win = 9
    kernel = np.ones(win) / win
    psd = np.convolve(np.pad(psd, win // 2, mode="edge"), kernel, mode="valid")
    psd = np.maximum(psd, floor_ratio * np.median(psd))
    # target magnitude on the FIR design grid
    grid = np.fft.rfftfreq(n_taps - 1, 1.0 / rate)
    mag = 1.0 / np.sqrt(np.interp(grid, f, psd))
    mag /= np.median(mag)
    taps = np.fft.fftshift(np.fft.irfft(mag))
    taps *= np.hanning(len(taps))
    return WhiteningFilter(taps=taps, source_frames=len(vacuum_frames))


def apply_whitening(buffer: SampleBuffer, filt: WhiteningFilter) -> SampleBuffer:
    out = sg.fftconvolve(buffer.samples, filt.taps, mode="same")
    return buffer.with_samples(out, whitened=True)


def _analytic_in_band(trace: SampleBuffer, band: tuple) -> np.ndarray:
    """Complex analytic signal restricted to a positive-frequency band."""
    n = len(trace)
    spec = np.fft.fft(trace.samples)
    freqs = np.fft.fftfreq(n, 1.0 / trace.rate)
    keep = (freqs >= band[0]) & (freqs <= band[1])
    sel = np.zeros(n, dtype=complex)
    sel[keep] = 2.0 * spec[keep]
    return np.fft.ifft(sel)


def estimate_freq_offset(trace: SampleBuffer, pilot_band: tuple) -> float:
    """Pilot frequency from the slope of the analytic-signal phase.

    Band-passes the trace around the expected pilot, takes the analytic
    signal, unwraps its phase and fits a line; the slope over 2*pi is the
    tone frequency.  Raises :class:`PilotNotFoundError` when no line stands
    clear of the band's noise floor.
    """
    n = len(trace)
    spec = np.fft.rfft(trace.samples.real if not trace.is_complex() else trace.samples.real)
    freqs = np.fft.rfftfreq(n, 1.0 / trace.rate)
    sel = (freqs >= pilot_band[0]) & (freqs <= pilot_band[1])
    if not np.any(sel):
        raise PilotNotFoundError("pilot band contains no spectral bins")
    power = np.abs(spec[sel]) ** 2
    if power.max() < 50.0 * np.median(power):
        raise PilotNotFoundError("no pilot line above the noise floor in band")
    z = _analytic_in_band(trace, pilot_band)
    phase = np.unwrap(np.angle(z))
    t = trace.times()
    t = t - t.mean()
    slope = np.dot(t, phase - phase.mean()) / np.dot(t, t)
    return float(slope / (2 * np.pi))


def downconvert(trace: SampleBuffer, f_hz: float) -> SampleBuffer:
    """Multiply by ``exp(-j 2 pi f t)``; output is complex."""
    out = trace.samples.astype(complex) * np.exp(-2j * np.pi * f_hz * trace.times())
    return trace.with_samples(out, downconverted_by=f_hz)


def extract_pilot(
    baseband: SampleBuffer, pilot_freq_hz: float, half_bw_hz: float = 2e6, decim: int = 50
) -> SampleBuffer:
    """Isolate the pilot line near DC and decimate for phase tracking.

    Brick-wall band-pass around the pilot, shift to DC, then decimate (the
    band-limited signal tolerates plain picking).
    """
    n = len(baseband)
    spec = np.fft.fft(baseband.samples.astype(complex))
    freqs = np.fft.fftfreq(n, 1.0 / baseband.rate)
    keep = np.abs(freqs - pilot_freq_hz) <= half_bw_hz
    sel = np.zeros(n, dtype=complex)
    sel[keep] = spec[keep]
    iso = np.fft.ifft(sel) * np.exp(-2j * np.pi * pilot_freq_hz * baseband.times())
    out = iso[::decim]
    return SampleBuffer(out, baseband.rate / decim, meta={"decim": decim})


@dataclass(frozen=True)
class UkfConfig:
    """Scalar random-walk phase tracker configuration.

    The state is the carrier phase; the measurement model is
    ``amplitude * [cos(theta), sin(theta)]`` against the complex pilot
    sample.  ``process_noise_var`` is per sample at the (decimated) pilot
    rate.
    """

    process_noise_var: float
    measurement_noise_var: float
    amplitude: float = 1.0
    sigma_point_params: tuple = (1.0, 2.0, 0.0)
    initial_phase_var: float = 1.0

    def __post_init__(self):
        if min(self.process_noise_var, self.measurement_noise_var) <= 0:
            raise ValueError("noise variances must be positive")
        if self.initial_phase_var <= 0:
            raise ValueError("initial variance must be positive")


@dataclass
class UkfResult:
    phases: np.ndarray
    diverged: bool
    max_innovation_ratio: float


def estimate_ukf_config(
    pilot: SampleBuffer, linewidth_hz: float, initial_phase_var: float = 1.0
) -> UkfConfig:
    """Derive tracker noise parameters from the pilot itself.

    Amplitude from the mean power after removing an estimate of the additive
    noise; measurement noise per quadrature from the out-of-band residual of
    the decimated pilot spectrum.
    """
    z = pilot.samples
    spec = np.abs(np.fft.fft(z)) ** 2 / len(z)
    # noise floor: median of the upper half of |f|, where the tone cannot sit
    floor = np.median(np.sort(spec)[: len(spec) // 2])
    r = max(floor / 2.0, 1e-30)  # per-quadrature measurement variance
    amp2 = max(np.mean(np.abs(z) ** 2) - 2 * r, 1e-30)
    q = 2 * np.pi * max(linewidth_hz, 1e-3) / pilot.rate
    return UkfConfig(
        process_noise_var=q,
        measurement_noise_var=r,
        amplitude=float(np.sqrt(amp2)),
        initial_phase_var=initial_phase_var,
    )


@njit(cache=True)
def _ukf_kernel(zr, zi, q, r, amp, alpha_s, beta_s, kappa_s, p0, theta0):  # pragma: no cover
    n = zr.shape[0]
    phases = np.empty(n)
    lam = alpha_s * alpha_s * (1.0 + kappa_s) - 1.0
    wm0 = lam / (1.0 + lam)
    wc0 = wm0 + 1.0 - alpha_s * alpha_s + beta_s
    wi = 0.5 / (1.0 + lam)
    theta = theta0
    p = p0
    max_ratio = 0.0
    for k in range(n):
        pbar = p + q
        spread = np.sqrt((1.0 + lam) * pbar)
        t0 = theta
        t1 = theta + spread
        t2 = theta - spread
        h0r, h0i = amp * np.cos(t0), amp * np.sin(t0)
        h1r, h1i = amp * np.cos(t1), amp * np.sin(t1)
        h2r, h2i = amp * np.cos(t2), amp * np.sin(t2)
        zhr = wm0 * h0r + wi * (h1r + h2r)
        zhi = wm0 * h0i + wi * (h1i + h2i)
        # innovation covariance (2x2, symmetric) and cross covariance (1x2)
        d0r, d0i = h0r - zhr, h0i - zhi
        d1r, d1i = h1r - zhr, h1i - zhi
        d2r, d2i = h2r - zhr, h2i - zhi
        s_rr = wc0 * d0r * d0r + wi * (d1r * d1r + d2r * d2r) + r
        s_ii = wc0 * d0i * d0i + wi * (d1i * d1i + d2i * d2i) + r
        s_ri = wc0 * d0r * d0i + wi * (d1r * d1i + d2r * d2i)
        c_r = wi * ((t1 - theta) * d1r + (t2 - theta) * d2r)
        c_i = wi * ((t1 - theta) * d1i + (t2 - theta) * d2i)
        det = s_rr * s_ii - s_ri * s_ri
        k_r = (c_r * s_ii - c_i * s_ri) / det
        k_i = (c_i * s_rr - c_r * s_ri) / det
        nu_r = zr[k] - zhr
        nu_i = zi[k] - zhi
        theta = theta + k_r * nu_r + k_i * nu_i
        p = pbar - (k_r * k_r * s_rr + 2.0 * k_r * k_i * s_ri + k_i * k_i * s_ii)
        if p < 1e-18:
            p = 1e-18
        ratio = (nu_r * nu_r + nu_i * nu_i) / (s_rr + s_ii)
        if ratio > max_ratio:
            max_ratio = ratio
        phases[k] = theta
    return phases, max_ratio


def ukf_phase_track(pilot_baseband: SampleBuffer, cfg: UkfConfig) -> UkfResult:
    """Per-sample carrier phase estimate from the near-DC pilot.

    Divergence (innovation power persistently far beyond the predicted
    covariance) is reported, not raised; the phase sequence has no wrap
    discontinuities because the state evolves continuously.
    """
    z = pilot_baseband.samples.astype(complex)
    if len(z) == 0:
        raise ValueError("empty pilot buffer")
    alpha_s, beta_s, kappa_s = cfg.sigma_point_params
    theta0 = float(np.angle(z[0]))
    phases, max_ratio = _ukf_kernel(
        np.ascontiguousarray(z.real),
        np.ascontiguousarray(z.imag),
        cfg.process_noise_var,
        cfg.measurement_noise_var,
        cfg.amplitude,
        alpha_s,
        beta_s,
        kappa_s,
        cfg.initial_phase_var,
        theta0,
    )
    return UkfResult(phases=phases, diverged=bool(max_ratio > 1e3), max_innovation_ratio=float(max_ratio))


def upsample_phases(phases: np.ndarray, decim: int, n_out: int) -> np.ndarray:
    """Linear interpolation of decimated phase estimates back to full rate."""
    idx = np.arange(len(phases)) * decim
    return np.interp(np.arange(n_out), idx, phases)


def phase_correct(buffer: SampleBuffer, phases: np.ndarray) -> SampleBuffer:
    if len(phases) != len(buffer):
        raise ValueError("phase sequence length must match the buffer")
    out = buffer.samples * np.exp(-1j * np.asarray(phases))
    return buffer.with_samples(out, phase_corrected=True)


@dataclass(frozen=True)
class SyncResult:
    lag: int
    peak_correlation: float
    ambiguous: bool = False


def synchronize(
    received: SymbolFrame,
    reference: SymbolFrame,
    lag_window: tuple | None = None,
) -> SyncResult:
    """Timing offset maximizing the normalized masked cross-correlation.

    The reference frame discloses symbols on its ``reference_mask``; the
    correlation at each candidate lag is normalized by the received energy on
    the shifted mask support, so the peak is a bona fide correlation
    coefficient in [0, 1].  A secondary peak within 3 dB of the main one
    (outside its +-2 symbol neighborhood) marks the result ambiguous.
    """
    y = received.symbols
    mask = reference.reference_mask
    if not np.any(mask):
        raise ValueError("reference frame discloses no symbols")
    r = np.where(mask, reference.symbols, 0.0)
    r_energy = np.sum(np.abs(r) ** 2)

    num = sg.correlate(y, r, mode="full")
    den_sq = sg.correlate(np.abs(y) ** 2, mask.astype(float), mode="full")
    overlap = sg.correlate(np.ones(len(y)), mask.astype(float), mode="full")
    lags = np.arange(-(len(r) - 1), len(y))

    valid = overlap >= 0.95 * mask.sum()
    if lag_window is not None:
        valid &= (lags >= lag_window[0]) & (lags <= lag_window[1])
    if not np.any(valid):
        raise ValueError("no candidate lags inside the search window")
    corr = np.zeros(len(lags))
    ok = valid & (den_sq > 0)
    corr[ok] = np.abs(num[ok]) / (np.sqrt(r_energy) * np.sqrt(den_sq[ok]))

    best = int(np.argmax(corr))
    peak = float(corr[best])
    exclude = np.abs(lags - lags[best]) <= 2
    rest = corr.copy()
    rest[exclude] = 0.0
    second = float(rest.max())
    ambiguous = second**2 > peak**2 / 2.0
    return SyncResult(lag=int(lags[best]), peak_correlation=peak, ambiguous=ambiguous)


def matched_filter_downsample(
    quantum_baseband: SampleBuffer,
    rrc: RrcFilter,
    hpf: HighPassSpec | None,
    lag: int,
) -> SymbolFrame:
    """High-pass (temporal-mode match), RRC matched filter, symbol sampling.

    ``lag`` is the sample index of symbol 0 in the filtered stream.  The
    high-pass stage uses exactly the transmitter's coefficients and is also
    applied to vacuum/electronic traces for calibration consistency; pass
    ``hpf=None`` only for diagnostic loopbacks.
    """
    buf = quantum_baseband
    if hpf is not None:
        buf = highpass(buf, hpf)
    filtered = sg.fftconvolve(buf.samples, rrc.taps, mode="same")
    if lag < 0 or lag >= len(filtered):
        raise ValueError("lag outside buffer")
    symbols = filtered[lag :: rrc.samples_per_symbol]
    baud = quantum_baseband.rate / rrc.samples_per_symbol
    return SymbolFrame(symbols, baud)


def autocorrelation(frame: SymbolFrame, max_lag: int) -> np.ndarray:
    """Normalized symbol autocorrelation, averaged over the two quadratures."""
    if len(frame) <= 10 * max_lag:
        raise ValueError("frame too short for the requested lag range")
    out = np.zeros(max_lag + 1)
    for x in (frame.symbols.real, frame.symbols.imag):
        x = x - x.mean()
        denom = np.dot(x, x)
        for k in range(max_lag + 1):
            out[k] += np.dot(x[: len(x) - k], x[k:]) / denom
    return out / 2.0
