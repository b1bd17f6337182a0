"""Electro-optic front end: IQ modulator models, attenuation, fiber channel
and RF heterodyne detection.

Everything is simulated in the rotating frame of the transmitter laser, so
optical frequencies never appear; the local-oscillator detuning shows up as a
complex-envelope rotation before the real photocurrent is formed.

Unit convention: one unit of ADC-trace variance equals the per-sample shot
noise (`SHOT_TRACE_VARIANCE`).  Excess channel noise in photon-number units
is injected as complex white noise with per-quadrature variance
``u * SHOT_TRACE_VARIANCE`` at the channel output, which calibrates to
exactly ``tau * u`` shot-noise units at the receiver DSP output.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import signal as sg

from .core import Decibel, RandomSource, SampleBuffer

__all__ = [
    "IqModulatorParams",
    "ChannelParams",
    "DetectorParams",
    "MeasurementKind",
    "CalibrationScale",
    "iq_transfer_exact",
    "baseband_approx",
    "ossb_approx",
    "band_power",
    "sideband_leakage",
    "attenuate_to_va",
    "propagate",
    "heterodyne_detect",
    "SHOT_TRACE_VARIANCE",
]

SHOT_TRACE_VARIANCE = 1.0


@dataclass(frozen=True)
class IqModulatorParams:
    """Operating point of a dual-nested Mach-Zehnder IQ modulator.

    ``v_dc*`` are the bias voltages of the two MZM arms and the phase
    section; ``mu1/mu2`` are the small-signal modulation indices (rad/V),
    ``phi1/phi2`` the bias phase errors of the linearized model and
    ``delta_sideband`` the effective image-sideband index of the
    single-sideband approximation.
    """

    v_pi: float = 5.0
    v_pi_pm: float | None = None
    v_dc1: float = -5.0
    v_dc2: float = -5.0
    v_dc3: float = -5.0
    mu1: float | None = None
    mu2: float | None = None
    phi1: float = 0.0
    phi2: float = 0.0
    delta_sideband: float = 0.0
    dither_freqs: tuple = (1e3, 1.1e3)
    dither_amps_v: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.v_pi > 0:
            raise ValueError("v_pi must be positive")
        if abs(self.phi1) >= 0.2 or abs(self.phi2) >= 0.2:
            raise ValueError("bias phase errors outside the linear regime")
        if self.delta_sideband > self.mu:
            raise ValueError("image-sideband index must stay below mu")

    @property
    def pm_halfwave(self) -> float:
        return self.v_pi if self.v_pi_pm is None else self.v_pi_pm

    @property
    def mu_1(self) -> float:
        return np.pi / (2 * self.v_pi) if self.mu1 is None else self.mu1

    @property
    def mu_2(self) -> float:
        return np.pi / (2 * self.v_pi) if self.mu2 is None else self.mu2

    @property
    def mu(self) -> float:
        return 0.5 * (self.mu_1 + self.mu_2)

    @property
    def delta_carrier(self) -> complex:
        """Residual carrier amplitude of the linearized dark-fringe model."""
        return 0.5 * (self.phi1 + 1j * self.phi2)

    @classmethod
    def dark_fringe(cls, v_pi: float = 5.0, phi1: float = 0.0, phi2: float = 0.0, **kw) -> "IqModulatorParams":
        """Bias both MZMs at the dark fringe (up to the given phase errors)
        and the phase section at quadrature, the baseband operating point."""
        v_pi_pm = kw.pop("v_pi_pm", None)
        pm = v_pi if v_pi_pm is None else v_pi_pm
        return cls(
            v_pi=v_pi,
            v_pi_pm=v_pi_pm,
            v_dc1=-v_pi + phi1 * 2 * v_pi / np.pi,
            v_dc2=-v_pi + phi2 * 2 * v_pi / np.pi,
            v_dc3=-pm,
            phi1=phi1,
            phi2=phi2,
            **kw,
        )


def iq_transfer_exact(
    v_rf1: SampleBuffer, v_rf2: SampleBuffer, p: IqModulatorParams
) -> SampleBuffer:
    """Exact interferometric transfer of the IQ modulator for unit input field.

    Bias dither (the automatic bias controller's probe tones) is modeled as
    sinusoidal additions to the two MZM bias voltages.
    """
    if len(v_rf1) != len(v_rf2) or v_rf1.rate != v_rf2.rate:
        raise ValueError("RF drive buffers must share length and rate")
    vdc1 = p.v_dc1
    vdc2 = p.v_dc2
    if any(a != 0 for a in p.dither_amps_v):
        t = v_rf1.times()
        vdc1 = vdc1 + p.dither_amps_v[0] * np.sin(2 * np.pi * p.dither_freqs[0] * t)
        vdc2 = vdc2 + p.dither_amps_v[1] * np.sin(2 * np.pi * p.dither_freqs[1] * t)
    arm1 = np.cos(np.pi * (v_rf1.samples + vdc1) / (2 * p.v_pi))
    arm2 = np.cos(np.pi * (v_rf2.samples + vdc2) / (2 * p.v_pi))
    pm = np.exp(-1j * np.pi * p.v_dc3 / (2 * p.pm_halfwave))
    out = 0.5 * (arm1 + arm2 * pm)
    return v_rf1.with_samples(out)


def baseband_approx(
    i_drive: SampleBuffer, q_drive: SampleBuffer, p: IqModulatorParams
) -> SampleBuffer:
    """Linearized dark-fringe envelope: (mu1 I + j mu2 Q)/2 + Delta.

    This is the baseband operating point of the modulator; by construction
    it contains no mirrored copy of the drive spectrum, only the residual
    carrier offset Delta from the bias errors.
    """
    out = 0.5 * (p.mu_1 * i_drive.samples + 1j * p.mu_2 * q_drive.samples) + p.delta_carrier
    return i_drive.with_samples(out)


def ossb_approx(alpha: SampleBuffer, p: IqModulatorParams, omega_rf: float) -> SampleBuffer:
    """Single-sideband envelope with finite image suppression.

    ``omega_rf`` is the electrical upconversion frequency in rad/s.  The
    output carries the signal sideband at ``-omega``, an image sideband at
    ``+omega`` scaled by ``delta_sideband/2``, and the residual carrier.
    """
    if omega_rf <= 0:
        raise ValueError("omega_rf must be positive")
    t = alpha.times()
    rot = np.exp(-1j * omega_rf * t)
    a = alpha.samples
    out = 0.5 * p.mu * a * rot + 0.5 * p.delta_sideband * np.conj(a) / rot + p.delta_carrier
    return alpha.with_samples(out)


def band_power(buffer: SampleBuffer, band: tuple) -> float:
    """Windowed-periodogram power inside a (possibly negative) frequency band."""
    f_lo, f_hi = band
    if not f_hi > f_lo:
        raise ValueError("empty band")
    x = buffer.samples
    # 4-term Blackman-Harris: leakage floor deep enough to resolve -120 dBc
    w = sg.windows.blackmanharris(len(x))
    spec = np.fft.fft(x * w)
    freqs = np.fft.fftfreq(len(x), 1.0 / buffer.rate)
    sel = (freqs >= f_lo) & (freqs < f_hi)
    if not np.any(sel):
        raise ValueError("band contains no spectral bins")
    return float(np.sum(np.abs(spec[sel]) ** 2) / np.sum(w**2) / len(x))


def sideband_leakage(
    field: SampleBuffer, signal_band: tuple, image_band: tuple
) -> Decibel:
    """Image-band to signal-band power ratio in dB."""
    if max(signal_band[0], image_band[0]) < min(signal_band[1], image_band[1]):
        raise ValueError("signal and image bands must be disjoint")
    p_sig = band_power(field, signal_band)
    p_img = band_power(field, image_band)
    if p_sig <= 0 or not np.isfinite(p_sig):
        raise ValueError("signal band carries no power")
    if p_img <= 0:
        # below double precision; report the numeric floor instead of -inf
        p_img = np.finfo(float).tiny
    return Decibel(10.0 * np.log10(p_img / p_sig))


@dataclass(frozen=True)
class CalibrationScale:
    """Conversion from quantum-band waveform power to modulation strength.

    Obtained from a back-to-back reference measurement: ``pnu_per_power``
    maps the band power of the modulated field to the mean photon number it
    produces at the calibrated receiver.
    """

    pnu_per_power: float
    band: tuple

    def measure(self, field: SampleBuffer) -> float:
        return self.pnu_per_power * band_power(field, self.band)


def attenuate_to_va(field: SampleBuffer, target_pnu: float, cal: CalibrationScale) -> SampleBuffer:
    """Rescale the modulated field so its modulation strength equals the target.

    Idempotent under re-application and invariant to prior uniform scalings
    of the field, because the current strength is re-measured from the
    waveform itself.
    """
    if target_pnu <= 0:
        raise ValueError("target modulation strength must be positive")
    current = cal.measure(field)
    if current <= 0:
        raise ValueError("field carries no quantum-band power")
    factor = np.sqrt(target_pnu / current)
    return field.with_samples(field.samples * factor, va_target_pnu=target_pnu)


@dataclass(frozen=True)
class ChannelParams:
    """Untrusted channel: transmittance, laser phase noise, LO detuning and
    excess noise (photon-number units, referred to the channel output)."""

    eta: float = 0.24
    linewidth_hz: float = 200.0
    freq_offset_hz: float = 200e6
    u_excess_pnu: float = 0.0

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must lie in [0, 1]")
        if self.linewidth_hz < 0:
            raise ValueError("linewidth must be >= 0")
        if self.u_excess_pnu < 0:
            raise ValueError("excess noise must be >= 0")


def propagate(field: SampleBuffer, ch: ChannelParams, src: RandomSource) -> SampleBuffer:
    """Fiber channel: amplitude loss, Wiener phase noise, LO detuning and
    white excess noise.

    The phase noise increments have variance ``2 pi linewidth dt`` (combined
    transmitter+LO linewidth); the detuning appears here because the
    downstream detector measures in the LO frame.
    """
    n = len(field)
    dt = 1.0 / field.rate
    out = np.sqrt(ch.eta) * field.samples.astype(complex)
    if ch.linewidth_hz > 0:
        rng = src.substream(0).generator()
        increments = rng.normal(0.0, np.sqrt(2 * np.pi * ch.linewidth_hz * dt), size=n)
        theta = np.cumsum(increments)
        out = out * np.exp(1j * theta)
    if ch.freq_offset_hz != 0.0:
        out = out * np.exp(2j * np.pi * ch.freq_offset_hz * field.times())
    if ch.u_excess_pnu > 0:
        rng = src.substream(1).generator()
        sigma = np.sqrt(ch.u_excess_pnu * SHOT_TRACE_VARIANCE)
        out = out + rng.normal(0.0, sigma, size=n) + 1j * rng.normal(0.0, sigma, size=n)
    return field.with_samples(out, eta=ch.eta)


class MeasurementKind(enum.Enum):
    SIGNAL = "signal"
    VACUUM = "vacuum"
    ELECTRONIC = "electronic"


@dataclass(frozen=True)
class DetectorParams:
    """Trusted receiver: efficiency, noise clearance, bandwidth and ADC."""

    tau: float = 0.68
    elec_clearance_db: float = 15.0
    bandwidth_hz: float = 365e6
    adc_rate: float = 1e9
    adc_bits: int = 16

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.elec_clearance_db <= 0:
            raise ValueError("clearance must be positive")

    def response_sos(self) -> np.ndarray:
        return sg.butter(2, self.bandwidth_hz, "lowpass", fs=self.adc_rate, output="sos")

    @property
    def electronic_trace_variance(self) -> float:
        return SHOT_TRACE_VARIANCE * 10 ** (-self.elec_clearance_db / 10.0)


def heterodyne_detect(
    field: SampleBuffer,
    det: DetectorParams,
    kind: MeasurementKind,
    src: RandomSource,
    lo_offset_hz: float = 0.0,
) -> SampleBuffer:
    """RF heterodyne photocurrent, digitized.

    Forms ``sqrt(tau) * Re{field * exp(j 2 pi lo_offset t)}``, adds white shot
    noise (absent for electronic-only measurements) and white electronic
    noise at the configured clearance, shapes everything with the detector's
    second-order response, and quantizes at the ADC resolution.  For
    ``VACUUM`` the input field is ignored; for ``ELECTRONIC`` both the field
    and the shot noise are absent.
    """
    if abs(field.rate - det.adc_rate) > 1e-6 * det.adc_rate:
        raise ValueError("field rate must match the ADC rate")
    n = len(field)
    if kind is MeasurementKind.SIGNAL:
        env = field.samples.astype(complex)
        if lo_offset_hz:
            env = env * np.exp(2j * np.pi * lo_offset_hz * field.times())
        trace = np.sqrt(det.tau) * env.real
    else:
        trace = np.zeros(n)
    if kind is not MeasurementKind.ELECTRONIC:
        rng = src.substream(0).generator()
        trace = trace + rng.normal(0.0, np.sqrt(SHOT_TRACE_VARIANCE), size=n)
    rng_e = src.substream(1).generator()
    trace = trace + rng_e.normal(0.0, np.sqrt(det.electronic_trace_variance), size=n)
    trace = sg.sosfilt(det.response_sos(), trace)
    trace = _adc_quantize(trace, det.adc_bits)
    return SampleBuffer(trace, det.adc_rate, meta={"kind": kind.value, "tau": det.tau})


def _adc_quantize(trace: np.ndarray, bits: int) -> np.ndarray:
    full_scale = np.max(np.abs(trace))
    if full_scale == 0:
        return trace
    delta = full_scale / 2 ** (bits - 1)
    codes = np.clip(np.round(trace / delta), -(2 ** (bits - 1)), 2 ** (bits - 1) - 1)
    return codes * delta
