"""Transmitter DSP: Gaussian symbol generation, pulse shaping, temporal mode
shaping, pilot multiplexing and DAC quantization.

The chain mirrors a digital coherent transmitter: draw discretized Gaussian
symbols by inversion sampling, upsample and RRC-shape them, high-pass the
baseband signal to carve the temporal mode, multiplex a pilot tone, and
quantize the real/imaginary drive waveforms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sg
from scipy.special import ndtr

from .core import RandomSource, SampleBuffer, SymbolFrame, draw_uniform_u32

__all__ = [
    "GaussianConstellation",
    "RrcFilter",
    "HighPassSpec",
    "PilotSpec",
    "inversion_sample",
    "build_symbols",
    "upsample_shape",
    "highpass",
    "add_pilot",
    "quantize_dac",
]


@dataclass(frozen=True)
class GaussianConstellation:
    """Discretized Gaussian constellation for one quadrature.

    ``2**bits_per_quadrature`` levels sit at the midpoints of equal-width bins
    spanning ``+-coverage_sigmas/2`` standard deviations; bin probabilities
    are Gaussian-CDF differences at the bin edges, renormalized over the
    covered range.  Integer codes run from ``-2**(bits-1)`` to
    ``2**(bits-1)-1`` and map to levels ``(code + 0.5) * delta`` so the
    constellation is exactly symmetric about zero.
    """

    bits_per_quadrature: int = 6
    coverage_sigmas: float = 7.0
    target_variance: float = 1.0

    def __post_init__(self):
        if self.bits_per_quadrature < 1:
            raise ValueError("need at least 1 bit per quadrature")
        if self.coverage_sigmas <= 0:
            raise ValueError("coverage must be positive")

    @property
    def n_levels(self) -> int:
        return 2**self.bits_per_quadrature

    def _tables(self):
        return _constellation_tables(self.bits_per_quadrature, self.coverage_sigmas)

    def levels_unit_sigma(self) -> np.ndarray:
        """Level positions in units of the underlying Gaussian's sigma."""
        return self._tables()[0]

    def probabilities(self) -> np.ndarray:
        return self._tables()[1]

    def cdf(self) -> np.ndarray:
        return self._tables()[2]

    def discrete_variance_unit_sigma(self) -> float:
        """Exact variance of the discrete law, in sigma**2 units."""
        levels, probs, _ = self._tables()
        return float(np.sum(probs * levels**2))

    def codes_to_levels(self, codes: np.ndarray) -> np.ndarray:
        """Map integer codes to amplitudes scaled to ``target_variance``."""
        levels = self.levels_unit_sigma()
        scale = np.sqrt(self.target_variance / self.discrete_variance_unit_sigma())
        return levels[np.asarray(codes) + self.n_levels // 2] * scale


@lru_cache(maxsize=16)
def _constellation_tables(bits: int, coverage: float):
    n = 2**bits
    half = coverage / 2.0
    edges = np.linspace(-half, half, n + 1)
    levels = 0.5 * (edges[:-1] + edges[1:])
    probs = np.diff(ndtr(edges))
    probs = probs / probs.sum()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return levels, probs, cdf


def inversion_sample(
    src: RandomSource, constellation: GaussianConstellation, n: int
) -> np.ndarray:
    """Draw ``n`` constellation codes by CDF inversion of 32-bit uniforms."""
    if n <= 0:
        raise ValueError("n must be > 0")
    u = draw_uniform_u32(src, n)
    cdf = constellation.cdf()
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, constellation.n_levels - 1)
    return (idx - constellation.n_levels // 2).astype(np.int64)


def build_symbols(
    src: RandomSource,
    constellation: GaussianConstellation,
    n: int,
    baud: float,
    ref_fraction: float = 0.0,
) -> SymbolFrame:
    """Quantum symbols ``A_i = I_i + j Q_i`` from independent I/Q streams.

    A fraction ``ref_fraction`` of positions is marked as disclosed reference
    symbols (used downstream for synchronization), chosen from a third
    independent stream.
    """
    codes_i = inversion_sample(src.substream(0), constellation, n)
    codes_q = inversion_sample(src.substream(1), constellation, n)
    symbols = constellation.codes_to_levels(codes_i) + 1j * constellation.codes_to_levels(codes_q)
    mask = np.zeros(n, dtype=bool)
    if ref_fraction > 0:
        n_ref = max(1, int(round(ref_fraction * n)))
        pos = src.substream(2).generator().choice(n, size=n_ref, replace=False)
        mask[pos] = True
    return SymbolFrame(symbols, baud, mask)


@dataclass(frozen=True)
class RrcFilter:
    """Root-raised-cosine pulse shaping filter with unit-energy taps."""

    rolloff: float
    span_symbols: int
    samples_per_symbol: int
    taps: np.ndarray = field(repr=False, default=None)

    @classmethod
    def design(cls, rolloff: float = 0.2, span_symbols: int = 32, samples_per_symbol: int = 50) -> "RrcFilter":
        if not 0 < rolloff <= 1:
            raise ValueError("rolloff must be in (0, 1]")
        taps = _rrc_taps(rolloff, span_symbols, samples_per_symbol)
        return cls(rolloff, span_symbols, samples_per_symbol, taps)

    @property
    def group_delay_samples(self) -> int:
        return (len(self.taps) - 1) // 2


def _rrc_taps(beta: float, span: int, sps: int) -> np.ndarray:
    n = span * sps
    t = np.arange(-n / 2, n / 2 + 1) / sps
    h = np.zeros_like(t)
    h[np.abs(t) < 1e-12] = 1 - beta + 4 * beta / np.pi
    # singular points t = +-1/(4 beta)
    sing = np.abs(np.abs(4 * beta * t) - 1) < 1e-9
    h[sing] = (beta / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    rest = ~(sing | (np.abs(t) < 1e-12))
    tr = t[rest]
    h[rest] = (
        np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    ) / (np.pi * tr * (1 - (4 * beta * tr) ** 2))
    return h / np.sqrt(np.sum(h**2))


def upsample_shape(frame: SymbolFrame, rrc: RrcFilter) -> SampleBuffer:
    """Zero-stuff to the sample rate and convolve with the RRC pulse.

    Output rate is ``samples_per_symbol * baud``; symbol ``i`` peaks at sample
    ``i * sps + group_delay`` (recorded in the buffer metadata together with
    the occupied quantum band).
    """
    sps = rrc.samples_per_symbol
    rate = sps * frame.baud
    shaped = sg.upfirdn(rrc.taps, frame.symbols, up=sps)
    half_band = frame.baud * (1 + rrc.rolloff) / 2.0
    return SampleBuffer(
        shaped,
        rate,
        meta={
            "quantum_band": (-half_band, half_band),
            "symbol0_offset": rrc.group_delay_samples,
            "sps": sps,
            "baud": frame.baud,
        },
    )


@dataclass(frozen=True)
class HighPassSpec:
    """Butterworth high-pass used for temporal mode shaping.

    The filter is designed as a standard Butterworth of the given order and
    cutoff, then applied zero-phase through a linear-phase FIR realization of
    its magnitude response.  Zero-phase application is what keeps the
    symbol-level intersymbol correlations monotone in the filter order; a
    causal single-pass realization distorts the phase near DC enough to break
    that ordering.
    """

    family: str = "butterworth"
    order: int = 5
    cutoff_hz: float = 190e3
    rate: float = 1e9

    def __post_init__(self):
        if self.family != "butterworth":
            raise ValueError(f"unsupported filter family {self.family!r}")
        if not 0 < self.cutoff_hz < self.rate / 2:
            raise ValueError("cutoff must sit below Nyquist")

    def sos(self) -> np.ndarray:
        sos = sg.butter(self.order, self.cutoff_hz, "highpass", fs=self.rate, output="sos")
        # reject unstable realizations outright
        _, poles, _ = sg.sos2zpk(sos)
        if np.any(np.abs(poles) >= 1.0):
            raise ValueError("unstable high-pass realization (pole on/outside unit circle)")
        return sos

    def fir_taps(self) -> np.ndarray:
        return _hpf_fir_taps(self.family, self.order, self.cutoff_hz, self.rate)

    def analytic_magnitude(self, f_hz) -> np.ndarray:
        """|H(f)| of the analog prototype: x**n / sqrt(1 + x**2n), x = f/fc."""
        x = np.abs(np.asarray(f_hz, dtype=float)) / self.cutoff_hz
        xn = x**self.order
        return xn / np.sqrt(1.0 + xn**2)


@lru_cache(maxsize=32)
def _hpf_fir_taps(family: str, order: int, cutoff_hz: float, rate: float) -> np.ndarray:
    spec = HighPassSpec(family, order, cutoff_hz, rate)
    sos = spec.sos()
    # Window length long enough for the slowest Butterworth pole to ring out;
    # capped to keep convolutions cheap at GHz rates.
    n_fft = int(2 ** np.ceil(np.log2(max(1024, 64 * rate / cutoff_hz))))
    n_fft = min(n_fft, 2**17)
    f = np.fft.rfftfreq(n_fft, 1.0 / rate)
    _, h = sg.sosfreqz(sos, worN=f, fs=rate)
    taps = np.fft.fftshift(np.fft.irfft(np.abs(h)))
    # force an exact DC null; the uniform offset this adds is ~1e-5 in gain
    taps = taps - taps.sum() / len(taps)
    return taps


def highpass(buffer: SampleBuffer, spec: HighPassSpec) -> SampleBuffer:
    """Zero-phase high-pass; applied identically to real and imaginary parts."""
    if abs(spec.rate - buffer.rate) > 1e-6 * buffer.rate:
        raise ValueError("filter and buffer rates differ")
    taps = spec.fir_taps()
    out = sg.fftconvolve(buffer.samples, taps, mode="same")
    if not buffer.is_complex():
        out = out.real
    return buffer.with_samples(out, hpf=(spec.family, spec.order, spec.cutoff_hz))


@dataclass(frozen=True)
class PilotSpec:
    """Frequency-multiplexed reference tone."""

    freq_hz: float = 60e6
    amplitude_ratio: float = 10.0


def add_pilot(
    buffer: SampleBuffer, pilot: PilotSpec, amplitude: float | None = None
) -> SampleBuffer:
    """Multiplex a complex pilot tone with the quantum baseband signal.

    Pilot amplitude defaults to ``amplitude_ratio`` times the quantum-signal
    RMS, so the tone dominates the composite spectrum without touching the
    quantum band; pass ``amplitude`` explicitly for signal-free buffers.
    Fails if the pilot would fall inside the occupied quantum band or above
    Nyquist.
    """
    if pilot.freq_hz >= buffer.rate / 2:
        raise ValueError("pilot above Nyquist")
    band = buffer.meta.get("quantum_band")
    if band is not None and band[0] <= pilot.freq_hz <= band[1]:
        raise ValueError("pilot tone falls inside the quantum band")
    if amplitude is None:
        rms = np.sqrt(np.mean(np.abs(buffer.samples) ** 2))
        amplitude = pilot.amplitude_ratio * rms
    amp = amplitude
    t = buffer.times()
    out = buffer.samples.astype(complex) + amp * np.exp(2j * np.pi * pilot.freq_hz * t)
    return buffer.with_samples(out, pilot_freq=pilot.freq_hz, pilot_amplitude=amp)


def quantize_dac(
    buffer: SampleBuffer, bits: int, full_scale: float | None = None
) -> tuple[SampleBuffer, SampleBuffer]:
    """Split a complex drive waveform into two uniformly quantized real rails.

    Quantization is mid-tread over ``+-full_scale`` (default: the waveform
    peak, so nothing clips).  Codes run from ``-2**(bits-1)`` to
    ``2**(bits-1)-1``; a clipping fraction above 1e-4 triggers a warning and
    is always recorded in the output metadata.
    """
    if bits < 2:
        raise ValueError("need at least 2 bits")
    samples = buffer.samples.astype(complex)
    rails = (samples.real, samples.imag)
    if full_scale is None:
        full_scale = max(np.max(np.abs(r)) for r in rails)
        if full_scale == 0:
            full_scale = 1.0
    delta = full_scale / 2 ** (bits - 1)
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1

    out = []
    for rail in rails:
        codes = np.round(rail / delta)
        clipped = np.count_nonzero((codes < lo) | (codes > hi))
        clip_fraction = clipped / len(codes)
        if clip_fraction > 1e-4:
            warnings.warn(
                f"DAC clipping fraction {clip_fraction:.2e} exceeds 1e-4", stacklevel=2
            )
        codes = np.clip(codes, lo, hi)
        out.append(
            buffer.with_samples(
                codes * delta,
                dac_bits=bits,
                dac_full_scale=full_scale,
                clip_fraction=clip_fraction,
            )
        )
    return out[0], out[1]
