"""Shared value types, unit conversions and the deterministic randomness source.

Conventions used throughout the package:

* Photon-number units (PNU) quantify noise/modulation variances per
  quadrature relative to the shot-noise unit fixed by the receiver
  calibration; 1 mPNU = 1e-3 PNU.
* All waveform amplitudes are unitless until the calibration stage
  normalizes measured variances to shot-noise units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pnu",
    "Decibel",
    "SampleBuffer",
    "SymbolFrame",
    "RandomSource",
    "db_to_linear",
    "linear_to_db",
]


@dataclass(frozen=True)
class Pnu:
    """Nonnegative variance in photon-number units."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"PNU value must be >= 0, got {self.value}")

    @classmethod
    def from_mpnu(cls, value: float) -> "Pnu":
        return cls(value * 1e-3)

    @property
    def mpnu(self) -> float:
        return self.value * 1e3


@dataclass(frozen=True)
class Decibel:
    """A ratio expressed in dB."""

    value: float

    @property
    def linear(self) -> float:
        return db_to_linear(self.value)


def db_to_linear(x) -> float:
    """Power ratio for ``x`` dB, i.e. 10**(x/10)."""
    if isinstance(x, Decibel):
        x = x.value
    return 10.0 ** (np.asarray(x) / 10.0) if np.ndim(x) else 10.0 ** (float(x) / 10.0)


def linear_to_db(x) -> float:
    """Inverse of :func:`db_to_linear`; requires a positive ratio."""
    x = np.asarray(x) if np.ndim(x) else float(x)
    if np.any(np.asarray(x) <= 0):
        raise ValueError("dB of a non-positive ratio is undefined")
    return 10.0 * np.log10(x)


@dataclass
class SampleBuffer:
    """Uniformly sampled real or complex waveform.

    The samples array is treated as immutable once constructed; operations
    return new buffers.  ``meta`` carries free-form diagnostics (clipping
    fractions, symbol variances, ...) that travel with the waveform.
    """

    samples: np.ndarray
    rate: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if not self.rate > 0:
            raise ValueError("sample rate must be > 0")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate

    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.rate

    def is_complex(self) -> bool:
        return np.iscomplexobj(self.samples)

    def with_samples(self, samples: np.ndarray, **meta) -> "SampleBuffer":
        merged = dict(self.meta)
        merged.update(meta)
        return SampleBuffer(samples, self.rate, merged)


@dataclass
class SymbolFrame:
    """Ordered complex quantum symbols plus the disclosed-reference mask."""

    symbols: np.ndarray
    baud: float
    reference_mask: np.ndarray | None = None

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=complex)
        if not self.baud > 0:
            raise ValueError("baud must be > 0")
        if self.reference_mask is None:
            self.reference_mask = np.zeros(len(self.symbols), dtype=bool)
        else:
            self.reference_mask = np.asarray(self.reference_mask, dtype=bool)
        if len(self.reference_mask) != len(self.symbols):
            raise ValueError("reference_mask length must equal symbols length")

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def i(self) -> np.ndarray:
        return self.symbols.real

    @property
    def q(self) -> np.ndarray:
        return self.symbols.imag

    def quadrature_variance(self) -> float:
        """Mean per-quadrature variance about the empirical mean."""
        return 0.5 * (np.var(self.symbols.real) + np.var(self.symbols.imag))

    def reference_symbols(self) -> np.ndarray:
        return self.symbols[self.reference_mask]


# Security parameter recorded for the randomness source; it is carried as
# metadata into the key accounting, never enforced by the generator itself.
DEFAULT_EPS_QRNG = 2e-6


@dataclass(frozen=True)
class RandomSource:
    """Deterministic, stream-separable randomness source.

    Identical ``(seed, stream_id)`` pairs reproduce identical sequences;
    distinct stream ids give statistically independent streams (counter-based
    Philox keyed through ``SeedSequence`` spawn keys).  Stands in for the
    hardware QRNG, whose security parameter is carried as ``eps_qrng``.
    """

    seed: bytes = b"\x00"
    stream_id: int = 0
    eps_qrng: float = DEFAULT_EPS_QRNG

    @classmethod
    def from_hex(cls, hex_seed: str, stream_id: int = 0) -> "RandomSource":
        return cls(bytes.fromhex(hex_seed), stream_id)

    def stream(self, stream_id: int) -> "RandomSource":
        """Sibling source with the same seed and a different stream id."""
        return RandomSource(self.seed, stream_id, self.eps_qrng)

    def substream(self, *indices: int) -> "RandomSource":
        """Derived stream for nested work items (frame index, purpose, ...).

        The indices are folded into a single stream id through a fixed-radix
        packing so that derivations are collision-free for indices < 2**20.
        """
        sid = self.stream_id
        for ix in indices:
            if not 0 <= ix < 2**20:
                raise ValueError("substream index out of range")
            sid = sid * 2**20 + ix + 1
        return RandomSource(self.seed, sid, self.eps_qrng)

    def generator(self) -> np.random.Generator:
        entropy = int.from_bytes(self.seed, "big") if self.seed else 0
        ss = np.random.SeedSequence(entropy, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))


def draw_uniform_bits(src: RandomSource, n_bits: int) -> np.ndarray:
    """``n_bits`` uniform bits as a uint8 0/1 array, deterministic per source."""
    if n_bits <= 0:
        raise ValueError("n_bits must be > 0")
    n_bytes = (n_bits + 7) // 8
    raw = src.generator().integers(0, 256, size=n_bytes, dtype=np.uint8)
    bits = np.unpackbits(raw)
    return bits[:n_bits]


def draw_uniform_u32(src: RandomSource, n: int) -> np.ndarray:
    """``n`` uniform draws on [0, 1) with 32-bit granularity."""
    if n <= 0:
        raise ValueError("n must be > 0")
    ints = src.generator().integers(0, 2**32, size=n, dtype=np.uint64)
    return (ints.astype(np.float64) + 0.5) / 2**32
