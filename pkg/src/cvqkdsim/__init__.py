"""Desk-scale simulation of a baseband-modulated CV-QKD link.

Subpackages cover the transmitter and receiver DSP chains, the electro-optic
front end and fiber channel, channel-parameter estimation with composable
key-length accounting, multi-edge-type LDPC reconciliation, and Toeplitz
privacy amplification.
"""

__version__ = "0.1.0"

from .core import Decibel, Pnu, RandomSource, SampleBuffer, SymbolFrame

__all__ = [
    "Decibel",
    "Pnu",
    "RandomSource",
    "SampleBuffer",
    "SymbolFrame",
    "__version__",
]
