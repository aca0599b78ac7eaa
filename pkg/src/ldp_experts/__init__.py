"""Locally private prediction with expert advice.

RW-FTPL, RW-AdaBatch and RW-Meta over Gaussian-perturbed gain streams, an
f-DP accounting engine for amplification by batching, and a Monte Carlo
harness that checks the accounting empirically.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    GainVector,
    InvalidInputError,
    NoisyGainVector,
    NumericalError,
    PrivacyParams,
    RoundSeed,
    argmax_tiebreak,
    default_eta,
    gap,
    gaussian_perturb,
)
