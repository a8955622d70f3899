"""Discriminator-informed ensemble Gaussian mixture filtering.

Nonlinear Bayesian filtering on chaotic toy systems (Ikeda map, Lorenz '63)
with three analysis schemes: a linearized stochastic EnKF, the ensemble
Gaussian mixture filter, and its discriminator-informed variant whose
resampling rejects non-physical candidates.  Discriminators come either from
the exact Ikeda inverse map or from a normalizing flow trained on attractor
data.
"""

from . import _kernels
from .rng import RngStream

__version__ = "0.1.0"

KERNEL_BACKEND = _kernels.BACKEND

__all__ = ["RngStream", "KERNEL_BACKEND", "__version__"]
