"""Numerical laboratory for the q-log loss family.

Submodules: ``qcore`` (losses and the escort minimizer), ``models``
(toy latent-sequence models with exact enumeration), ``estimators``
(plug-in, leave-one-out and resampling gradient estimators),
``dynamics`` (scalar flows and their integrator), ``lab`` (Monte Carlo
bias/variance harness), ``trainer`` (toy training loop) and ``cli``.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ColdZeroError,
    ConfigError,
    DegeneratePoolError,
    DomainError,
    EnumerationCapError,
    JQError,
    ParticleDegeneracyError,
    UnreachableTargetError,
)

__all__ = [
    "__version__",
    "ColdZeroError",
    "ConfigError",
    "DegeneratePoolError",
    "DomainError",
    "EnumerationCapError",
    "JQError",
    "ParticleDegeneracyError",
    "UnreachableTargetError",
]
