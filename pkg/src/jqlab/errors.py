"""Exception hierarchy shared by all modules."""


class JQError(Exception):
    """Base class for all library errors."""


class DomainError(JQError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ColdZeroError(DomainError):
    """A success probability is exactly zero (or underflowed to zero).

    Losses and amplification factors diverge there, so it is reported
    instead of silently producing ``inf``.
    """


class EnumerationCapError(JQError):
    """Latent space too large for exact enumeration."""


class DegeneratePoolError(JQError):
    """Every likelihood weight in a sample pool is zero."""


class ParticleDegeneracyError(DegeneratePoolError):
    """Importance resampling impossible: no particle carries weight."""


class UnreachableTargetError(DomainError):
    """Requested crossing level lies at or beyond a flow's equilibrium."""


class ConfigError(JQError, ValueError):
    """Malformed or unknown configuration."""
