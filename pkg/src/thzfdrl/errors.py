"""Exception hierarchy shared by every module.

Each class carries a short ``category`` string that the CLI prints as the
machine-readable part of its one-line error report.
"""


class ThzError(Exception):
    category = "error"


class DomainError(ThzError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""

    category = "domain"


class ConfigError(ThzError, ValueError):
    category = "config"


class DimensionError(ThzError, ValueError):
    category = "dimension"


class ConstraintError(ThzError, ValueError):
    """A beamformer violates the per-BS power constraint."""

    category = "constraint"


class ProtocolError(ThzError, ValueError):
    """Malformed or inconsistent federation payloads."""

    category = "protocol"


class InfeasibleError(ThzError, ValueError):
    category = "infeasible"
