"""Exception hierarchy shared by every module."""


class GlbSimError(Exception):
    """Base class for all errors raised by glbsim."""


class NumericDomainError(GlbSimError, ValueError):
    """Non-finite or out-of-domain numeric input."""


class InternalConsistencyError(GlbSimError, RuntimeError):
    """A cached quantity disagrees with what the math guarantees."""


class ConvergenceError(GlbSimError, RuntimeError):
    """An iterative solver failed to meet its termination criterion."""


class DatasetError(GlbSimError, ValueError):
    """Malformed, missing or unusable corpus file."""


class ProtocolMisuseError(GlbSimError, ValueError):
    """An environment or ledger was driven outside its contract."""


class ConfigError(GlbSimError, ValueError):
    """Invalid run configuration."""


class RunAbort(GlbSimError, RuntimeError):
    """A simulation aborted; carries the (t, i) coordinates where it failed."""

    def __init__(self, message, t=None, i=None):
        self.t = t
        self.i = i
        where = "" if t is None else f" at t={t}, i={i}"
        super().__init__(f"{message}{where}")
