from typing import Any, Optional


class ShardSimError(Exception):
    """Root of every error raised by the simulator library."""


class ConfigError(ShardSimError):
    """The run configuration is malformed or names something unknown."""


class UsageError(ShardSimError):
    """A caller broke an operation precondition."""


class InvariantViolation(ShardSimError):
    """A checked invariant does not hold."""


class ProtocolViolation(InvariantViolation):
    """A handler observed a protocol state that the algorithm rules out."""

    def __init__(self, message: str, event: Optional[Any] = None):
        super().__init__(message)
        self.event = event


class WorkloadContractViolation(ShardSimError):
    """A home shard tried to hold two live transactions at once."""


class OracleBudgetExceeded(ShardSimError):
    """Exact search was asked to run on an input above its vertex budget."""


class CoverInvariantError(InvariantViolation):
    """A constructed cover hierarchy failed verification."""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report
