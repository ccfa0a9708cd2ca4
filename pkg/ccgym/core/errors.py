from __future__ import annotations


class CcGymError(Exception):
    """Base class for every error raised by ccgym."""


class ConfigError(CcGymError, ValueError):
    """Invalid scenario, topology or run configuration."""


class SchedulerError(CcGymError, RuntimeError):
    """The event loop was asked to do something impossible (a harness bug)."""


class ContractError(CcGymError, ValueError):
    """An operation precondition was violated by the caller."""


class CheckpointError(CcGymError, ValueError):
    """A checkpoint file is malformed or of an unsupported version."""


class TrainingDiverged(CcGymError, RuntimeError):
    """Parameters became non-finite; `last_good` points at the last sane checkpoint."""

    def __init__(self, message: str, last_good: str | None = None) -> None:
        super().__init__(message)
        self.last_good = last_good
