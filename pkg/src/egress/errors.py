"""Exception types shared across the engine."""
from __future__ import annotations


class SimError(Exception):
    """Base class for simulation errors."""


class ValidationError(SimError):
    """Input failed validation; no state was modified."""


class NotFoundError(SimError):
    """Referenced id (agent, simulation, destination...) does not exist."""


class RestoreError(SimError):
    """Saved state is incompatible with the scenario it is being applied to."""


class ForkRangeError(SimError):
    """Fork round is outside the parent's recorded history."""


class ProviderError(SimError):
    """Decision provider is misconfigured; the round was not applied."""
