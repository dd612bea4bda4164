"""Semantic exception hierarchy shared across the package."""

from __future__ import annotations


class FedHarmonyError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(FedHarmonyError, ValueError):
    """Operands have incompatible shapes."""


class EmptyInputError(FedHarmonyError, ValueError):
    """An operation received an empty collection where at least one item is required."""


class InsufficientPeersError(FedHarmonyError, ValueError):
    """Leave-one-out consensus requested but no peer matrices are available."""


class InvalidClusterCountError(FedHarmonyError, ValueError):
    """Requested number of clusters is outside [1, n_labels]."""


class StepSizeError(FedHarmonyError, ValueError):
    """Gradient-descent stepsize violates the stability precondition."""


class SupportViolationError(FedHarmonyError, ValueError):
    """A matrix has mass outside the block-diagonal subspace it must live in."""


class WeightSumError(FedHarmonyError, ValueError):
    """Aggregation weights do not form a convex combination."""


class DivergenceError(FedHarmonyError, RuntimeError):
    """Local training produced a non-finite loss or parameter."""

    def __init__(self, client_id: int, round_index: int, detail: str = "") -> None:
        self.client_id = client_id
        self.round_index = round_index
        msg = f"training diverged on client {client_id} at round {round_index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ConfigError(FedHarmonyError, ValueError):
    """Experiment configuration is invalid; `field` names the offending key."""

    def __init__(self, field: str, detail: str) -> None:
        self.field = field
        super().__init__(f"config field '{field}': {detail}")


class DatasetError(FedHarmonyError, RuntimeError):
    """Synthetic data generation failed to satisfy its invariants."""
