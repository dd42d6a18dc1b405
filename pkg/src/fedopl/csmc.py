"""Online cost-sensitive one-against-all oracle.

One linear regressor per action predicts that action's cost (the negated
policy-value score) from the action's feature block; the induced policy
picks the action with the lowest predicted cost. Training is plain
sequential SGD on half-squared loss with a hyperbolically decaying step
size, delegated to the compiled kernel (or its pure-Python twin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import sgd_run
from .errors import ConfigurationError, InvalidArgumentError
from .types import LinearPolicy, block_features

__all__ = [
    "LearningRate",
    "CsmcRegressors",
    "CsmcBatch",
    "csmc_update",
    "csmc_predict",
    "export_policy",
    "sgd_on_indices",
]


@dataclass(frozen=True)
class LearningRate:
    """Step size eta_t = eta0 / (1 + decay * t), t counting processed samples."""

    eta0: float = 0.05
    decay: float = 1e-4

    def __post_init__(self) -> None:
        if self.eta0 <= 0.0 or self.decay < 0.0:
            raise ConfigurationError("need eta0 > 0 and decay >= 0")

    def at(self, t: int) -> float:
        return self.eta0 / (1.0 + self.decay * t)


@dataclass(frozen=True)
class CsmcRegressors:
    """Per-action cost regressors: weights (d, q), intercepts (d,), and the
    count of SGD steps taken so far (drives the step-size schedule)."""

    weights: np.ndarray
    intercepts: np.ndarray
    step: int = 0

    def __post_init__(self) -> None:
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        intercepts = np.ascontiguousarray(self.intercepts, dtype=np.float64)
        if weights.ndim != 2 or intercepts.shape != (weights.shape[0],):
            raise ConfigurationError("weights must be (d, q) with one intercept per action")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(intercepts))):
            raise ConfigurationError("regressor coefficients must be finite")
        weights.setflags(write=False)
        intercepts.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "intercepts", intercepts)

    @classmethod
    def zeros(cls, d: int, q: int) -> "CsmcRegressors":
        return cls(np.zeros((d, q)), np.zeros(d))

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def q(self) -> int:
        return self.weights.shape[1]

    def predict_costs(self, contexts: np.ndarray) -> np.ndarray:
        """Predicted per-action costs; shape (n, d)."""
        blocks = block_features(contexts, self.d)
        if blocks.ndim == 2:
            blocks = blocks[None]
        if blocks.shape[2] != self.q:
            raise ConfigurationError("context block size does not match regressors")
        return (blocks * self.weights).sum(axis=2) + self.intercepts


@dataclass(frozen=True)
class CsmcBatch:
    """Training examples for the oracle: contexts with full cost vectors."""

    contexts: np.ndarray
    costs: np.ndarray

    def __post_init__(self) -> None:
        contexts = np.ascontiguousarray(self.contexts, dtype=np.float64)
        costs = np.ascontiguousarray(self.costs, dtype=np.float64)
        if contexts.ndim != 2 or costs.ndim != 2 or contexts.shape[0] != costs.shape[0]:
            raise ConfigurationError("contexts (n, p) and costs (n, d) must align")
        if not np.all(np.isfinite(costs)):
            raise InvalidArgumentError("non-finite cost encountered; check score construction")
        if not np.all(np.isfinite(contexts)):
            raise InvalidArgumentError("non-finite context in CSMC batch")
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "costs", costs)

    def __len__(self) -> int:
        return self.contexts.shape[0]


def sgd_on_indices(
    state: CsmcRegressors,
    contexts: np.ndarray,
    costs: np.ndarray,
    order: np.ndarray,
    schedule: LearningRate,
) -> tuple[CsmcRegressors, float]:
    """Run one SGD step per index in ``order`` against rows of
    (contexts, costs); returns the new state and the accumulated
    half-squared prediction loss (evaluated before each update)."""
    weights = np.array(state.weights)
    intercepts = np.array(state.intercepts)
    order = np.ascontiguousarray(order, dtype=np.int64)
    if order.size and (order.min() < 0 or order.max() >= contexts.shape[0]):
        raise InvalidArgumentError("sample index out of range")
    t, sse = sgd_run(
        weights,
        intercepts,
        np.ascontiguousarray(contexts, dtype=np.float64),
        np.ascontiguousarray(costs, dtype=np.float64),
        order,
        schedule.eta0,
        schedule.decay,
        state.step,
    )
    return CsmcRegressors(weights, intercepts, int(t)), float(sse)


def csmc_update(
    state: CsmcRegressors, batch: CsmcBatch, schedule: LearningRate = LearningRate()
) -> CsmcRegressors:
    """Process the batch as sequential per-sample SGD steps (one step per
    sample, in order), returning the updated regressors."""
    if len(batch) == 0:
        raise InvalidArgumentError("CSMC update needs a nonempty batch")
    new_state, _ = sgd_on_indices(
        state, batch.contexts, batch.costs, np.arange(len(batch), dtype=np.int64), schedule
    )
    return new_state


def csmc_predict(state: CsmcRegressors, x: np.ndarray) -> int:
    """Action with the lowest predicted cost (ties to lowest index)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigurationError("csmc_predict takes a single context vector")
    return int(np.argmin(state.predict_costs(x[None, :])[0]))


def export_policy(state: CsmcRegressors) -> LinearPolicy:
    """The induced argmax policy.

    Negating weights and intercepts turns lowest-predicted-cost into an
    argmax rule; negation is exact in floating point, so the exported
    policy's decisions match csmc_predict bit for bit, including ties.
    """
    return LinearPolicy(-state.weights, -state.intercepts)
