"""Core domain vocabulary: actions, logged bandit records, client datasets,
linear argmax policies, and client sampling distributions.

Conventions used throughout the package:

- Actions are integer ids ``0..d-1``.
- A context is a real vector of length ``p = d * q``. The feature map for
  action ``a`` is the ``a``-th length-``q`` block of the context,
  ``phi(x, a) = x[a*q : (a+1)*q]``.
- All types are immutable values after construction and safe to share
  between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError

__all__ = [
    "ActionSpace",
    "LoggedSample",
    "ClientDataset",
    "LinearPolicy",
    "ClientSamplingDistribution",
    "policy_decide",
    "hamming_distance",
    "block_features",
]


@dataclass(frozen=True)
class ActionSpace:
    """A finite action set ``{0, ..., d-1}``."""

    d: int

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ConfigurationError(f"need at least 2 actions, got d={self.d}")


@dataclass(frozen=True)
class LoggedSample:
    """One bandit-feedback record: the context seen, the action taken, the
    reward observed, and (optionally) the logged propensity of that action."""

    context: np.ndarray
    action: int
    reward: float
    logged_propensity: float | None = None

    def __post_init__(self) -> None:
        ctx = np.asarray(self.context, dtype=np.float64)
        if ctx.ndim != 1 or not np.all(np.isfinite(ctx)):
            raise ConfigurationError("context must be a finite 1-d vector")
        object.__setattr__(self, "context", ctx)
        if self.action < 0:
            raise ConfigurationError(f"action id must be nonnegative, got {self.action}")
        if not np.isfinite(self.reward):
            raise ConfigurationError("reward must be finite")
        if self.logged_propensity is not None and not (0.0 < self.logged_propensity <= 1.0):
            raise ConfigurationError(
                f"logged propensity must lie in (0, 1], got {self.logged_propensity}"
            )


class ClientDataset:
    """A client's logged bandit data, stored column-wise.

    ``contexts`` has shape (n_c, p), ``actions`` (n_c,), ``rewards`` (n_c,),
    and ``propensities`` is either None or shape (n_c,).
    """

    __slots__ = ("client_id", "contexts", "actions", "rewards", "propensities")

    def __init__(
        self,
        client_id: int,
        contexts: np.ndarray,
        actions: np.ndarray,
        rewards: np.ndarray,
        propensities: np.ndarray | None = None,
    ) -> None:
        contexts = np.ascontiguousarray(contexts, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=np.float64)
        if contexts.ndim != 2:
            raise ConfigurationError("contexts must be a 2-d array (n_c, p)")
        n = contexts.shape[0]
        if actions.shape != (n,) or rewards.shape != (n,):
            raise ConfigurationError("actions and rewards must each have one entry per context")
        if not np.all(np.isfinite(contexts)) or not np.all(np.isfinite(rewards)):
            raise ConfigurationError("contexts and rewards must be finite")
        if n and actions.min() < 0:
            raise ConfigurationError("action ids must be nonnegative")
        if propensities is not None:
            propensities = np.asarray(propensities, dtype=np.float64)
            if propensities.shape != (n,) or not np.all(propensities > 0.0):
                raise ConfigurationError("logged propensities must be positive, one per sample")
        self.client_id = int(client_id)
        self.contexts = contexts
        self.actions = actions
        self.rewards = rewards
        self.propensities = propensities
        for arr in (contexts, actions, rewards, propensities):
            if arr is not None:
                arr.setflags(write=False)

    @classmethod
    def from_samples(cls, client_id: int, samples: Sequence[LoggedSample]) -> "ClientDataset":
        if not samples:
            raise ConfigurationError("a training dataset needs at least one sample")
        props = [s.logged_propensity for s in samples]
        have_props = all(p is not None for p in props)
        return cls(
            client_id,
            np.stack([s.context for s in samples]),
            np.array([s.action for s in samples]),
            np.array([s.reward for s in samples]),
            np.array(props) if have_props else None,
        )

    @property
    def n_c(self) -> int:
        return self.contexts.shape[0]

    def __len__(self) -> int:
        return self.n_c

    def sample(self, i: int) -> LoggedSample:
        prop = None if self.propensities is None else float(self.propensities[i])
        return LoggedSample(self.contexts[i], int(self.actions[i]), float(self.rewards[i]), prop)

    def __iter__(self) -> Iterator[LoggedSample]:
        return (self.sample(i) for i in range(self.n_c))


def block_features(contexts: np.ndarray, d: int) -> np.ndarray:
    """Reshape contexts (n, d*q) into per-action feature blocks (n, d, q)."""
    contexts = np.asarray(contexts, dtype=np.float64)
    squeeze = contexts.ndim == 1
    if squeeze:
        contexts = contexts[None, :]
    n, p = contexts.shape
    if p % d != 0:
        raise ConfigurationError(f"context length {p} is not divisible by d={d}")
    blocks = contexts.reshape(n, d, p // d)
    return blocks[0] if squeeze else blocks


@dataclass(frozen=True)
class LinearPolicy:
    """Deterministic policy scoring each action by a linear function of its
    feature block: decide(x) = argmax_a phi(x, a)^T theta_a + intercept_a.

    ``theta`` has shape (d, q). The optional intercept (default zero) exists
    so that policies exported from intercept-bearing cost regressors are
    exactly representable; a zero intercept recovers the plain block-linear
    class. Ties go to the smallest action index.
    """

    theta: np.ndarray
    intercept: np.ndarray | None = None

    def __post_init__(self) -> None:
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if theta.ndim != 2:
            raise ConfigurationError("theta must be a (d, q) matrix")
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("theta entries must be finite")
        d = theta.shape[0]
        if d < 2:
            raise ConfigurationError("policy needs at least 2 actions (rows)")
        intercept = self.intercept
        if intercept is None:
            intercept = np.zeros(d)
        intercept = np.ascontiguousarray(intercept, dtype=np.float64)
        if intercept.shape != (d,) or not np.all(np.isfinite(intercept)):
            raise ConfigurationError("intercept must be a finite length-d vector")
        theta.setflags(write=False)
        intercept.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "intercept", intercept)

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    @property
    def q(self) -> int:
        return self.theta.shape[1]

    def scores(self, contexts: np.ndarray) -> np.ndarray:
        """Per-action scores, shape (n, d)."""
        blocks = block_features(contexts, self.d)
        if blocks.ndim == 2:
            blocks = blocks[None]
        if blocks.shape[2] != self.q:
            raise ConfigurationError(
                f"context block size {blocks.shape[2]} does not match policy q={self.q}"
            )
        return (blocks * self.theta).sum(axis=2) + self.intercept

    def decide_batch(self, contexts: np.ndarray) -> np.ndarray:
        """Decisions for a batch of contexts; (n,) int array."""
        return np.argmax(self.scores(contexts), axis=1)

    def decide(self, x: np.ndarray) -> int:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ConfigurationError("decide() takes a single context vector")
        return int(self.decide_batch(x[None, :])[0])

    @classmethod
    def zeros(cls, d: int, q: int) -> "LinearPolicy":
        return cls(np.zeros((d, q)))


def policy_decide(policy: LinearPolicy, x: np.ndarray) -> int:
    """Action chosen by ``policy`` on context ``x`` (ties to lowest index)."""
    return policy.decide(x)


def hamming_distance(
    p1: LinearPolicy, p2: LinearPolicy, xs: np.ndarray | Sequence[np.ndarray]
) -> float:
    """Fraction of the given contexts on which the two policies disagree."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[None, :]
    if xs.shape[0] == 0:
        raise InvalidArgumentError("hamming_distance needs a nonempty context set")
    return float(np.mean(p1.decide_batch(xs) != p2.decide_batch(xs)))


@dataclass(frozen=True)
class ClientSamplingDistribution:
    """Normalized nonnegative weights over clients.

    Construction rejects negative weights and normalizes the total mass to 1.
    If the input already sums to 1 exactly it is kept bit-for-bit, so that
    distributions built from other distributions' weights stay identical.
    """

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.ndim != 1 or w.size == 0:
            raise ConfigurationError("weights must be a nonempty 1-d vector")
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("weights must be finite")
        if np.any(w < 0.0):
            raise ConfigurationError("weights must be nonnegative")
        total = float(w.sum())
        if total <= 0.0:
            raise ConfigurationError("weights must have positive total mass")
        if total != 1.0:
            w = w / total
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "ClientSamplingDistribution":
        """The empirical sample-share distribution: weight_c = n_c / n."""
        counts_arr = np.asarray(counts, dtype=np.int64)
        if np.any(counts_arr < 0):
            raise ConfigurationError("sample counts must be nonnegative")
        n = int(counts_arr.sum())
        if n <= 0:
            raise ConfigurationError("sample counts must have positive total")
        return cls(counts_arr / n)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, c: int) -> float:
        return float(self.weights[c])
