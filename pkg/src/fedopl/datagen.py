"""Synthetic multi-client bandit environments.

Each client environment draws contexts from a centered isotropic Gaussian,
assigns actions uniformly at random (the only supported logging policy),
and draws one Gaussian potential reward per action around a per-client mean
reward surface. Because every potential reward is materialized, the
generator doubles as a counterfactual oracle for regret evaluation.

Action assignment is independent of the potential rewards given the
context, and every action has logging probability exactly 1/d, so the
ignorability conditions (unconfoundedness, uniform overlap) hold by
construction. Rewards are unbounded Gaussians: the boundedness convention
used elsewhere for score-range diagnostics is deliberately violated here,
matching the synthetic study this module reproduces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .types import ClientDataset, block_features

__all__ = [
    "ClientEnvSpec",
    "CounterfactualSample",
    "CounterfactualBatch",
    "AllocationRule",
    "true_mean_reward",
    "true_mean_rewards",
    "sample_counterfactual",
    "sample_counterfactual_batch",
    "allocate",
]

REWARD_LINEAR = "linear"
REWARD_SCALED_SINE = "scaled_sine"

EQUAL_SPLIT = "equal_split"
LOG_FOR_ONE = "log_for_one"


@dataclass(frozen=True)
class ClientEnvSpec:
    """Data-generating process of one client.

    ``theta_star`` is the shared true parameter matrix, shape (d, q).
    ``reward_kind`` selects the mean reward surface: ``linear`` gives
    phi(x, a)^T theta*_a and ``scaled_sine`` gives
    k * sin(phi(x, a)^T theta*_a / k) with ``k = sine_scale``.
    """

    client_id: int
    sigma2: float
    rho2: float
    theta_star: np.ndarray
    reward_kind: str = REWARD_LINEAR
    sine_scale: float | None = None
    logging: str = "uniform"

    def __post_init__(self) -> None:
        if self.sigma2 <= 0.0 or self.rho2 <= 0.0:
            raise ConfigurationError("sigma2 and rho2 must be positive")
        theta = np.ascontiguousarray(self.theta_star, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] < 2:
            raise ConfigurationError("theta_star must be a (d, q) matrix with d >= 2")
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("theta_star must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        if self.reward_kind not in (REWARD_LINEAR, REWARD_SCALED_SINE):
            raise ConfigurationError(f"unknown reward kind {self.reward_kind!r}")
        if self.reward_kind == REWARD_SCALED_SINE:
            if self.sine_scale is None or self.sine_scale <= 0.0:
                raise ConfigurationError("scaled_sine requires a positive sine_scale")
        if self.logging != "uniform":
            raise ConfigurationError("only uniform logging is supported")

    @property
    def d(self) -> int:
        return self.theta_star.shape[0]

    @property
    def q(self) -> int:
        return self.theta_star.shape[1]

    @property
    def p(self) -> int:
        return self.d * self.q


def true_mean_rewards(spec: ClientEnvSpec, contexts: np.ndarray) -> np.ndarray:
    """Mean reward of every action for each context; shape (n, d)."""
    blocks = block_features(contexts, spec.d)
    squeeze = blocks.ndim == 2
    if squeeze:
        blocks = blocks[None]
    if blocks.shape[2] != spec.q:
        raise ConfigurationError("context length does not match the environment's d*q")
    dots = (blocks * spec.theta_star).sum(axis=2)
    if spec.reward_kind == REWARD_SCALED_SINE:
        k = float(spec.sine_scale)  # type: ignore[arg-type]
        dots = k * np.sin(dots / k)
    return dots[0] if squeeze else dots


def true_mean_reward(spec: ClientEnvSpec, x: np.ndarray, a: int) -> float:
    """Mean reward of action ``a`` in context ``x``."""
    if not 0 <= a < spec.d:
        raise ConfigurationError(f"action {a} outside 0..{spec.d - 1}")
    return float(true_mean_rewards(spec, np.asarray(x, dtype=np.float64))[a])


@dataclass(frozen=True)
class CounterfactualSample:
    """One draw with all potential rewards materialized."""

    context: np.ndarray
    potential_rewards: np.ndarray
    logged_action: int
    logged_reward: float

    def __post_init__(self) -> None:
        if self.logged_reward != self.potential_rewards[self.logged_action]:
            raise ConfigurationError("logged reward must equal the chosen potential reward")


class CounterfactualBatch:
    """Column-wise batch of counterfactual draws from one client."""

    __slots__ = ("client_id", "contexts", "potential_rewards", "actions", "rewards")

    def __init__(
        self,
        client_id: int,
        contexts: np.ndarray,
        potential_rewards: np.ndarray,
        actions: np.ndarray,
    ) -> None:
        self.client_id = client_id
        self.contexts = contexts
        self.potential_rewards = potential_rewards
        self.actions = actions
        self.rewards = potential_rewards[np.arange(len(actions)), actions]

    def __len__(self) -> int:
        return self.contexts.shape[0]

    def logged_dataset(self) -> ClientDataset:
        """Drop the counterfactual columns, keeping what a client logs.

        Uniform logging propensities 1/d are recorded alongside.
        """
        d = self.potential_rewards.shape[1]
        props = np.full(len(self), 1.0 / d)
        return ClientDataset(self.client_id, self.contexts, self.actions, self.rewards, props)


def sample_counterfactual_batch(
    spec: ClientEnvSpec, n: int, rng: np.random.Generator
) -> CounterfactualBatch:
    """Draw ``n`` i.i.d. counterfactual samples from the client environment.

    Contexts ~ N(0, sigma2 * I_p); one potential reward per action with
    independent N(0, rho2) noise around the mean surface; logged action
    uniform over the d actions, independent of everything else.
    """
    if n < 0:
        raise ConfigurationError("sample count must be nonnegative")
    contexts = rng.standard_normal((n, spec.p)) * math.sqrt(spec.sigma2)
    means = true_mean_rewards(spec, contexts) if n else np.zeros((0, spec.d))
    noise = rng.standard_normal((n, spec.d)) * math.sqrt(spec.rho2)
    actions = rng.integers(0, spec.d, size=n)
    return CounterfactualBatch(spec.client_id, contexts, means + noise, actions)


def sample_counterfactual(spec: ClientEnvSpec, rng: np.random.Generator) -> CounterfactualSample:
    """Draw a single counterfactual sample."""
    batch = sample_counterfactual_batch(spec, 1, rng)
    return CounterfactualSample(
        batch.contexts[0],
        batch.potential_rewards[0],
        int(batch.actions[0]),
        float(batch.rewards[0]),
    )


@dataclass(frozen=True)
class AllocationRule:
    """How a total sample budget n is split across C clients.

    ``equal_split`` gives floor(n/C) to every client. ``log_for_one`` gives
    floor(ln n) to ``special_client`` and splits the remainder evenly among
    the rest, assigning leftover units to the lowest client ids.
    """

    kind: str
    special_client: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (EQUAL_SPLIT, LOG_FOR_ONE):
            raise ConfigurationError(f"unknown allocation kind {self.kind!r}")
        if self.kind == LOG_FOR_ONE and self.special_client is None:
            raise ConfigurationError("log_for_one needs a special client id")


def allocate(rule: AllocationRule, n: int, clients: int) -> list[int]:
    """Per-client sample counts under ``rule`` for total budget ``n``.

    Raises if any client would receive zero samples at this ``n``: such an
    allocation breaks the premise that every local dataset keeps growing.
    """
    if clients < 1:
        raise ConfigurationError("need at least one client")
    if rule.kind == EQUAL_SPLIT:
        counts = [n // clients] * clients
    else:
        special = int(rule.special_client)  # type: ignore[arg-type]
        if not 0 <= special < clients:
            raise ConfigurationError(f"special client {special} outside 0..{clients - 1}")
        if n < 1:
            raise ConfigurationError("total sample size must be positive")
        n_special = int(math.floor(math.log(n)))
        rest = n - n_special
        others = clients - 1
        if others == 0:
            counts = [n_special]
        else:
            base, leftover = divmod(rest, others)
            counts = []
            seen_others = 0
            for c in range(clients):
                if c == special:
                    counts.append(n_special)
                else:
                    counts.append(base + (1 if seen_others < leftover else 0))
                    seen_others += 1
    if any(c < 1 for c in counts):
        raise ConfigurationError(
            f"allocation {counts} gives some client zero samples at n={n}; increase n"
        )
    return counts


def sample_client_datasets(
    specs: Sequence[ClientEnvSpec],
    counts: Sequence[int],
    data_keys: Sequence[np.random.Generator],
) -> list[ClientDataset]:
    """Draw each client's logged dataset from its own generator.

    Per-client generators keep streams independent, so drawing clients in
    parallel or sequentially yields identical data.
    """
    if not (len(specs) == len(counts) == len(data_keys)):
        raise ConfigurationError("specs, counts, and generators must align")
    return [
        sample_counterfactual_batch(spec, int(m), gen).logged_dataset()
        for spec, m, gen in zip(specs, counts, data_keys)
    ]
