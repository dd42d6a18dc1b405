"""Cross-fitted doubly robust score construction and policy value
estimation.

Each sample's score vector combines the fitted mean-reward prediction with
an inverse-propensity-weighted residual correction on the observed action:

    score_i(a) = mu(x_i; a) + (y_i - mu(x_i; a)) * w(x_i; a) * 1{a_i = a}

with mu and w always taken from models fitted on the folds that exclude
sample i, so the prediction is independent of the sample it scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .datagen import ClientEnvSpec, true_mean_rewards
from .errors import (
    ConfigurationError,
    InvalidArgumentError,
    MissingActionWarning,
    ScoreBoundWarning,
    SingleActionError,
)
from .nuisance import (
    DEFAULT_CLIP_FLOOR,
    PropensityModel,
    ResponseModel,
    fit_propensity,
    fit_response,
)
from .types import ClientDataset, ClientSamplingDistribution, LinearPolicy

__all__ = [
    "FoldAssignment",
    "AipwScoreRow",
    "AipwScores",
    "NuisanceConfig",
    "assign_folds",
    "cross_fit_scores",
    "policy_value_estimate",
    "oracle_value_monte_carlo",
]


@dataclass(frozen=True)
class FoldAssignment:
    """Surjective sample-to-fold mapping with near-equal fold sizes."""

    n_folds: int
    fold_of: np.ndarray

    def __post_init__(self) -> None:
        fold_of = np.asarray(self.fold_of, dtype=np.int64)
        if self.n_folds < 1:
            raise ConfigurationError("need at least one fold")
        sizes = np.bincount(fold_of, minlength=self.n_folds)
        if fold_of.min(initial=0) < 0 or fold_of.max(initial=-1) >= self.n_folds:
            raise ConfigurationError("fold indices out of range")
        if sizes.min() == 0:
            raise ConfigurationError("every fold must be nonempty")
        if sizes.max() - sizes.min() > 1:
            raise ConfigurationError("fold sizes may differ by at most one")
        fold_of.setflags(write=False)
        object.__setattr__(self, "fold_of", fold_of)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.n_folds)


def assign_folds(n: int, n_folds: int, rng: np.random.Generator) -> FoldAssignment:
    """Randomly permute the samples, then cut into contiguous blocks."""
    if n < n_folds:
        raise ConfigurationError(f"cannot split {n} samples into {n_folds} nonempty folds")
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, n_folds)
    start = 0
    for k in range(n_folds):
        size = base + (1 if k < extra else 0)
        fold_of[perm[start : start + size]] = k
        start += size
    return FoldAssignment(n_folds, fold_of)


@dataclass(frozen=True)
class AipwScoreRow:
    """One sample's context with its per-action score vector."""

    context: np.ndarray
    scores: np.ndarray


class AipwScores:
    """Per-client score table: contexts (n, p), scores (n, d), fold ids (n,)."""

    __slots__ = ("client_id", "contexts", "scores", "fold_of")

    def __init__(
        self, client_id: int, contexts: np.ndarray, scores: np.ndarray, fold_of: np.ndarray
    ) -> None:
        if contexts.shape[0] != scores.shape[0] or fold_of.shape[0] != scores.shape[0]:
            raise ConfigurationError("contexts, scores, and folds must align")
        if not np.all(np.isfinite(scores)):
            raise ConfigurationError("scores must be finite")
        self.client_id = int(client_id)
        self.contexts = contexts
        self.scores = scores
        self.fold_of = fold_of
        for arr in (contexts, scores, fold_of):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.scores.shape[0]

    @property
    def d(self) -> int:
        return self.scores.shape[1]

    def rows(self) -> list[AipwScoreRow]:
        return [AipwScoreRow(self.contexts[i], self.scores[i]) for i in range(len(self))]

    def costs(self) -> np.ndarray:
        """Training costs for the classification oracle (negated scores)."""
        return -self.scores


@dataclass(frozen=True)
class NuisanceConfig:
    """Knobs for local nuisance fitting inside cross-fitting.

    ``response_override`` / ``propensity_override`` replace fitting with a
    supplied predictor (contexts -> (n, d) mean rewards, respectively
    contexts -> (n, d) inverse propensities); they exist for oracle
    injection and robustness studies. ``use_logged_propensity`` uses
    recorded propensities instead of fitting, when the dataset has them.
    """

    ridge: float | None = None
    logistic_l2: float = 1.0
    logistic_max_iter: int = 500
    logistic_tol: float = 1e-6
    clip_floor: float = DEFAULT_CLIP_FLOOR
    use_logged_propensity: bool = False
    uniform_fallback: bool = True
    response_override: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, compare=False
    )
    propensity_override: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, compare=False
    )

    @classmethod
    def oracle(cls, spec: ClientEnvSpec) -> "NuisanceConfig":
        """True nuisances for this environment: exact mean rewards and the
        exact uniform inverse propensity d."""
        d = spec.d

        def response(contexts: np.ndarray) -> np.ndarray:
            return true_mean_rewards(spec, contexts)

        def inverse_propensity(contexts: np.ndarray) -> np.ndarray:
            return np.full((contexts.shape[0], d), float(d))

        return cls(response_override=response, propensity_override=inverse_propensity)


def _fit_fold_response(
    dataset: ClientDataset, train: np.ndarray, d: int, config: NuisanceConfig
) -> ResponseModel:
    sub = ClientDataset(
        dataset.client_id,
        dataset.contexts[train],
        dataset.actions[train],
        dataset.rewards[train],
    )
    observed = np.unique(sub.actions)
    if len(observed) < d:
        missing = sorted(set(range(d)) - set(int(a) for a in observed))
        warnings.warn(
            f"client {dataset.client_id}: actions {missing} absent from a training fold; "
            "using the zero response model for them",
            MissingActionWarning,
        )
    return fit_response(sub, d, config.ridge)


def _fit_fold_propensity(
    dataset: ClientDataset, train: np.ndarray, d: int, config: NuisanceConfig
) -> PropensityModel:
    p = dataset.contexts.shape[1]
    sub = ClientDataset(
        dataset.client_id,
        dataset.contexts[train],
        dataset.actions[train],
        dataset.rewards[train],
    )
    try:
        return fit_propensity(
            sub,
            d,
            l2=config.logistic_l2,
            max_iter=config.logistic_max_iter,
            tol=config.logistic_tol,
            clip_floor=config.clip_floor,
        )
    except SingleActionError:
        if not config.uniform_fallback:
            raise
        warnings.warn(
            f"client {dataset.client_id}: a training fold observed a single action; "
            "falling back to the uniform propensity model",
            MissingActionWarning,
        )
        return PropensityModel.uniform(d, p, config.clip_floor)


def cross_fit_scores(
    dataset: ClientDataset,
    d: int,
    n_folds: int = 5,
    config: NuisanceConfig = NuisanceConfig(),
    rng: np.random.Generator | None = None,
    folds: FoldAssignment | None = None,
) -> AipwScores:
    """Construct out-of-fold doubly robust scores for every sample.

    For each fold k, nuisances are fitted on the other K-1 folds and used to
    score fold k's samples. Overrides in ``config`` skip the corresponding
    fit entirely. A seeded ``rng`` (or an explicit ``folds`` assignment)
    makes the partition reproducible.
    """
    n = dataset.n_c
    if folds is None:
        needs_fit = config.response_override is None or (
            config.propensity_override is None and not config.use_logged_propensity
        )
        if needs_fit:
            if n < n_folds:
                raise ConfigurationError(
                    f"client {dataset.client_id}: {n} samples cannot be split into "
                    f"{n_folds} folds"
                )
            if rng is None:
                raise ConfigurationError("cross_fit_scores needs an rng (or explicit folds)")
            folds = assign_folds(n, n_folds, rng)
        else:
            folds = FoldAssignment(1, np.zeros(n, dtype=np.int64))
    if len(folds.fold_of) != n:
        raise ConfigurationError("fold assignment does not match the dataset size")
    if config.use_logged_propensity and dataset.propensities is None:
        raise ConfigurationError("dataset has no logged propensities to use")

    mu_hat = np.empty((n, d))
    w_hat = np.empty((n, d))
    for k in range(folds.n_folds):
        test = np.flatnonzero(folds.fold_of == k)
        train = np.flatnonzero(folds.fold_of != k)
        x_test = dataset.contexts[test]

        if config.response_override is not None:
            mu_hat[test] = config.response_override(x_test)
        else:
            mu_hat[test] = _fit_fold_response(dataset, train, d, config).predict(x_test)

        if config.propensity_override is not None:
            w_hat[test] = config.propensity_override(x_test)
        elif config.use_logged_propensity:
            w_hat[test] = 1.0  # only the observed action's entry is ever read
            w_hat[test, dataset.actions[test]] = 1.0 / np.maximum(
                dataset.propensities[test], config.clip_floor
            )
        else:
            w_hat[test] = _fit_fold_propensity(dataset, train, d, config).inverse(x_test)

    rows = np.arange(n)
    scores = mu_hat.copy()
    observed = dataset.actions
    scores[rows, observed] += (dataset.rewards - mu_hat[rows, observed]) * w_hat[rows, observed]

    reward_bound = float(np.abs(dataset.rewards).max(initial=0.0))
    diag_bound = reward_bound + 2.0 * reward_bound / config.clip_floor
    n_violations = int((np.abs(scores) > diag_bound).sum())
    if n_violations:
        warnings.warn(
            f"client {dataset.client_id}: {n_violations} scores exceed the diagnostic "
            f"range bound {diag_bound:.3g} (overshooting fitted response on small folds)",
            ScoreBoundWarning,
        )
    return AipwScores(dataset.client_id, dataset.contexts, scores, folds.fold_of)


def policy_value_estimate(
    scores_by_client: Mapping[int, AipwScores] | Sequence[AipwScores],
    policy: LinearPolicy,
    lam: ClientSamplingDistribution,
) -> float:
    """Mixture-weighted estimate of the policy's value:
    sum_c lambda_c * mean_i score_i(policy(x_i))."""
    if not isinstance(scores_by_client, Mapping):
        scores_by_client = {s.client_id: s for s in scores_by_client}
    total = 0.0
    for c in range(len(lam)):
        weight = lam[c]
        if weight == 0.0:
            continue
        scores = scores_by_client.get(c)
        if scores is None or len(scores) == 0:
            raise InvalidArgumentError(f"client {c} has positive weight but no scores")
        chosen = policy.decide_batch(scores.contexts)
        total += weight * float(scores.scores[np.arange(len(scores)), chosen].mean())
    return total


def oracle_value_monte_carlo(
    spec: ClientEnvSpec, policy: LinearPolicy, m: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Ground-truth policy value on the client environment by Monte Carlo
    over fresh contexts: returns (mean, standard error).

    Averages the true mean reward of the chosen action, which has the same
    expectation as averaging noisy realized rewards but lower variance.
    """
    if m < 1:
        raise InvalidArgumentError("need at least one Monte Carlo draw")
    contexts = rng.standard_normal((m, spec.p)) * np.sqrt(spec.sigma2)
    chosen = policy.decide_batch(contexts)
    values = true_mean_rewards(spec, contexts)[np.arange(m), chosen]
    se = float(values.std(ddof=1) / np.sqrt(m)) if m > 1 else float("inf")
    return float(values.mean()), se
