"""Local nuisance estimation: per-action ridge regression for the
conditional response and L2-penalized multinomial logistic regression for
the logging propensities.

Both fits are deterministic: the ridge solve is a direct linear solve and
the logistic fit is full-batch gradient ascent with backtracking line
search, so repeated fits on the same data are bit-identical.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConvergenceWarning, SingleActionError
from .types import ClientDataset, block_features

__all__ = [
    "ResponseModel",
    "PropensityModel",
    "fit_response",
    "fit_propensity",
    "inverse_propensity",
]

DEFAULT_CLIP_FLOOR = 0.01
DEFAULT_RIDGE_PER_SAMPLE = 1e-6
DEFAULT_LOGISTIC_L2 = 1.0


@dataclass(frozen=True)
class ResponseModel:
    """Per-action linear model of the mean reward on that action's feature
    block: mu(x; a) = phi(x, a)^T weights_a + intercept_a."""

    weights: np.ndarray  # (d, q)
    intercepts: np.ndarray  # (d,)

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.intercepts))):
            raise ConfigurationError("response model coefficients must be finite")

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, d: int, q: int) -> "ResponseModel":
        return cls(np.zeros((d, q)), np.zeros(d))

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        """Predicted mean rewards for every action; shape (n, d)."""
        blocks = block_features(contexts, self.d)
        if blocks.ndim == 2:
            blocks = blocks[None]
        return (blocks * self.weights).sum(axis=2) + self.intercepts


def fit_response(
    dataset: ClientDataset, d: int, ridge: float | None = None
) -> ResponseModel:
    """Fit one ridge regressor per action on that action's subsample.

    ``ridge`` is the regularization strength applied to the full coefficient
    vector (intercept included) of each per-action solve; when None it
    defaults to 1e-6 * n_a, scaled by the subsample size so conditioning is
    guaranteed without materially biasing large fits. Actions that were
    never observed get the zero model.
    """
    if ridge is not None and ridge < 0.0:
        raise ConfigurationError("ridge must be nonnegative")
    blocks = block_features(dataset.contexts, d)
    q = blocks.shape[2]
    weights = np.zeros((d, q))
    intercepts = np.zeros(d)
    for a in range(d):
        mask = dataset.actions == a
        n_a = int(mask.sum())
        if n_a == 0:
            continue
        feats = blocks[mask, a, :]
        g = np.hstack([feats, np.ones((n_a, 1))])
        y = dataset.rewards[mask]
        r = DEFAULT_RIDGE_PER_SAMPLE * n_a if ridge is None else ridge
        gram = g.T @ g + r * np.eye(q + 1)
        coef = np.linalg.solve(gram, g.T @ y)
        weights[a] = coef[:q]
        intercepts[a] = coef[q]
    return ResponseModel(weights, intercepts)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PropensityModel:
    """Multinomial logistic model of the logging policy over the d actions.

    ``coef`` has shape (d, p + 1); the last column is the intercept.
    ``proba`` clips the softmax output below at ``clip_floor`` and
    renormalizes, and the inverse propensity applies the floor once more to
    the renormalized value so that 1/proba never exceeds 1/clip_floor.
    """

    coef: np.ndarray
    clip_floor: float = DEFAULT_CLIP_FLOOR
    converged: bool = True

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.coef)):
            raise ConfigurationError("propensity coefficients must be finite")
        d = self.coef.shape[0]
        if not 0.0 < self.clip_floor <= 1.0 / d:
            raise ConfigurationError("clip floor must lie in (0, 1/d]")

    @property
    def d(self) -> int:
        return self.coef.shape[0]

    @classmethod
    def uniform(cls, d: int, p: int, clip_floor: float = DEFAULT_CLIP_FLOOR) -> "PropensityModel":
        """The uniform-logging model: every action has probability 1/d."""
        return cls(np.zeros((d, p + 1)), clip_floor)

    def proba(self, contexts: np.ndarray) -> np.ndarray:
        """Clipped, renormalized action probabilities; shape (n, d)."""
        contexts = np.asarray(contexts, dtype=np.float64)
        if contexts.ndim == 1:
            contexts = contexts[None, :]
        logits = contexts @ self.coef[:, :-1].T + self.coef[:, -1]
        probs = np.maximum(_softmax(logits), self.clip_floor)
        return probs / probs.sum(axis=1, keepdims=True)

    def inverse(self, contexts: np.ndarray) -> np.ndarray:
        """Inverse propensities 1/P(A=a|x) for every action; shape (n, d)."""
        return 1.0 / np.maximum(self.proba(contexts), self.clip_floor)


def inverse_propensity(model: PropensityModel, x: np.ndarray, a: int) -> float:
    """Estimated 1 / P(A = a | X = x); bounded above by 1/clip_floor."""
    if not 0 <= a < model.d:
        raise ConfigurationError(f"action {a} outside 0..{model.d - 1}")
    x = np.asarray(x, dtype=np.float64)
    return float(model.inverse(x[None, :])[0, a])


def fit_propensity(
    dataset: ClientDataset,
    d: int,
    l2: float = DEFAULT_LOGISTIC_L2,
    max_iter: int = 500,
    tol: float = 1e-6,
    clip_floor: float = DEFAULT_CLIP_FLOOR,
) -> PropensityModel:
    """Fit the logging policy by maximizing the mean log-likelihood with an
    L2 penalty of l2/(2n) * ||coef||^2 on the non-intercept coefficients
    (so l2 plays the role of a fixed inverse prior variance, independent of
    the sample size).

    Full-batch gradient ascent with backtracking (Armijo) step halving runs
    until the gradient max-norm drops to ``tol`` or ``max_iter`` ascent
    steps; hitting max_iter emits a ConvergenceWarning and returns the best
    iterate. Fewer than two distinct observed actions raises
    SingleActionError: fall back to PropensityModel.uniform in that case.
    """
    if l2 < 0.0:
        raise ConfigurationError("l2 must be nonnegative")
    if len(np.unique(dataset.actions)) < 2:
        raise SingleActionError(
            "propensity fit needs at least two distinct observed actions; "
            "use PropensityModel.uniform as a fallback"
        )
    x = np.hstack([dataset.contexts, np.ones((dataset.n_c, 1))])
    n, p1 = x.shape
    y = np.zeros((n, d))
    y[np.arange(n), dataset.actions] = 1.0
    coef = np.zeros((d, p1))
    penalty_mask = np.ones(p1)
    penalty_mask[-1] = 0.0  # the intercept column is unpenalized

    def objective_and_grad(w: np.ndarray) -> tuple[float, np.ndarray]:
        logits = x @ w.T
        z = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(z).sum(axis=1))
        loglik = float((z[np.arange(n), dataset.actions] - log_norm).mean())
        penalty = 0.5 * l2 / n * float(((w * penalty_mask) ** 2).sum())
        probs = _softmax(logits)
        grad = (y - probs).T @ x / n - (l2 / n) * w * penalty_mask
        return loglik - penalty, grad

    value, grad = objective_and_grad(coef)
    step = 1.0
    gnorm = float(np.abs(grad).max())
    iters = 0
    while gnorm > tol and iters < max_iter:
        gsq = float((grad**2).sum())
        step = min(step * 2.0, 1.0e6)
        accepted = False
        while step > 1e-12:
            trial = coef + step * grad
            trial_value, trial_grad = objective_and_grad(trial)
            if trial_value >= value + 1e-4 * step * gsq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # Line search exhausted: gradient is numerically unusable.
            break
        coef, value, grad = trial, trial_value, trial_grad
        gnorm = float(np.abs(grad).max())
        iters += 1
    converged = gnorm <= tol
    if not converged:
        warnings.warn(
            f"propensity fit stopped at max_iter={max_iter} with grad norm {gnorm:.3g}",
            ConvergenceWarning,
        )
    return PropensityModel(coef, clip_floor, converged)
