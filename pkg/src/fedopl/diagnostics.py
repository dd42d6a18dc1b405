"""Heterogeneity and performance diagnostics: sampling-skewness, Gaussian
KL distribution-shift terms, empirical regret against fixed reference
policies, and the participation value-of-information check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import ClientEnvSpec, true_mean_rewards
from .errors import ConfigurationError, InvalidArgumentError
from .types import ClientSamplingDistribution, LinearPolicy

__all__ = [
    "SkewnessReport",
    "ShiftPair",
    "ShiftReport",
    "RegretEntry",
    "RegretReport",
    "RegretEvaluator",
    "skewness",
    "gaussian_shift_terms",
    "shift_report",
    "empirical_regret",
    "value_of_information",
    "score_range_bound",
    "ParticipationVerdict",
    "skewed_lambda",
]


@dataclass(frozen=True)
class SkewnessReport:
    """Imbalance of the sampling weights against the empirical sample
    shares: skewness = E_{c~lam}[lam_c / nbar_c] = 1 + chi2(lam || nbar)."""

    skewness: float
    chi2: float
    nbar: np.ndarray
    finite: bool = True


def skewness(lam: ClientSamplingDistribution, counts: Sequence[int]) -> SkewnessReport:
    """Skewness of ``lam`` relative to the sample shares of ``counts``.

    Weight on a zero-sample client makes the report infinite (flagged, not
    an error). The two identity sides are computed independently and cross-
    checked; exact special cases (lam equal to the shares bitwise, or a
    point mass) return exact values.
    """
    counts_arr = np.asarray(counts, dtype=np.int64)
    if len(lam) != len(counts_arr):
        raise ConfigurationError("weights and counts must have matching length")
    if np.any(counts_arr < 0):
        raise ConfigurationError("counts must be nonnegative")
    n = int(counts_arr.sum())
    if n <= 0:
        raise ConfigurationError("total sample count must be positive")
    w = lam.weights
    if np.any((w > 0.0) & (counts_arr == 0)):
        return SkewnessReport(math.inf, math.inf, counts_arr / n, finite=False)

    nbar = ClientSamplingDistribution.from_counts(counts_arr).weights
    pos = w > 0.0
    if np.array_equal(w, nbar):
        # lam == nbar exactly: skewness is 1 by definition.
        s = 1.0
    elif pos.sum() == 1 and float(w[pos][0]) == 1.0:
        # Point mass on client c: skewness is n / n_c.
        c = int(np.flatnonzero(pos)[0])
        s = float(n) / float(counts_arr[c])
    else:
        s = float(np.sum(w[pos] * (w[pos] / nbar[pos])))
    chi2 = float(np.sum((w - nbar) ** 2 / nbar))
    assert abs(s - (1.0 + chi2)) <= 1e-9 * max(1.0, s), "skewness identity violated"
    return SkewnessReport(s, chi2, nbar, finite=True)


@dataclass(frozen=True)
class ShiftPair:
    """KL contributions of one ordered client pair (c, k): context marginal,
    logging policy, and the context-conditional reward law."""

    client_c: int
    client_k: int
    kl_context: float
    kl_propensity: float
    kl_reward: float
    kl_reward_se: float

    @property
    def sqrt_sum(self) -> float:
        return (
            math.sqrt(max(self.kl_context, 0.0))
            + math.sqrt(max(self.kl_propensity, 0.0))
            + math.sqrt(max(self.kl_reward, 0.0))
        )


@dataclass(frozen=True)
class ShiftReport:
    """All pairwise shift terms plus, per client c, the mixture-averaged
    sum of root-KL terms that upper-bounds the total variation between the
    client's complete data law and the mixture law."""

    pairs: tuple[ShiftPair, ...]
    tv_upper: np.ndarray  # (C,)


def gaussian_shift_terms(
    spec_c: ClientEnvSpec,
    spec_k: ClientEnvSpec,
    mc_draws: int = 10_000,
    rng: np.random.Generator | None = None,
) -> ShiftPair:
    """Closed-form/Monte-Carlo KL terms between two client environments.

    Context marginals are centered isotropic Gaussians, giving
    KL = (p/2) (s - 1 - ln s) with s = sigma_c^2 / sigma_k^2. Both logging
    policies are uniform, so the propensity term is zero. The reward term is
    the conditional KL of d independent Gaussians, averaged over contexts
    drawn from client c's marginal:
        E_x sum_a [ (r - 1 - ln r)/2 + (mu_c(x;a) - mu_k(x;a))^2 / (2 rho_k^2) ]
    with r = rho_c^2 / rho_k^2. The variance part is exact; only the mean-
    shift part needs Monte Carlo, and it is skipped (exactly zero) when the
    two mean surfaces are identical.
    """
    if spec_c.d != spec_k.d or spec_c.q != spec_k.q:
        raise ConfigurationError("shift terms need environments on the same (d, q)")
    p = spec_c.p
    d = spec_c.d

    svar = spec_c.sigma2 / spec_k.sigma2
    kl_context = 0.5 * p * (svar - 1.0 - math.log(svar))

    kl_propensity = 0.0  # both logging policies are uniform over the d actions

    rvar = spec_c.rho2 / spec_k.rho2
    kl_reward = 0.5 * d * (rvar - 1.0 - math.log(rvar))
    kl_reward_se = 0.0
    same_mean = (
        spec_c.reward_kind == spec_k.reward_kind
        and spec_c.sine_scale == spec_k.sine_scale
        and np.array_equal(spec_c.theta_star, spec_k.theta_star)
    )
    if not same_mean:
        if rng is None:
            raise ConfigurationError("mean surfaces differ: an rng is needed for the MC term")
        if mc_draws < 2:
            raise InvalidArgumentError("need at least two MC draws")
        contexts = rng.standard_normal((mc_draws, p)) * math.sqrt(spec_c.sigma2)
        gap = true_mean_rewards(spec_c, contexts) - true_mean_rewards(spec_k, contexts)
        per_draw = (gap**2).sum(axis=1) / (2.0 * spec_k.rho2)
        kl_reward += float(per_draw.mean())
        kl_reward_se = float(per_draw.std(ddof=1) / math.sqrt(mc_draws))
    return ShiftPair(
        spec_c.client_id, spec_k.client_id, kl_context, kl_propensity, kl_reward, kl_reward_se
    )


def shift_report(
    specs: Sequence[ClientEnvSpec],
    lam: ClientSamplingDistribution,
    mc_draws: int = 10_000,
    rng: np.random.Generator | None = None,
) -> ShiftReport:
    """Pairwise shift terms for every ordered client pair, plus each
    client's mixture-averaged root-KL bound."""
    if len(specs) != len(lam):
        raise ConfigurationError("one environment per sampling weight is required")
    pairs = []
    tv_upper = np.zeros(len(specs))
    for c, spec_c in enumerate(specs):
        for k, spec_k in enumerate(specs):
            if k == c:
                pair = ShiftPair(spec_c.client_id, spec_k.client_id, 0.0, 0.0, 0.0, 0.0)
            else:
                pair = gaussian_shift_terms(spec_c, spec_k, mc_draws, rng)
            pairs.append(pair)
            tv_upper[c] += lam[k] * pair.sqrt_sum
    return ShiftReport(tuple(pairs), tv_upper)


@dataclass(frozen=True)
class RegretEntry:
    """One regret (or value) measurement with its Monte Carlo standard
    error. ``client`` is a client id or -1 for the mixture aggregate."""

    client: int
    regret: float
    regret_se: float
    value: float
    value_se: float


@dataclass(frozen=True)
class RegretReport:
    policy_tag: str
    n: int
    seed: int
    global_entry: RegretEntry
    local_entries: tuple[RegretEntry, ...]


class RegretEvaluator:
    """Paired Monte Carlo regret evaluation against fixed references.

    Test contexts are drawn once per client and reused for every policy, so
    a reference evaluated against itself has exactly zero regret and
    policy-vs-policy comparisons are paired (differences carry much smaller
    standard errors than the individual values).
    """

    def __init__(
        self,
        specs: Sequence[ClientEnvSpec],
        reference_global: LinearPolicy,
        reference_locals: Sequence[LinearPolicy],
        draws: int,
        rngs: Sequence[np.random.Generator],
    ) -> None:
        if not (len(specs) == len(reference_locals) == len(rngs)):
            raise ConfigurationError("specs, references, and rngs must align")
        if draws < 2:
            raise InvalidArgumentError("need at least two evaluation draws")
        self.specs = list(specs)
        self.draws = draws
        self.contexts = [
            rng.standard_normal((draws, spec.p)) * math.sqrt(spec.sigma2)
            for spec, rng in zip(specs, rngs)
        ]
        self.means = [true_mean_rewards(spec, x) for spec, x in zip(specs, self.contexts)]
        self.ref_local_values = [
            self._value_vector(c, pol) for c, pol in enumerate(reference_locals)
        ]
        self.ref_global_values = [
            self._value_vector(c, reference_global) for c in range(len(specs))
        ]

    def _value_vector(self, client: int, policy: LinearPolicy) -> np.ndarray:
        chosen = policy.decide_batch(self.contexts[client])
        return self.means[client][np.arange(self.draws), chosen]

    def evaluate(
        self,
        policy: LinearPolicy,
        lam: ClientSamplingDistribution,
        tag: str,
        n: int = 0,
        seed: int = 0,
    ) -> RegretReport:
        if len(lam) != len(self.specs):
            raise ConfigurationError("sampling weights must cover every client")
        locals_: list[RegretEntry] = []
        global_regret = 0.0
        global_regret_var = 0.0
        global_value = 0.0
        global_value_var = 0.0
        for c in range(len(self.specs)):
            values = self._value_vector(c, policy)
            value = float(values.mean())
            value_se = float(values.std(ddof=1) / math.sqrt(self.draws))
            diff_local = self.ref_local_values[c] - values
            locals_.append(
                RegretEntry(
                    client=c,
                    regret=float(diff_local.mean()),
                    regret_se=float(diff_local.std(ddof=1) / math.sqrt(self.draws)),
                    value=value,
                    value_se=value_se,
                )
            )
            diff_global = self.ref_global_values[c] - values
            w = lam[c]
            global_regret += w * float(diff_global.mean())
            global_regret_var += (w * float(diff_global.std(ddof=1)) / math.sqrt(self.draws)) ** 2
            global_value += w * value
            global_value_var += (w * value_se) ** 2
        entry = RegretEntry(
            client=-1,
            regret=global_regret,
            regret_se=math.sqrt(global_regret_var),
            value=global_value,
            value_se=math.sqrt(global_value_var),
        )
        return RegretReport(tag, n, seed, entry, tuple(locals_))

    def evaluate_references(
        self, lam: ClientSamplingDistribution, tag: str = "reference", n: int = 0, seed: int = 0
    ) -> RegretReport:
        """Report the references against themselves: regret is exactly zero
        (same draws on both sides), values are the reference policy values."""
        locals_: list[RegretEntry] = []
        global_value = 0.0
        global_value_var = 0.0
        for c in range(len(self.specs)):
            vals = self.ref_local_values[c]
            se = float(vals.std(ddof=1) / math.sqrt(self.draws))
            locals_.append(RegretEntry(c, 0.0, 0.0, float(vals.mean()), se))
            vals_g = self.ref_global_values[c]
            se_g = float(vals_g.std(ddof=1) / math.sqrt(self.draws))
            global_value += lam[c] * float(vals_g.mean())
            global_value_var += (lam[c] * se_g) ** 2
        entry = RegretEntry(-1, 0.0, 0.0, global_value, math.sqrt(global_value_var))
        return RegretReport(tag, n, seed, entry, tuple(locals_))

    def paired_difference(
        self, policy_a: LinearPolicy, policy_b: LinearPolicy, client: int
    ) -> tuple[float, float]:
        """Mean and standard error of value(policy_a) - value(policy_b) on
        one client's test draws (paired on the same contexts)."""
        diff = self._value_vector(client, policy_a) - self._value_vector(client, policy_b)
        return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(self.draws))


def empirical_regret(
    policy: LinearPolicy,
    specs: Sequence[ClientEnvSpec],
    lam: ClientSamplingDistribution,
    reference_global: LinearPolicy,
    reference_locals: Sequence[LinearPolicy],
    rngs: Sequence[np.random.Generator],
    draws: int = 10_000,
    tag: str = "policy",
) -> RegretReport:
    """One-shot regret evaluation; see RegretEvaluator for the pairing
    semantics. Prefer constructing an evaluator when scoring many policies
    against the same references."""
    evaluator = RegretEvaluator(specs, reference_global, reference_locals, draws, rngs)
    return evaluator.evaluate(policy, lam, tag)


@dataclass(frozen=True)
class ParticipationVerdict:
    """Outcome of the participation value-of-information check: federation
    is worthwhile when the distribution shift is small next to the local
    regret scale AND the skewness is small next to the squared regret
    ratio."""

    participate: bool
    shift_condition: bool
    skew_condition: bool
    local_regret: float
    global_regret: float
    tv_upper: float
    skewness: float
    score_range: float
    alpha: float
    beta: float


def score_range_bound(max_abs_reward: float, clip_floor: float) -> float:
    """Conventional value for the score-range constant U: three times the
    observed reward bound over the propensity clip floor (the worst-case
    magnitude of a clipped doubly robust score)."""
    if max_abs_reward < 0.0 or not 0.0 < clip_floor <= 1.0:
        raise InvalidArgumentError("need max|reward| >= 0 and clip floor in (0, 1]")
    return 3.0 * max_abs_reward / clip_floor


def value_of_information(
    local_regret: float,
    global_regret: float,
    tv_upper: float,
    skew: float,
    score_range: float,
    alpha: float,
    beta: float,
) -> ParticipationVerdict:
    """Check ``tv_upper < alpha * r_c / U`` and
    ``skewness < beta^2 * r_c^2 / r^2`` with alpha + beta <= 1.

    ``score_range`` is the constant U; ``score_range_bound`` gives the
    conventional choice when only reward magnitudes are known."""
    if alpha < 0.0 or beta < 0.0 or alpha + beta > 1.0:
        raise InvalidArgumentError("need alpha, beta >= 0 with alpha + beta <= 1")
    if min(local_regret, global_regret, score_range) <= 0.0:
        raise InvalidArgumentError("regret scales and score range must be positive")
    shift_ok = tv_upper < alpha * local_regret / score_range
    skew_ok = skew < (beta**2) * (local_regret**2) / (global_regret**2)
    return ParticipationVerdict(
        participate=shift_ok and skew_ok,
        shift_condition=shift_ok,
        skew_condition=skew_ok,
        local_regret=local_regret,
        global_regret=global_regret,
        tv_upper=tv_upper,
        skewness=skew,
        score_range=score_range,
        alpha=alpha,
        beta=beta,
    )


def skewed_lambda(
    nbar: ClientSamplingDistribution, special_client: int, alpha: float
) -> ClientSamplingDistribution:
    """Tilt the empirical shares toward one client: the special client gains
    alpha * (1 - nbar_special) mass and every other client loses the alpha
    fraction of its own share. alpha = 0 returns nbar; alpha = 1 is a point
    mass on the special client."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError("alpha must lie in [0, 1]")
    if not 0 <= special_client < len(nbar):
        raise ConfigurationError(f"special client {special_client} out of range")
    w = nbar.weights.copy()
    eps = -alpha * w
    eps[special_client] = alpha * (1.0 - w[special_client])
    out = w + eps
    assert np.all(out >= 0.0) and abs(out.sum() - 1.0) <= 1e-12, "tilt left the simplex"
    return ClientSamplingDistribution(out)
