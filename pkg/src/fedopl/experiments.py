"""Scripted synthetic studies over sample-size grids and seeds.

Two scenarios are provided. ``homogeneous``: three identical linear-reward
clients with an even sample split, trained under the empirical mixture.
``heterogeneous``: the first client has a scaled-sine reward surface,
double the context/reward variance of the others, and contributes only
floor(ln n) samples; the mixture is either the empirical shares or a
tilted version favoring that client.

For every (grid point, seed) cell a federated global policy and one
locally trained baseline per client are fitted on freshly sampled data,
then evaluated against reference policies trained once per experiment at a
large fixed budget. All randomness derives from the manifest's master
seed, so rerunning an experiment reproduces it bit for bit regardless of
thread count.
"""

from __future__ import annotations

import dataclasses
import math
import traceback
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .aipw import AipwScores, NuisanceConfig, cross_fit_scores
from .csmc import LearningRate
from .datagen import (
    EQUAL_SPLIT,
    LOG_FOR_ONE,
    REWARD_LINEAR,
    REWARD_SCALED_SINE,
    AllocationRule,
    ClientDataset,
    ClientEnvSpec,
    allocate,
    sample_counterfactual_batch,
)
from .diagnostics import (
    RegretEvaluator,
    RegretReport,
    ShiftReport,
    SkewnessReport,
    shift_report,
    skewed_lambda,
    skewness,
)
from .errors import ConfigurationError
from .federation import RoundConfig, run_fedopl, run_local_baseline
from .rng import StreamKey
from .types import ClientSamplingDistribution, LinearPolicy

__all__ = [
    "ExperimentManifest",
    "References",
    "ExperimentResult",
    "homogeneous_manifest",
    "heterogeneous_manifest",
    "build_env_specs",
    "lambda_for_counts",
    "train_reference_policies",
    "run_experiment",
]

SCENARIO_HOMOGENEOUS = "homogeneous"
SCENARIO_HETEROGENEOUS = "heterogeneous"

LAMBDA_EMPIRICAL = "empirical"
LAMBDA_SKEWED = "skewed"

POLICY_GLOBAL = "global"
POLICY_REFERENCE = "reference"


def _log_grid(n_min: int, n_max: int, points: int) -> tuple[int, ...]:
    raw = np.logspace(math.log10(n_min), math.log10(n_max), points)
    grid = sorted({int(round(v)) for v in raw})
    return tuple(grid)


@dataclass(frozen=True)
class ExperimentManifest:
    """Complete, serializable description of one experiment run."""

    scenario: str
    master_seed: int = 0
    clients: int = 3
    actions: int = 4
    block_size: int = 10
    grid: tuple[int, ...] = ()
    n_max: int = 1000
    seeds: int = 5
    lambda_mode: str = LAMBDA_EMPIRICAL
    alpha: float = 0.2
    special_client: int = 0
    omega2: float = 1.0
    sigma2: tuple[float, ...] = (1.0, 1.0, 1.0)
    rho2: tuple[float, ...] = (1.0, 1.0, 1.0)
    reward_kinds: tuple[str, ...] = (REWARD_LINEAR,) * 3
    sine_scale: float = 50.0
    allocation: str = EQUAL_SPLIT
    reference_budget: int = 100_000
    test_draws: int = 10_000
    rounds: int = 50
    local_steps: int = 20
    batch_size: int = 16
    eta0: float = 0.05
    decay: float = 1e-4
    reference_rounds: int | None = None  # None = 8x rounds: references must sit well below the cell policies' SGD noise floor
    folds: int = 5
    clip_floor: float = 0.01
    logistic_l2: float = 1.0
    logistic_max_iter: int = 500
    logistic_tol: float = 1e-6
    shift_mc_draws: int = 10_000

    def __post_init__(self) -> None:
        if self.scenario not in (SCENARIO_HOMOGENEOUS, SCENARIO_HETEROGENEOUS):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.lambda_mode not in (LAMBDA_EMPIRICAL, LAMBDA_SKEWED):
            raise ConfigurationError(f"unknown lambda mode {self.lambda_mode!r}")
        if not (
            len(self.sigma2) == len(self.rho2) == len(self.reward_kinds) == self.clients
        ):
            raise ConfigurationError("per-client environment fields must match client count")
        if min(self.clients, self.actions, self.block_size, self.seeds) < 1:
            raise ConfigurationError("counts must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigurationError("master seed must be a 64-bit unsigned value")
        if not self.grid:
            object.__setattr__(self, "grid", _log_grid(100, self.n_max, 8))
        if max(self.grid) > self.n_max:
            raise ConfigurationError("grid exceeds n_max")
        if not 0 <= self.special_client < self.clients:
            raise ConfigurationError("special client out of range")

    @property
    def total_local_steps(self) -> int:
        return self.rounds * self.local_steps * self.batch_size

    def schedule(self) -> LearningRate:
        return LearningRate(self.eta0, self.decay)

    def nuisance_config(self) -> NuisanceConfig:
        return NuisanceConfig(
            logistic_l2=self.logistic_l2,
            logistic_max_iter=self.logistic_max_iter,
            logistic_tol=self.logistic_tol,
            clip_floor=self.clip_floor,
        )

    def allocation_rule(self) -> AllocationRule:
        special = self.special_client if self.allocation == LOG_FOR_ONE else None
        return AllocationRule(self.allocation, special)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["grid"] = list(self.grid)
        out["sigma2"] = list(self.sigma2)
        out["rho2"] = list(self.rho2)
        out["reward_kinds"] = list(self.reward_kinds)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentManifest":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known - {"theta_star"}
        if unknown:
            raise ConfigurationError(f"unknown manifest keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k in known}
        for key in ("grid", "sigma2", "rho2", "reward_kinds"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def homogeneous_manifest(master_seed: int = 0, **overrides) -> ExperimentManifest:
    """Three identical unit-variance linear clients, even split, N up to 1K."""
    base = dict(
        scenario=SCENARIO_HOMOGENEOUS,
        master_seed=master_seed,
        n_max=1000,
        omega2=1.0,
        sigma2=(1.0, 1.0, 1.0),
        rho2=(1.0, 1.0, 1.0),
        reward_kinds=(REWARD_LINEAR,) * 3,
        allocation=EQUAL_SPLIT,
        lambda_mode=LAMBDA_EMPIRICAL,
        eta0=0.05,
        decay=1e-4,
    )
    base.update(overrides)
    return ExperimentManifest(**base)


def heterogeneous_manifest(
    master_seed: int = 0, lambda_mode: str = LAMBDA_EMPIRICAL, **overrides
) -> ExperimentManifest:
    """First client: scaled-sine rewards, sigma2 = rho2 = 10, floor(ln n)
    samples; other clients: linear, sigma2 = rho2 = 5, even split of the
    rest. The larger feature scale needs a smaller SGD step size."""
    base = dict(
        scenario=SCENARIO_HETEROGENEOUS,
        master_seed=master_seed,
        n_max=10_000,
        omega2=5.0,
        sigma2=(10.0, 5.0, 5.0),
        rho2=(10.0, 5.0, 5.0),
        reward_kinds=(REWARD_SCALED_SINE, REWARD_LINEAR, REWARD_LINEAR),
        sine_scale=50.0,
        allocation=LOG_FOR_ONE,
        special_client=0,
        lambda_mode=lambda_mode,
        eta0=0.002,
        decay=1e-4,
    )
    base.update(overrides)
    return ExperimentManifest(**base)


def build_env_specs(manifest: ExperimentManifest) -> list[ClientEnvSpec]:
    """Client environments sharing one true parameter matrix drawn from
    N(0, omega2 * I) under the manifest's master seed."""
    root = StreamKey(manifest.master_seed)
    theta = root.child(rngmod.THETA_STAR).rng().standard_normal(
        (manifest.actions, manifest.block_size)
    ) * math.sqrt(manifest.omega2)
    return [
        ClientEnvSpec(
            client_id=c,
            sigma2=manifest.sigma2[c],
            rho2=manifest.rho2[c],
            theta_star=theta,
            reward_kind=manifest.reward_kinds[c],
            sine_scale=manifest.sine_scale
            if manifest.reward_kinds[c] == REWARD_SCALED_SINE
            else None,
        )
        for c in range(manifest.clients)
    ]


def lambda_for_counts(
    manifest: ExperimentManifest, counts: Sequence[int]
) -> ClientSamplingDistribution:
    nbar = ClientSamplingDistribution.from_counts(counts)
    if manifest.lambda_mode == LAMBDA_SKEWED:
        return skewed_lambda(nbar, manifest.special_client, manifest.alpha)
    return nbar


def _cross_fit_client(
    manifest: ExperimentManifest, dataset: ClientDataset, key: StreamKey
) -> AipwScores:
    # Tiny clients cannot sustain the full fold count; cap it at n_c.
    folds = min(manifest.folds, dataset.n_c)
    return cross_fit_scores(
        dataset,
        manifest.actions,
        n_folds=folds,
        config=manifest.nuisance_config(),
        rng=key.rng(),
    )


def _sample_scored_datasets(
    manifest: ExperimentManifest,
    specs: Sequence[ClientEnvSpec],
    counts: Sequence[int],
    data_key: StreamKey,
    fold_key: StreamKey,
) -> list[AipwScores]:
    scored = []
    for c, spec in enumerate(specs):
        batch = sample_counterfactual_batch(spec, int(counts[c]), data_key.child(c).rng())
        scored.append(_cross_fit_client(manifest, batch.logged_dataset(), fold_key.child(c)))
    return scored


@dataclass(frozen=True)
class References:
    """Policies every grid cell is judged against: one mixture-trained
    global reference and one locally trained reference per client."""

    global_policy: LinearPolicy
    local_policies: tuple[LinearPolicy, ...]
    lam_reference: ClientSamplingDistribution
    budget: int


def train_reference_policies(
    manifest: ExperimentManifest, specs: Sequence[ClientEnvSpec], key: StreamKey
) -> References:
    """Train the reference policies at the manifest's reference budget.

    The global reference runs the federated pipeline on a reference-budget
    allocation; each local reference trains on reference-budget samples
    from its own client alone.
    """
    rounds = manifest.reference_rounds or 8 * manifest.rounds
    counts = allocate(manifest.allocation_rule(), manifest.reference_budget, manifest.clients)
    lam_ref = lambda_for_counts(manifest, counts)
    scored = _sample_scored_datasets(
        manifest, specs, counts, key.child(rngmod.DATAGEN), key.child(rngmod.FOLDS)
    )
    cfg = RoundConfig(
        lam=lam_ref,
        rounds=rounds,
        local_steps=manifest.local_steps,
        batch_size=manifest.batch_size,
        schedule=manifest.schedule(),
    )
    global_ref = run_fedopl(scored, cfg, key.child(rngmod.FEDOPL)).policy

    locals_: list[LinearPolicy] = []
    steps = rounds * manifest.local_steps * manifest.batch_size
    for c, spec in enumerate(specs):
        batch = sample_counterfactual_batch(
            spec, manifest.reference_budget, key.child(rngmod.BASELINE_DATA, c).rng()
        )
        scores = _cross_fit_client(
            manifest, batch.logged_dataset(), key.child(rngmod.FOLDS, c + manifest.clients)
        )
        locals_.append(
            run_local_baseline(scores, steps, key.child(rngmod.LOCAL, c), manifest.schedule())
        )
    return References(global_ref, tuple(locals_), lam_ref, manifest.reference_budget)


@dataclass(frozen=True)
class CellFailure:
    n: int
    seed: int
    message: str


@dataclass
class ExperimentResult:
    manifest: ExperimentManifest
    theta_star: np.ndarray
    reports: list[RegretReport] = field(default_factory=list)
    skewness_by_n: dict[int, SkewnessReport] = field(default_factory=dict)
    lambda_by_n: dict[int, ClientSamplingDistribution] = field(default_factory=dict)
    shift: ShiftReport | None = None
    failures: list[CellFailure] = field(default_factory=list)

    def resolved_manifest(self) -> dict:
        out = self.manifest.to_dict()
        out["theta_star"] = [[float(v) for v in row] for row in self.theta_star]
        return out


def _run_cell(
    manifest: ExperimentManifest,
    specs: Sequence[ClientEnvSpec],
    evaluator: RegretEvaluator,
    n: int,
    seed: int,
) -> list[RegretReport]:
    root = StreamKey(manifest.master_seed)
    cell = root.child(rngmod.CELL, seed, n)
    counts = allocate(manifest.allocation_rule(), n, manifest.clients)
    lam = lambda_for_counts(manifest, counts)

    scored = _sample_scored_datasets(
        manifest, specs, counts, cell.child(rngmod.DATAGEN), cell.child(rngmod.FOLDS)
    )
    cfg = RoundConfig(
        lam=lam,
        rounds=manifest.rounds,
        local_steps=manifest.local_steps,
        batch_size=manifest.batch_size,
        schedule=manifest.schedule(),
    )
    global_policy = run_fedopl(scored, cfg, cell.child(rngmod.FEDOPL)).policy
    reports = [evaluator.evaluate(global_policy, lam, POLICY_GLOBAL, n, seed)]

    # Local baselines: each client alone gets the full budget n.
    for c, spec in enumerate(specs):
        batch = sample_counterfactual_batch(
            spec, n, cell.child(rngmod.BASELINE_DATA, c).rng()
        )
        scores = _cross_fit_client(
            manifest, batch.logged_dataset(), cell.child(rngmod.FOLDS, c + manifest.clients)
        )
        baseline = run_local_baseline(
            scores, manifest.total_local_steps, cell.child(rngmod.LOCAL, c), manifest.schedule()
        )
        reports.append(evaluator.evaluate(baseline, lam, f"local_{c}", n, seed))

    reports.append(
        evaluator.evaluate_references(lam, POLICY_REFERENCE, n, seed)
    )
    return reports


def run_experiment(
    manifest: ExperimentManifest, threads: int = 1, progress=None
) -> ExperimentResult:
    """Run every (grid point, seed) cell of the manifest.

    A failing cell is recorded and skipped; other cells proceed. ``threads``
    only parallelizes independent cells and never changes the output.
    """
    root = StreamKey(manifest.master_seed)
    specs = build_env_specs(manifest)
    result = ExperimentResult(manifest, specs[0].theta_star)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        references = train_reference_policies(manifest, specs, root.child(rngmod.REFERENCE))
    evaluator = RegretEvaluator(
        specs,
        references.global_policy,
        references.local_policies,
        manifest.test_draws,
        [root.child(rngmod.EVAL, c).rng() for c in range(manifest.clients)],
    )

    for n in manifest.grid:
        try:
            counts = allocate(manifest.allocation_rule(), n, manifest.clients)
        except ConfigurationError:
            continue  # the cell run records the failure
        lam = lambda_for_counts(manifest, counts)
        result.lambda_by_n[n] = lam
        result.skewness_by_n[n] = skewness(lam, counts)

    if not result.lambda_by_n:
        raise ConfigurationError("no grid point admits a valid allocation")
    lam_max = result.lambda_by_n[max(result.lambda_by_n)]
    result.shift = shift_report(
        specs, lam_max, manifest.shift_mc_draws, root.child(rngmod.SHIFT).rng()
    )

    cells = [(n, seed) for n in manifest.grid for seed in range(manifest.seeds)]

    def one(cell: tuple[int, int]):
        n, seed = cell
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                return cell, _run_cell(manifest, specs, evaluator, n, seed), None
            except Exception:
                return cell, None, traceback.format_exc(limit=3)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, cells))
    else:
        outcomes = [one(cell) for cell in cells]

    for (n, seed), reports, err in outcomes:
        if err is not None:
            result.failures.append(CellFailure(n, seed, err))
        else:
            result.reports.extend(reports)
        if progress is not None:
            progress(n, seed, err)
    result.reports.sort(key=lambda r: (r.n, r.seed, r.policy_tag))
    return result
