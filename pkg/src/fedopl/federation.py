"""Federated policy optimization runtime.

A server holds global regressor parameters; each round it broadcasts them
to the participating clients, every participant runs a fixed number of
local SGD steps on batches resampled from its own scored data, and the
server replaces the global parameters with the participation-renormalized
mixture-weighted average of the returned local parameters.

Communication uses explicit message values (Broadcast / Update / Done)
over an in-process transport: a direct call path when single-threaded and
per-client queues with worker threads otherwise. Client batch randomness
comes from per-client substreams, and aggregation is ordered by client id,
so both transports produce bit-identical results.
"""

from __future__ import annotations

import queue
import threading
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .aipw import AipwScores
from .csmc import CsmcRegressors, LearningRate, export_policy, sgd_on_indices
from .errors import ConfigurationError, FedoplWarning, InvalidArgumentError
from .rng import BATCH, CENTRALIZED, PARTICIPATION, StreamKey
from .types import ClientSamplingDistribution, LinearPolicy

__all__ = [
    "RoundConfig",
    "ServerState",
    "RoundRecord",
    "Broadcast",
    "Update",
    "Done",
    "FederationMessage",
    "FedoplResult",
    "run_fedopl",
    "run_centralized",
    "run_local_baseline",
]

FULL_PARTICIPATION = "full"


@dataclass(frozen=True)
class RoundConfig:
    """Federated training schedule: R rounds of T local steps on batches of
    size B, with ``participation`` either "full" or a per-round subset size."""

    lam: ClientSamplingDistribution
    rounds: int = 50
    local_steps: int = 20
    batch_size: int = 16
    participation: Union[str, int] = FULL_PARTICIPATION
    schedule: LearningRate = LearningRate()
    failure_schedule: Mapping[int, frozenset[int]] | None = None

    def __post_init__(self) -> None:
        if min(self.rounds, self.local_steps, self.batch_size) < 1:
            raise ConfigurationError("rounds, local_steps, and batch_size must be >= 1")
        if self.participation != FULL_PARTICIPATION:
            s = self.participation
            if not isinstance(s, int) or not 1 <= s <= len(self.lam):
                raise ConfigurationError(
                    "participation must be 'full' or a subset size in 1..client count"
                )


@dataclass(frozen=True)
class Broadcast:
    round_index: int
    params: CsmcRegressors


@dataclass(frozen=True)
class Update:
    round_index: int
    client_id: int
    params: CsmcRegressors
    mean_loss: float


@dataclass(frozen=True)
class Done:
    pass


FederationMessage = Union[Broadcast, Update, Done]


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    participants: tuple[int, ...]
    mean_local_loss: float
    theta_norm: float


@dataclass
class ServerState:
    params: CsmcRegressors
    round_index: int = 0
    history: list[RoundRecord] = field(default_factory=list)


@dataclass(frozen=True)
class FedoplResult:
    policy: LinearPolicy
    server: ServerState

    @property
    def params(self) -> CsmcRegressors:
        return self.server.params

    @property
    def history(self) -> tuple[RoundRecord, ...]:
        return tuple(self.server.history)


class _ClientRunner:
    """One client's training endpoint: local data plus its batch stream."""

    def __init__(
        self,
        client_id: int,
        scores: AipwScores,
        cfg: RoundConfig,
        rng: np.random.Generator,
    ) -> None:
        self.client_id = client_id
        self.contexts = scores.contexts
        self.costs = scores.costs()
        self.cfg = cfg
        self.rng = rng

    def handle(self, msg: Broadcast) -> Update:
        n = self.contexts.shape[0]
        draws = [
            self.rng.integers(0, n, size=self.cfg.batch_size)
            for _ in range(self.cfg.local_steps)
        ]
        order = np.concatenate(draws)
        params, sse = sgd_on_indices(
            msg.params, self.contexts, self.costs, order, self.cfg.schedule
        )
        return Update(msg.round_index, self.client_id, params, sse / order.size)


class _QueueTransport:
    """Thread-per-client fabric speaking the FederationMessage protocol."""

    def __init__(self, runners: Mapping[int, _ClientRunner]) -> None:
        self.inboxes: dict[int, queue.Queue] = {c: queue.Queue() for c in runners}
        self.server_inbox: queue.Queue = queue.Queue()
        self.threads = [
            threading.Thread(target=self._serve, args=(runner, self.inboxes[c]), daemon=True)
            for c, runner in runners.items()
        ]
        for t in self.threads:
            t.start()

    def _serve(self, runner: _ClientRunner, inbox: queue.Queue) -> None:
        while True:
            msg = inbox.get()
            if isinstance(msg, Done):
                return
            try:
                self.server_inbox.put(runner.handle(msg))
            except BaseException as exc:  # surface worker errors to the server
                self.server_inbox.put(exc)

    def exchange(self, participants: Sequence[int], msg: Broadcast) -> list[Update]:
        for c in participants:
            self.inboxes[c].put(msg)
        replies = [self.server_inbox.get() for _ in participants]
        for reply in replies:
            if isinstance(reply, BaseException):
                raise reply
        return replies

    def shutdown(self) -> None:
        for inbox in self.inboxes.values():
            inbox.put(Done())
        for t in self.threads:
            t.join()


def _aggregate(
    updates: Sequence[Update], lam: ClientSamplingDistribution, current: CsmcRegressors
) -> CsmcRegressors | None:
    """Mixture-weighted average of local parameters, renormalized over the
    contributing clients; None when the contributing mass is zero."""
    updates = sorted(updates, key=lambda u: u.client_id)
    mass = sum(lam[u.client_id] for u in updates)
    if mass <= 0.0:
        return None
    weights = np.zeros_like(current.weights)
    intercepts = np.zeros_like(current.intercepts)
    for u in updates:
        coeff = lam[u.client_id] / mass
        weights += coeff * u.params.weights
        intercepts += coeff * u.params.intercepts
    return CsmcRegressors(weights, intercepts, updates[0].params.step)


def run_fedopl(
    client_scores: Mapping[int, AipwScores] | Sequence[AipwScores],
    cfg: RoundConfig,
    key: StreamKey,
    threads: int = 1,
    init: CsmcRegressors | None = None,
) -> FedoplResult:
    """Train a global policy by federated averaging of local SGD updates.

    Client c's batch stream is ``key.child(BATCH, c)``; participant subsets
    (when sampling) come from ``key.child(PARTICIPATION)``. Results do not
    depend on ``threads``.
    """
    if not isinstance(client_scores, Mapping):
        client_scores = {s.client_id: s for s in client_scores}
    client_ids = sorted(client_scores)
    if client_ids != list(range(len(cfg.lam))):
        raise ConfigurationError(
            "client scores must cover exactly clients 0..C-1 of the sampling distribution"
        )
    for c in client_ids:
        if len(client_scores[c]) == 0:
            raise ConfigurationError(f"client {c} has no scored samples")

    d = client_scores[client_ids[0]].d
    q = client_scores[client_ids[0]].contexts.shape[1] // d
    params = CsmcRegressors.zeros(d, q) if init is None else init

    runners = {
        c: _ClientRunner(c, client_scores[c], cfg, key.child(BATCH, c).rng())
        for c in client_ids
    }
    part_rng = key.child(PARTICIPATION).rng() if cfg.participation != FULL_PARTICIPATION else None

    transport = _QueueTransport(runners) if threads > 1 else None
    history: list[RoundRecord] = []
    try:
        for r in range(cfg.rounds):
            if cfg.participation == FULL_PARTICIPATION:
                participants = list(client_ids)
            else:
                participants = sorted(
                    part_rng.choice(len(client_ids), size=cfg.participation, replace=False)
                )
            failed = (
                frozenset(cfg.failure_schedule.get(r, frozenset()))
                if cfg.failure_schedule
                else frozenset()
            )
            active = [c for c in participants if c not in failed]
            msg = Broadcast(r, params)
            if transport is not None:
                updates = transport.exchange(active, msg)
            else:
                updates = [runners[c].handle(msg) for c in active]
            for u in updates:
                if u.round_index != r:
                    raise ConfigurationError(
                        f"client {u.client_id} answered round {u.round_index} during round {r}"
                    )
            aggregated = _aggregate(updates, cfg.lam, params) if updates else None
            if aggregated is None:
                warnings.warn(
                    f"round {r}: no participating mixture mass; round skipped", FedoplWarning
                )
                record_participants: tuple[int, ...] = ()
                mean_loss = float("nan")
            else:
                params = aggregated
                ordered = sorted(updates, key=lambda u: u.client_id)
                record_participants = tuple(u.client_id for u in ordered)
                mean_loss = float(np.mean([u.mean_loss for u in ordered]))
            theta_norm = float(
                np.sqrt((params.weights**2).sum() + (params.intercepts**2).sum())
            )
            history.append(RoundRecord(r, record_participants, mean_loss, theta_norm))
    finally:
        if transport is not None:
            transport.shutdown()

    server = ServerState(params, cfg.rounds, history)
    return FedoplResult(export_policy(params), server)


def run_centralized(
    client_scores: Mapping[int, AipwScores] | Sequence[AipwScores],
    lam: ClientSamplingDistribution,
    steps: int,
    key: StreamKey,
    schedule: LearningRate = LearningRate(),
) -> LinearPolicy:
    """Non-federated comparator: one SGD trajectory over the pooled scored
    data, drawing each step's sample with probability proportional to
    lambda_c / n_c (so the expected objective matches the mixture value)."""
    if not isinstance(client_scores, Mapping):
        client_scores = {s.client_id: s for s in client_scores}
    if steps < 0:
        raise InvalidArgumentError("steps must be nonnegative")
    contexts_parts = []
    costs_parts = []
    probs_parts = []
    for c in sorted(client_scores):
        scores = client_scores[c]
        if len(scores) == 0:
            raise ConfigurationError(f"client {c} has no scored samples")
        contexts_parts.append(scores.contexts)
        costs_parts.append(scores.costs())
        probs_parts.append(np.full(len(scores), lam[c] / len(scores)))
    contexts = np.vstack(contexts_parts)
    costs = np.vstack(costs_parts)
    probs = np.concatenate(probs_parts)
    if probs.sum() <= 0.0:
        raise ConfigurationError("no sampling mass on any pooled sample")
    probs = probs / probs.sum()

    d = costs.shape[1]
    params = CsmcRegressors.zeros(d, contexts.shape[1] // d)
    if steps:
        order = key.child(CENTRALIZED).rng().choice(len(probs), size=steps, p=probs)
        params, _ = sgd_on_indices(params, contexts, costs, order, schedule)
    return export_policy(params)


def run_local_baseline(
    scores: AipwScores,
    steps: int,
    key: StreamKey,
    schedule: LearningRate = LearningRate(),
) -> LinearPolicy:
    """Train on a single client's scored data only.

    Identical by construction to the pooled comparator restricted to one
    client with unit weight (sample draws become uniform over the client's
    rows)."""
    remapped = AipwScores(0, scores.contexts, scores.scores, scores.fold_of)
    lam = ClientSamplingDistribution(np.ones(1))
    return run_centralized({0: remapped}, lam, steps, key, schedule)
