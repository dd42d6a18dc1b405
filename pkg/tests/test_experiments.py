import math

import numpy as np
import pytest

from fedopl.errors import ConfigurationError
from fedopl.experiments import (
    ExperimentManifest,
    build_env_specs,
    heterogeneous_manifest,
    homogeneous_manifest,
    lambda_for_counts,
    run_experiment,
    train_reference_policies,
)
from fedopl.rng import REFERENCE, StreamKey
from fedopl.types import hamming_distance


def tiny_homogeneous(**overrides):
    base = dict(
        master_seed=5,
        grid=(100,),
        seeds=1,
        reference_budget=3000,
        test_draws=2000,
        rounds=12,
        reference_rounds=24,
    )
    base.update(overrides)
    return homogeneous_manifest(**base)


class TestManifest:
    def test_defaults_and_grid(self):
        m = homogeneous_manifest()
        assert m.grid[0] == 100 and m.grid[-1] == 1000 and len(m.grid) == 8
        h = heterogeneous_manifest()
        assert h.grid[-1] == 10_000
        assert h.sigma2 == (10.0, 5.0, 5.0)
        assert h.reward_kinds[0] == "scaled_sine"

    def test_round_trip_through_dict(self):
        m = heterogeneous_manifest(master_seed=3, lambda_mode="skewed")
        again = ExperimentManifest.from_dict(m.to_dict())
        assert again == m

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentManifest.from_dict({"scenario": "homogeneous", "bogus": 1})

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentManifest(scenario="exotic")

    def test_theta_star_shared_and_seeded(self):
        m = homogeneous_manifest(master_seed=11)
        specs = build_env_specs(m)
        assert all(np.array_equal(s.theta_star, specs[0].theta_star) for s in specs)
        specs2 = build_env_specs(homogeneous_manifest(master_seed=11))
        assert np.array_equal(specs[0].theta_star, specs2[0].theta_star)
        specs3 = build_env_specs(homogeneous_manifest(master_seed=12))
        assert not np.array_equal(specs[0].theta_star, specs3[0].theta_star)

    def test_lambda_modes(self):
        m = heterogeneous_manifest(lambda_mode="skewed")
        lam = lambda_for_counts(m, [9, 4996, 4995])
        nbar0 = 9 / 10000
        assert lam[0] == pytest.approx(nbar0 + 0.2 * (1 - nbar0), abs=1e-12)
        m2 = heterogeneous_manifest()
        lam2 = lambda_for_counts(m2, [9, 4996, 4995])
        assert lam2[0] == pytest.approx(nbar0, abs=1e-15)


class TestRunExperiment:
    def test_smoke_emits_expected_reports(self):
        res = run_experiment(tiny_homogeneous())
        assert not res.failures
        tags = sorted(r.policy_tag for r in res.reports)
        assert tags == ["global", "local_0", "local_1", "local_2", "reference"]
        report = next(r for r in res.reports if r.policy_tag == "global")
        assert len(report.local_entries) == 3
        assert res.skewness_by_n[100].skewness == 1.0
        assert res.shift is not None
        assert np.all(res.shift.tv_upper == 0.0)  # identical clients

    def test_runs_are_reproducible(self):
        a = run_experiment(tiny_homogeneous())
        b = run_experiment(tiny_homogeneous())
        for ra, rb in zip(a.reports, b.reports):
            assert ra == rb

    def test_thread_count_invariance(self):
        m = tiny_homogeneous(grid=(100, 150), seeds=2)
        serial = run_experiment(m, threads=1)
        threaded = run_experiment(m, threads=4)
        assert serial.reports == threaded.reports

    def test_failing_cells_recorded_and_others_proceed(self):
        m = tiny_homogeneous(grid=(2, 100))
        res = run_experiment(m)
        assert len(res.failures) == 1
        assert res.failures[0].n == 2
        assert any(r.n == 100 for r in res.reports)

    def test_heterogeneous_shift_has_closed_form_context_term(self):
        m = heterogeneous_manifest(
            master_seed=2, grid=(100,), seeds=1, reference_budget=2000,
            test_draws=1000, rounds=5, reference_rounds=5, shift_mc_draws=200,
        )
        res = run_experiment(m)
        pair = next(
            p for p in res.shift.pairs if (p.client_c, p.client_k) == (0, 1)
        )
        assert pair.kl_context == pytest.approx(20.0 * (1.0 - math.log(2.0)), abs=1e-12)

    def test_resolved_manifest_contains_theta_star(self):
        res = run_experiment(tiny_homogeneous())
        resolved = res.resolved_manifest()
        theta = np.array(resolved["theta_star"])
        assert theta.shape == (4, 10)
        assert np.array_equal(theta, res.theta_star)


class TestReferences:
    def test_homogeneous_references_agree(self, rng):
        # identical environments: per-client references differ only by
        # training noise
        m = homogeneous_manifest(master_seed=5)
        specs = build_env_specs(m)
        refs = train_reference_policies(m, specs, StreamKey(m.master_seed).child(REFERENCE))
        xs = rng.standard_normal((10_000, 40))
        for a in range(3):
            for b in range(a + 1, 3):
                assert hamming_distance(refs.local_policies[a], refs.local_policies[b], xs) < 0.1

    def test_heterogeneous_special_reference_differs(self, rng):
        # the sine client's reference deviates systematically from a linear
        # client's, well beyond the training-noise floor between the two
        # identical linear clients (measured ~0.031 vs ~0.014 at this budget)
        m = heterogeneous_manifest(master_seed=4)
        specs = build_env_specs(m)
        refs = train_reference_policies(m, specs, StreamKey(m.master_seed).child(REFERENCE))
        xs = rng.standard_normal((10_000, 40)) * math.sqrt(10.0)
        d01 = hamming_distance(refs.local_policies[0], refs.local_policies[1], xs)
        d12 = hamming_distance(refs.local_policies[1], refs.local_policies[2], xs)
        assert d01 > 0.02
        assert d01 > 1.5 * d12
