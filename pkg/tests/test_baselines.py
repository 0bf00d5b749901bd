"""Comparison algorithms: reduction to textbook updates when privacy is off,
side-by-side coincidence with the primal-dual engine, and the shared
determinism contract."""

from dataclasses import replace

import numpy as np
import pytest

from fedspd.baselines import (
    DpAdmmSimulation,
    DpFedAvgSimulation,
    DpSgdSimulation,
    run_baseline,
)
from fedspd.config import ConfigError, default_config
from fedspd.datastore import Dataset
from fedspd.engine import Simulation, gamma_schedule, run_experiment
from fedspd.linmodel import logistic_grad
from fedspd.sampling import client_stream, sample_minibatch


def _dup_dataset(row, label, m):
    """m identical samples; per-sample gradient norms are all equal."""
    X = np.tile(np.asarray(row, dtype=float), (m, 1))
    y = np.full(m, float(label))
    return Dataset(X, y)


def _cfg(**kw):
    base = replace(
        default_config(),
        n_clients=3,
        clients_per_round=3,
        rounds=2,
        local_steps=1,
        batch_size=10,
        synthetic_d=3,
        synthetic_train=90,
        synthetic_test=30,
        total_budget=None,
        record_timing=False,
    )
    return replace(base, **kw)


class TestDpSgd:
    def test_equal_norms_give_plain_sgd_step(self):
        # identical samples: the median clip equals every norm, nothing is
        # rescaled, and the noiseless round is one exact gradient step
        train = _dup_dataset([0.6, -0.2, 0.1], 1, 90)
        test = _dup_dataset([0.6, -0.2, 0.1], 1, 30)
        cfg = _cfg(algorithm="dp_sgd")
        res = run_experiment(replace(cfg, rounds=1), 1, train, test)
        gamma = gamma_schedule(1, 1, 1.0, 10, None, cfg.delta, cfg.rho, 3, Simulation(
            replace(cfg, rounds=0), 1, train, test).hp)
        g = logistic_grad(np.zeros(3), train.X[:10], train.y[:10])
        want = -g / gamma  # x0 = 0 and sign(0) kills the l1 subgradient
        for c in res.clients:
            np.testing.assert_allclose(c.x, want, rtol=1e-12)

    def test_zero_features_freeze_the_model(self):
        # all-zero rows make every per-sample norm zero, so the median clip,
        # the gradient and the calibrated noise all vanish
        train = _dup_dataset([0.0, 0.0, 0.0], 1, 90)
        test = _dup_dataset([0.0, 0.0, 0.0], 1, 30)
        for privacy in (dict(total_budget=None), dict(total_budget=1.0)):
            cfg = _cfg(algorithm="dp_sgd", rounds=3, **privacy)
            res = run_experiment(cfg, 1, train, test)
            for c in res.clients:
                np.testing.assert_array_equal(c.x, np.zeros(3))

    def test_ignores_client_sampling(self, small_cfg, small_data):
        cfg = replace(small_cfg, algorithm="dp_sgd", clients_per_round=2)
        res = run_experiment(cfg, 1, *small_data)
        assert all(c.ledger.participations == cfg.rounds for c in res.clients)

    def test_noise_sigma_recorded_when_private(self, small_cfg, small_data):
        cfg = replace(small_cfg, algorithm="dp_sgd")
        res = run_experiment(cfg, 1, *small_data)
        assert all(r.noise_sigma > 0 for r in res.records[1:])

    def test_single_client_round_matches_manual_replay(self, small_cfg, small_data):
        # recompute the full noisy update from the client's own stream
        train, test = small_data
        cfg = replace(
            small_cfg, algorithm="dp_sgd", n_clients=1, clients_per_round=1, rounds=1
        )
        res = run_experiment(cfg, 5, train, test)
        sim = DpSgdSimulation(cfg, 5, train, test)
        shard, client = sim.shards[0], sim.clients[0]
        rng = client_stream(5, 0)
        gamma = sim.client_gamma(client, 1)
        batch = sample_minibatch(shard.n, 10, "WOR", rng)
        A, labels = shard.X[batch], shard.y[batch]
        s = 1.0 / (1.0 + np.exp(labels * (A @ np.zeros(train.d))))
        norms = s * np.linalg.norm(A, axis=1)
        clip = float(np.median(norms))
        factors = np.where(norms > clip, clip / norms, 1.0)
        g = A.T @ (-labels * s * factors) / 10
        sigma = 2 * clip * np.sqrt(2 * np.log(1.25 / cfg.delta)) / (10 * client.eps_round)
        noisy = g + sigma * rng.standard_normal(train.d)
        want = -noisy / gamma  # x0 = 0, sign(0) = 0
        np.testing.assert_allclose(res.clients[0].x, want, rtol=1e-10, atol=1e-14)


class TestDpFedAvg:
    def test_single_step_equals_mean_of_sgd_models(self, small_data):
        train, test = small_data
        cfg = _cfg(
            algorithm="dp_fedavg",
            n_clients=4,
            clients_per_round=4,
            rounds=1,
            fedavg_clip=1e6,
            synthetic_d=train.d,
        )
        res = run_experiment(cfg, 2, train, test)
        sim = DpFedAvgSimulation(replace(cfg, rounds=0), 2, train, test)
        models = []
        for i in range(4):
            rng = client_stream(2, i)
            gamma = sim.client_gamma(sim.clients[i], 1)
            batch = sample_minibatch(sim.shards[i].n, 10, "WOR", rng)
            g = logistic_grad(
                np.zeros(train.d), sim.shards[i].X[batch], sim.shards[i].y[batch]
            )  # sign(0) drops the l1 term at x0 = 0
            models.append(-g / gamma)
        np.testing.assert_allclose(
            res.server.x0, np.mean(models, axis=0), rtol=1e-10, atol=1e-14
        )

    def test_sampled_only_average(self, small_cfg, small_data):
        cfg = replace(small_cfg, algorithm="dp_fedavg", total_budget=None, rounds=1)
        train, test = small_data
        sim = DpFedAvgSimulation(cfg, 1, train, test)
        sim.run_round()
        active = [i for i in range(10) if sim.clients[i].ledger.participations]
        assert len(active) == cfg.clients_per_round
        uploads = [sim.server.registry[i] for i in active]
        np.testing.assert_allclose(sim.server.x0, np.mean(uploads, axis=0), rtol=1e-12)

    def test_oversized_delta_clipped_to_bound(self, small_cfg, small_data):
        train, test = small_data
        clip = 1e-3  # far below any raw one-round delta
        cfg = replace(
            small_cfg, algorithm="dp_fedavg", total_budget=None, rounds=1,
            fedavg_clip=clip,
        )
        sim = DpFedAvgSimulation(cfg, 1, train, test)
        x0_before = sim.server.x0.copy()
        sim.run_round()
        active = [i for i in range(10) if sim.clients[i].ledger.participations]
        for i in active:
            delta = sim.server.registry[i] - x0_before
            assert np.linalg.norm(delta) == pytest.approx(clip, rel=1e-9)

    def test_identical_shards_collapse_to_local_training(self):
        # all samples identical and full batches: every client walks the same
        # path, so the global model equals one client's local training
        train = _dup_dataset([0.5, 0.1, -0.3], -1, 90)
        test = _dup_dataset([0.5, 0.1, -0.3], -1, 30)
        cfg = _cfg(
            algorithm="dp_fedavg", rounds=2, local_steps=3, batch_size=30,
            fedavg_clip=1e6,
        )
        res = run_experiment(cfg, 3, train, test)
        sim = DpFedAvgSimulation(replace(cfg, rounds=0), 3, train, test)
        x0 = np.zeros(3)
        for t in (1, 2):
            gamma = sim.client_gamma(sim.clients[0], t)
            x = x0.copy()
            for _ in range(3):
                g = logistic_grad(x, train.X[:30], train.y[:30])
                g = g + cfg.lambda_reg * np.sign(x)
                x -= g / gamma
            x0 = x
        np.testing.assert_allclose(res.server.x0, x0, rtol=1e-10, atol=1e-14)

    def test_consensus_gap_column_is_zero(self, small_cfg, small_data):
        cfg = replace(small_cfg, algorithm="dp_fedavg")
        res = run_experiment(cfg, 1, *small_data)
        assert all(r.consensus_gap == 0.0 for r in res.records)


class TestDpAdmm:
    def _pair(self, small_cfg):
        return replace(
            small_cfg, algorithm="dp_admm", total_budget=None, per_round_eps=None
        )

    def test_coincides_with_engine_when_l1_off(self, small_cfg, small_data):
        # lambda_reg=0 turns the proximal map into the identity; with full
        # batches and full participation both loops take the same steps
        train, test = small_data
        shared = dict(
            total_budget=None, lambda_reg=0.0, clients_per_round=10,
            batch_size=100, local_steps=1, rounds=3,
        )
        spd = run_experiment(replace(small_cfg, **shared), 1, train, test)
        admm = run_experiment(
            replace(small_cfg, algorithm="dp_admm", **shared), 1, train, test
        )
        for a, b in zip(spd.records, admm.records):
            assert a.alfv == pytest.approx(b.alfv, rel=1e-9)
            assert a.test_accuracy == b.test_accuracy
        for ca, cb in zip(spd.clients, admm.clients):
            np.testing.assert_allclose(ca.x, cb.x, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(ca.lam, cb.lam, rtol=1e-9, atol=1e-12)

    def test_dual_identity_exact(self, small_cfg, small_data):
        train, test = small_data
        sim = DpAdmmSimulation(self._pair(small_cfg), 1, train, test)
        sim.run_round()
        x0 = sim.server.x0
        for c in sim.clients:
            np.testing.assert_array_equal(c.lam, -sim.hp.rho * (c.x - x0))

    def test_first_round_subgradient_step(self, small_cfg, small_data):
        # x_prev = 0 so sign(0) = 0 removes the l1 term entirely
        train, test = small_data
        sim = DpAdmmSimulation(self._pair(small_cfg), 1, train, test)
        sim.run_round()
        gamma = sim.client_gamma(sim.clients[0], 1)
        for i, c in enumerate(sim.clients):
            g = logistic_grad(np.zeros(train.d), sim.shards[i].X, sim.shards[i].y)
            np.testing.assert_allclose(
                c.x, -g / (gamma + sim.hp.rho), rtol=1e-12, atol=1e-15
            )

    def test_full_participation_and_unamplified_ledger(self, small_cfg, small_data):
        cfg = replace(
            small_cfg, algorithm="dp_admm", total_budget=None, per_round_eps=0.3,
            clients_per_round=4,
        )
        res = run_experiment(cfg, 1, *small_data)
        assert all(c.ledger.participations == cfg.rounds for c in res.clients)
        assert all(c.q is None and not c.ledger.subsampled for c in res.clients)
        # basic composition: t rounds of eps each
        assert res.records[-1].spent_eps_closed == pytest.approx(cfg.rounds * 0.3)

    def test_noise_matches_single_step_calibration(self, small_cfg, small_data):
        from fedspd.privacy import noise_scale

        cfg = replace(
            small_cfg, algorithm="dp_admm", total_budget=None, per_round_eps=0.3
        )
        res = run_experiment(cfg, 1, *small_data)
        rec = res.records[1]
        want = noise_scale(1, cfg.grad_clip, cfg.rho + rec.gamma, 0.3, cfg.delta)
        assert rec.noise_sigma == pytest.approx(want, rel=1e-12)

    def test_requires_per_round_budget_when_private(self, small_cfg, small_data):
        train, test = small_data
        cfg = replace(small_cfg, algorithm="dp_admm", total_budget=1.0)
        with pytest.raises(ConfigError, match="per_round_eps|per-round"):
            DpAdmmSimulation(cfg, 1, train, test)


class TestSharedContract:
    @pytest.mark.parametrize(
        "algo,extra",
        [
            ("dp_sgd", dict(total_budget=1.0)),
            ("dp_fedavg", dict(total_budget=1.0)),
            ("dp_admm", dict(total_budget=None, per_round_eps=0.3)),
        ],
    )
    def test_rerun_byte_identical(self, algo, extra, small_cfg, small_data):
        cfg = replace(small_cfg, algorithm=algo, **extra)
        a = run_experiment(cfg, 1, *small_data)
        b = run_experiment(cfg, 1, *small_data)
        assert [r.csv_row() for r in a.records] == [r.csv_row() for r in b.records]

    def test_dispatch_by_algorithm_key(self, small_cfg, small_data):
        for algo in ("dp_sgd", "dp_fedavg"):
            cfg = replace(small_cfg, algorithm=algo)
            assert run_experiment(cfg, 1, *small_data).summary["algorithm"] == algo

    def test_unknown_kind_rejected(self, small_cfg, small_data):
        cfg = replace(small_cfg, algorithm="magic")
        with pytest.raises(ConfigError, match="unknown baseline"):
            run_baseline(cfg, 1, *small_data)
