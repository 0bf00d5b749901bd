"""Comparison algorithms: DP-SGD, DP-FedAvg and DP-ADMM.

All three share the engine's substrate (streams, registry, metrics, records)
and its determinism contract; each overrides only the round body and the
privacy bookkeeping that differ:

* DP-SGD: full participation, one SGD step per round on a mini-batch of
  per-sample-clipped gradients; the clip bound is the median of the current
  batch's unclipped gradient norms; noise calibrated to that bound is added
  to the averaged gradient before upload.
* DP-FedAvg: sampled participation, Q local SGD steps from the broadcast
  model, model delta clipped to a fixed bound C, noise with
  sigma = 2C*sqrt(2 ln(1.25/delta))/eps, sampled-only averaging.
* DP-ADMM: full participation, one subgradient step on the augmented
  Lagrangian over the whole shard, dual update and perturbed upload exactly
  as the primal-dual engine with Q = 1 (so with lambda_reg = 0 and matching
  batches the two coincide step for step).

Step sizes default to 1/gamma with the same schedule as the main algorithm,
evaluated at each baseline's own (Q, p).
"""

from __future__ import annotations

import math
import time

import numpy as np

from .config import ConfigError
from .engine import Simulation, server_aggregate, subsampling_and_eps
from .linmodel import clip_to_norm, logistic_grad, sigmoid
from .privacy import (
    data_sampling_ratio,
    gaussian_perturb,
    noise_scale,
    per_round_epsilon,
)
from .sampling import sample_clients, sample_minibatch


class DpSgdSimulation(Simulation):
    """One noisy clipped-gradient step per client per round, full participation."""

    def _participation(self):
        return 1.0

    def _schedule_shape(self):
        return 1, 1.0

    def _client_privacy(self, shard_size):
        if not self.dp.enabled:
            return None, None, True
        q = data_sampling_ratio(1, self.cfg.batch_size, shard_size, self.cfg.sampling)
        if self.dp.per_round_eps is not None:
            return q, self.dp.per_round_eps, True
        if self.cfg.rounds == 0:
            return q, None, True
        eps = per_round_epsilon(self.dp.total_budget, q, 1.0, self.cfg.rounds, self.hp.c0)
        return q, eps, True

    def _validate(self):
        min_shard = min(s.n for s in self.shards)
        if self.cfg.sampling == "WOR" and self.cfg.batch_size > min_shard:
            raise ConfigError(
                f"federation.batch_size: WOR batch of {self.cfg.batch_size} "
                f"exceeds the smallest shard ({min_shard} samples)"
            )
        if self.dp.enabled:
            for s in self.shards:
                q = data_sampling_ratio(
                    1, self.cfg.batch_size, s.n, self.cfg.sampling
                )
                if q >= 1.0:
                    raise ConfigError(
                        f"privacy: sampling ratio q={q:.6g} >= 1 for a shard "
                        f"of {s.n} samples"
                    )

    def run_round(self):
        cfg, hp = self.cfg, self.hp
        t = self.server.round + 1
        start = time.perf_counter()
        x0 = server_aggregate(self.server.registry)
        self.server.x0 = x0
        reg_sub = hp.lam_reg * np.sign(x0)
        noise_factor = math.sqrt(2.0 * math.log(1.25 / self.dp.delta))
        sigma_max = 0.0
        gamma_max = 0.0
        for i, client in enumerate(self.clients):
            shard = self.shards[i]
            rng = self.client_rngs[i]
            gamma = self.client_gamma(client, t)
            gamma_max = max(gamma_max, gamma)
            batch = sample_minibatch(shard.n, cfg.batch_size, cfg.sampling, rng)
            A = shard.X[batch]
            labels = shard.y[batch]
            s = sigmoid(-labels * (A @ x0))
            # per-sample gradient g_j = -labels_j * s_j * A_j, norm = s_j*||A_j||
            norms = s * np.linalg.norm(A, axis=1)
            clip = float(np.median(norms))
            factors = np.where(norms > clip, clip / np.maximum(norms, 1e-300), 1.0)
            g = A.T @ (-labels * s * factors) / cfg.batch_size
            if self.dp.enabled:
                # replace-one sensitivity of the clipped mean is 2*clip/b
                sigma = 2.0 * clip * noise_factor / (cfg.batch_size * client.eps_round)
            else:
                sigma = 0.0
            sigma_max = max(sigma_max, sigma)
            update = gaussian_perturb(g, sigma, rng) + reg_sub
            x_new = x0 - update / gamma
            client.x = x_new
            client.x_inner_last = x_new
            client.upload = x_new
            self.server.registry[i] = x_new
            client.ledger.record_participation()
        self._finish_round(t, x0, sigma_max, gamma_max, start)


class DpFedAvgSimulation(Simulation):
    """Q local SGD steps, clipped model delta, noisy sampled-only averaging."""

    def _client_privacy(self, shard_size):
        q, eps = subsampling_and_eps(self.cfg, self.dp, shard_size, self.p)
        return q, eps, True

    def run_round(self):
        cfg, hp = self.cfg, self.hp
        t = self.server.round + 1
        start = time.perf_counter()
        x0 = self.server.x0
        if cfg.clients_per_round < cfg.n_clients:
            active = sample_clients(cfg.n_clients, cfg.clients_per_round, self.server_rng)
        else:
            active = np.arange(cfg.n_clients, dtype=np.int64)
        noise_factor = math.sqrt(2.0 * math.log(1.25 / self.dp.delta))
        sigma_max = 0.0
        gamma_max = 0.0
        uploads = []
        for i in active:
            client = self.clients[i]
            shard = self.shards[i]
            rng = self.client_rngs[i]
            gamma = self.client_gamma(client, t)
            gamma_max = max(gamma_max, gamma)
            x_loc = x0.copy()
            for _ in range(cfg.local_steps):
                batch = sample_minibatch(shard.n, cfg.batch_size, cfg.sampling, rng)
                A = shard.X[batch]
                labels = shard.y[batch]
                s = sigmoid(-labels * (A @ x_loc))
                g = A.T @ (-labels * s) / cfg.batch_size + hp.lam_reg * np.sign(x_loc)
                x_loc -= g / gamma
            delta = clip_to_norm(x_loc - x0, cfg.fedavg_clip)
            if self.dp.enabled:
                sigma = 2.0 * cfg.fedavg_clip * noise_factor / client.eps_round
            else:
                sigma = 0.0
            sigma_max = max(sigma_max, sigma)
            upload = gaussian_perturb(x0 + delta, sigma, rng)
            uploads.append(upload)
            client.upload = upload
            self.server.registry[i] = upload
            client.ledger.record_participation()
        x0_new = server_aggregate(np.asarray(uploads))
        self.server.x0 = x0_new
        # the global model is the only model; expose it as every client's state
        for client in self.clients:
            client.x = x0_new
            client.x_inner_last = x0_new
        self._finish_round(t, x0_new, sigma_max, gamma_max, start)


class DpAdmmSimulation(Simulation):
    """Linearized subgradient consensus ADMM with perturbed uploads."""

    def _participation(self):
        return 1.0

    def _schedule_shape(self):
        return 1, 1.0

    def _client_privacy(self, shard_size):
        if not self.dp.enabled:
            return None, None, False
        return None, self.dp.per_round_eps, False

    def _validate(self):
        if self.dp.enabled and self.dp.per_round_eps is None:
            raise ConfigError(
                "privacy.per_round_eps: dp_admm requires a per-round budget"
            )

    def run_round(self):
        hp = self.hp
        t = self.server.round + 1
        start = time.perf_counter()
        x0 = server_aggregate(self.server.registry)
        self.server.x0 = x0
        sigma_max = 0.0
        gamma_max = 0.0
        for i, client in enumerate(self.clients):
            shard = self.shards[i]
            rng = self.client_rngs[i]
            gamma = self.client_gamma(client, t)
            gamma_max = max(gamma_max, gamma)
            x_prev = client.x
            g = clip_to_norm(logistic_grad(x_prev, shard.X, shard.y), hp.grad_clip)
            sub = g + hp.lam_reg * np.sign(x_prev)  # sign(0) = 0
            x_new = (gamma * x_prev + hp.rho * x0 + client.lam - sub) / (gamma + hp.rho)
            lam_new = client.lam - hp.rho * (x_new - x0)
            if self.dp.enabled:
                sigma = noise_scale(
                    1, hp.grad_clip, hp.rho + gamma, client.eps_round, self.dp.delta
                )
            else:
                sigma = 0.0
            sigma_max = max(sigma_max, sigma)
            upload = gaussian_perturb(x_new - lam_new / hp.rho, sigma, rng)
            client.x = x_new
            client.x_inner_last = x_new
            client.lam = lam_new
            client.upload = upload
            self.server.registry[i] = upload
            client.ledger.record_participation()
        self._finish_round(t, x0, sigma_max, gamma_max, start)


_KINDS = {
    "dp_sgd": DpSgdSimulation,
    "dp_fedavg": DpFedAvgSimulation,
    "dp_admm": DpAdmmSimulation,
}


def run_baseline(cfg, master_seed, train, test):
    try:
        cls = _KINDS[cfg.algorithm]
    except KeyError:
        raise ConfigError(f"experiment.algorithm: unknown baseline {cfg.algorithm!r}")
    return cls(cfg, master_seed, train, test).run()
