"""Federated stochastic primal-dual training loop and experiment driver.

One communication round proceeds server-side aggregation first: the server
averages the most recently received uploads (stale entries allowed),
broadcasts that average x0, samples the active subset, and the active
clients each run Q proximal SGD steps, average the inner iterates, update
their dual, and deposit a Gaussian-perturbed upload back into the registry.
Inactive clients keep all state bit-identical.

Determinism contract: every random draw comes from a named stream derived
from the master seed (see sampling module), each client owns its stream, and
registry commits happen at the round barrier in ascending client index, so
parallel and sequential client execution produce identical artifacts.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .bench import RoundRecord, alfv, consensus_gap
from .config import ConfigError, ExperimentConfig
from .datastore import (
    Dataset,
    generate_synthetic,
    load_adult,
    load_libsvm,
    partition_uniform,
)
from .linmodel import accuracy, clip_to_norm, prox_l1
from .privacy import (
    DEFAULT_C0,
    PrivacyLedger,
    data_sampling_ratio,
    gaussian_perturb,
    noise_scale,
    per_round_epsilon,
    total_privacy_loss_closed_form,
)
from .sampling import (
    STREAM_DATA,
    STREAM_PARTITION,
    STREAM_SERVER,
    client_stream,
    rng_stream,
    sample_clients,
    sample_minibatch,
)


@dataclass
class HyperParams:
    """Optimization constants; defaults follow the reference experiment."""

    rho: float = 20.0
    lam_reg: float = 0.01
    grad_clip: float = 1.0  # G, the mini-batch gradient clip bound
    d_x: float = 1.0
    d_lambda: float = 1.0
    phi: float = 1.0
    c0: float = DEFAULT_C0
    dual_projection: bool = False  # optional projection of duals onto d_lambda ball


@dataclass
class DpParams:
    """Privacy regime: a total budget, a fixed per-round eps, or off."""

    total_budget: float | None = None
    per_round_eps: float | None = None
    delta: float = 1e-4
    tau_max: int = 64

    @property
    def enabled(self):
        return self.total_budget is not None or self.per_round_eps is not None


@dataclass
class ClientState:
    index: int
    x: np.ndarray
    lam: np.ndarray
    x_inner_last: np.ndarray
    upload: np.ndarray
    ledger: PrivacyLedger
    q: float | None
    eps_round: float | None
    x_running_avg: np.ndarray


@dataclass
class ServerState:
    x0: np.ndarray
    registry: np.ndarray
    x0_running_avg: np.ndarray
    round: int = 0


@dataclass
class RunResult:
    records: list
    summary: dict
    server: ServerState
    clients: list
    ledger_mean: list = field(default_factory=list)


def gamma_schedule(t, Q, p, b, eps, delta, rho, d, hp):
    """Step-size parameter gamma at round t (grows like sqrt(t)).

    gamma = (2*sqrt(Q*p*C)/d_x) * sqrt(t) with
    C = G^2 + 2*d_lambda^2 + 2*phi^2/b plus, under DP, the noise term
    16*rho*d*G^2*ln(1.25/delta) / ((Q-1)^2 * eps^2), where (Q-1)^2 is
    replaced by 1 when Q = 1. ``eps=None`` selects the noiseless constant.
    """
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    if Q < 1 or b < 1:
        raise ValueError(f"need Q >= 1 and b >= 1, got Q={Q}, b={b}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"participation fraction must lie in (0, 1], got {p}")
    G = hp.grad_clip
    C = G * G + 2.0 * hp.d_lambda**2 + 2.0 * hp.phi**2 / b
    if eps is not None:
        if eps <= 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        denom = float((Q - 1) ** 2) if Q > 1 else 1.0
        C += 16.0 * rho * d * G * G * math.log(1.25 / delta) / (denom * eps * eps)
    return 2.0 * math.sqrt(Q * p * C) / hp.d_x * math.sqrt(t)


def server_aggregate(registry):
    """Mean of the latest uploads, accumulated in ascending client index."""
    return np.asarray(backends.ordered_mean(registry))


def local_sgd_step(x_prev, x0, lam, grad, gamma, rho, lam_reg):
    """One proximal step of the linearized local subproblem."""
    if gamma <= 0.0 or rho <= 0.0:
        raise ValueError("gamma and rho must be positive")
    v = (gamma * x_prev + rho * x0 + lam - grad) / (gamma + rho)
    return prox_l1(v, lam_reg / (gamma + rho))


def client_local_round(client, shard, x0, gamma, sigma, Q, b, mode, hp, rng):
    """One active round for one client; pure, returns the new pieces.

    Draw order per round is fixed: Q mini-batches first, then the noise
    vector. Returns (x_round, x_inner_last, lam_new, upload).
    """
    if b < 1 or Q < 1:
        raise ValueError(f"invalid batch config Q={Q}, b={b}")
    batches = np.stack([sample_minibatch(shard.n, b, mode, rng) for _ in range(Q)])
    x_round, x_last = backends.local_round(
        shard.X,
        shard.y,
        batches,
        client.x_inner_last,
        x0,
        client.lam,
        gamma,
        hp.rho,
        hp.lam_reg,
        hp.grad_clip,
    )
    x_round = np.asarray(x_round)
    lam_new = client.lam - hp.rho * (x_round - x0)
    if hp.dual_projection:
        lam_new = clip_to_norm(lam_new, hp.d_lambda)
    upload = gaussian_perturb(x_round - lam_new / hp.rho, sigma, rng)
    return x_round, np.asarray(x_last), lam_new, upload


def _welford(mean, value, n):
    """In-place running mean over n observations (value is the n-th)."""
    mean += (value - mean) / n


class Simulation:
    """Assembled state of one run: data shards, states, streams, schedule.

    Subclasses (the baselines) override the round body, the per-client
    privacy parameters and the (Q, p) pair fed to the step-size schedule;
    everything else (streams, registry, metrics, records) is shared.
    """

    def __init__(self, cfg: ExperimentConfig, master_seed, train, test):
        self.cfg = cfg
        self.master_seed = master_seed
        self.train = train
        self.test = test
        self.hp = hyperparams_from_config(cfg)
        self.dp = dp_from_config(cfg)
        self.shards = partition_uniform(
            train, cfg.n_clients, rng_stream(cfg.data_seed, STREAM_PARTITION)
        )
        self.p = self._participation()
        self.d = train.d
        self.gamma_Q, self.gamma_p = self._schedule_shape()
        self._validate()

        n, d = cfg.n_clients, self.d
        self.server_rng = rng_stream(master_seed, STREAM_SERVER)
        self.client_rngs = [client_stream(master_seed, i) for i in range(n)]
        self.server = ServerState(
            x0=np.zeros(d), registry=np.zeros((n, d)), x0_running_avg=np.zeros(d)
        )
        self.clients = []
        for i, shard in enumerate(self.shards):
            q, eps, subsampled = self._client_privacy(shard.n)
            ledger = PrivacyLedger(
                q=q,
                eps_round=eps,
                delta=self.dp.delta,
                subsampled=subsampled,
                tau_max=self.dp.tau_max,
            )
            self.clients.append(
                ClientState(
                    index=i,
                    x=np.zeros(d),
                    lam=np.zeros(d),
                    x_inner_last=np.zeros(d),
                    upload=np.zeros(d),
                    ledger=ledger,
                    q=q,
                    eps_round=eps,
                    x_running_avg=np.zeros(d),
                )
            )
        self.records = []
        self.ledger_mean = []
        self.gamma_violation_round = None
        self.wallclock_total = 0.0

    # -- algorithm-specific hooks -------------------------------------------

    def _participation(self):
        """Fraction of clients active per round."""
        return self.cfg.clients_per_round / self.cfg.n_clients

    def _schedule_shape(self):
        """(Q, p) pair entering the gamma schedule."""
        return self.cfg.local_steps, self.p

    def _client_privacy(self, shard_size):
        """(q, per-round eps, subsampled flag) for one client."""
        q, eps = subsampling_and_eps(self.cfg, self.dp, shard_size, self.p)
        return q, eps, True

    def _validate(self):
        validate_runtime(self.cfg, self.shards, self.dp)

    # -- round machinery ---------------------------------------------------

    def client_gamma(self, client, t):
        return gamma_schedule(
            t,
            self.gamma_Q,
            self.gamma_p,
            self.cfg.batch_size,
            client.eps_round,
            self.dp.delta,
            self.hp.rho,
            self.d,
            self.hp,
        )

    def run_round(self):
        cfg, hp = self.cfg, self.hp
        t = self.server.round + 1
        start = time.perf_counter()

        x0 = server_aggregate(self.server.registry)
        self.server.x0 = x0
        if cfg.clients_per_round < cfg.n_clients:
            active = sample_clients(
                cfg.n_clients, cfg.clients_per_round, self.server_rng
            )
        else:
            active = np.arange(cfg.n_clients, dtype=np.int64)

        gammas = {}
        sigmas = {}
        for i in active:
            client = self.clients[i]
            g = self.client_gamma(client, t)
            gammas[i] = g
            if self.dp.enabled:
                sigmas[i] = noise_scale(
                    cfg.local_steps,
                    hp.grad_clip,
                    hp.rho + g,
                    client.eps_round,
                    self.dp.delta,
                )
            else:
                sigmas[i] = 0.0

        def work(i):
            return client_local_round(
                self.clients[i],
                self.shards[i],
                x0,
                gammas[i],
                sigmas[i],
                cfg.local_steps,
                cfg.batch_size,
                cfg.sampling,
                hp,
                self.client_rngs[i],
            )

        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(work, active))
        else:
            results = [work(i) for i in active]

        # commit at the barrier, ascending client index (active is sorted)
        for i, (x_round, x_last, lam_new, upload) in zip(active, results):
            client = self.clients[i]
            client.x = x_round
            client.x_inner_last = x_last
            client.lam = lam_new
            client.upload = upload
            self.server.registry[i] = upload
            client.ledger.record_participation()

        self._finish_round(t, x0, max(sigmas.values()), max(gammas.values()), start)

    def _finish_round(self, t, x0_metric, sigma, gamma, start):
        """Shared round tail: running averages, monitors, the record."""
        for client in self.clients:
            _welford(client.x_running_avg, client.x, t)
        _welford(self.server.x0_running_avg, x0_metric, t)
        self.server.round = t
        if self.gamma_violation_round is None and self.hp.rho < math.sqrt(gamma):
            self.gamma_violation_round = t
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        self.wallclock_total += elapsed_ms
        self.record_round(
            t,
            x0_metric,
            sigma=sigma,
            gamma=gamma,
            wallclock_ms=elapsed_ms if self.cfg.record_timing else 0.0,
        )

    # -- metrics -----------------------------------------------------------

    def spent_eps_closed(self, t):
        if not self.dp.enabled or t == 0:
            return 0.0
        total = 0.0
        for c in self.clients:
            if c.q is None:
                # no subsampling amplification: basic composition bound
                total = max(total, t * c.eps_round)
            else:
                total = max(
                    total,
                    total_privacy_loss_closed_form(
                        c.eps_round, c.q, self.gamma_p, t, self.hp.c0
                    ),
                )
        return total

    def record_round(self, t, x0, sigma, gamma, wallclock_ms):
        cfg = self.cfg
        xs = [c.x for c in self.clients]
        lams = [c.lam for c in self.clients]
        with_alfv = cfg.metric_stride == 1 or t % cfg.metric_stride == 0 or t == cfg.rounds
        spent = [c.ledger.spent_epsilon() for c in self.clients]
        self.ledger_mean.append(sum(spent) / len(spent))
        self.records.append(
            RoundRecord(
                round=t,
                alfv=alfv(xs, lams, self.shards, x0, self.hp.lam_reg, self.hp.rho)
                if with_alfv
                else float("nan"),
                test_accuracy=accuracy(x0, self.test.X, self.test.y),
                consensus_gap=consensus_gap(xs, x0),
                spent_eps_closed=self.spent_eps_closed(t),
                spent_eps_ledger=max(spent),
                noise_sigma=sigma,
                gamma=gamma,
                wallclock_ms=wallclock_ms,
            )
        )

    def run(self):
        self.record_round(0, self.server.x0, sigma=0.0, gamma=0.0, wallclock_ms=0.0)
        for _ in range(self.cfg.rounds):
            self.run_round()
        return RunResult(
            records=self.records,
            summary=self.summary(),
            server=self.server,
            clients=self.clients,
            ledger_mean=self.ledger_mean,
        )

    def summary(self):
        from . import __version__

        last = self.records[-1]
        qs = [c.q for c in self.clients if c.q is not None]
        epss = [c.eps_round for c in self.clients if c.eps_round is not None]
        spent = [c.ledger.spent_epsilon() for c in self.clients]
        return {
            "version": __version__,
            "algorithm": self.cfg.algorithm,
            "backend": backends.active_backend(),
            "master_seed": self.master_seed,
            "rounds": self.cfg.rounds,
            "d": self.d,
            "n_train": self.train.n,
            "n_test": self.test.n,
            "n_clients": self.cfg.n_clients,
            "clients_per_round": self.cfg.clients_per_round,
            "shard_sizes": [min(s.n for s in self.shards), max(s.n for s in self.shards)],
            "q_range": [min(qs), max(qs)] if qs else None,
            "per_round_eps_range": [min(epss), max(epss)] if epss else None,
            "gamma_condition_first_violation": self.gamma_violation_round,
            "final_alfv": last.alfv,
            "final_accuracy": last.test_accuracy,
            "final_consensus_gap": last.consensus_gap,
            "spent_eps_closed_final": last.spent_eps_closed,
            "spent_eps_ledger_max_final": max(spent),
            "spent_eps_ledger_mean_final": sum(spent) / len(spent),
            # suppressed timing keeps repeat runs byte-identical
            "wallclock_total_ms": self.wallclock_total if self.cfg.record_timing else 0.0,
        }


# ---------------------------------------------------------------------------
# config plumbing shared with the baselines


def hyperparams_from_config(cfg):
    return HyperParams(
        rho=cfg.rho,
        lam_reg=cfg.lambda_reg,
        grad_clip=cfg.grad_clip,
        d_x=cfg.d_x,
        d_lambda=cfg.d_lambda,
        phi=cfg.phi,
        c0=cfg.c0,
        dual_projection=cfg.dual_projection,
    )


def dp_from_config(cfg):
    return DpParams(
        total_budget=cfg.total_budget,
        per_round_eps=cfg.per_round_eps,
        delta=cfg.delta,
        tau_max=cfg.tau_max,
    )


def subsampling_and_eps(cfg, dp, shard_size, p, local_steps=None):
    """Per-client (q, per-round eps); (None, None) when privacy is off."""
    if not dp.enabled:
        return None, None
    Q = cfg.local_steps if local_steps is None else local_steps
    q = data_sampling_ratio(Q, cfg.batch_size, shard_size, cfg.sampling)
    if dp.per_round_eps is not None:
        return q, dp.per_round_eps
    if cfg.rounds == 0:
        return q, None
    eps = per_round_epsilon(dp.total_budget, q, p, cfg.rounds, cfg.c0)
    return q, eps


def validate_runtime(cfg, shards, dp):
    """Checks that need the partition: batch feasibility and q < 1."""
    min_shard = min(s.n for s in shards)
    if cfg.sampling == "WOR" and cfg.batch_size > min_shard:
        raise ConfigError(
            f"federation.batch_size: WOR batch of {cfg.batch_size} exceeds the "
            f"smallest shard ({min_shard} samples)"
        )
    if dp.enabled:
        for s in shards:
            q = data_sampling_ratio(
                cfg.local_steps, cfg.batch_size, s.n, cfg.sampling
            )
            if q >= 1.0:
                raise ConfigError(
                    f"privacy: sampling ratio q={q:.6g} >= 1 for a shard of "
                    f"{s.n} samples; the accountant requires q < 1"
                )


def load_data(cfg):
    """Materialize the (train, test) pair named by the config."""
    if cfg.data_source == "synthetic":
        rng = rng_stream(cfg.data_seed, STREAM_DATA)
        full = generate_synthetic(
            cfg.synthetic_d,
            cfg.synthetic_train + cfg.synthetic_test,
            cfg.synthetic_margin,
            cfg.synthetic_label_noise,
            rng,
        )
        train = Dataset(
            full.X[: cfg.synthetic_train],
            full.y[: cfg.synthetic_train],
            source=full.source + "#train",
        )
        test = Dataset(
            full.X[cfg.synthetic_train :],
            full.y[cfg.synthetic_train :],
            source=full.source + "#test",
        )
        return train, test
    if cfg.data_source == "adult":
        return load_adult(cfg.adult_train, cfg.adult_test)
    if cfg.data_source == "libsvm":
        train = load_libsvm(cfg.libsvm_train)
        test = load_libsvm(cfg.libsvm_test, d=train.d)
        return train, test
    raise ConfigError(f"data.source: unknown source {cfg.data_source!r}")


def run_round(sim):
    """Advance one communication round (see Simulation.run_round)."""
    sim.run_round()


def run_experiment(cfg, master_seed=None, train=None, test=None):
    """Execute one full run for one master seed; fully deterministic."""
    if master_seed is None:
        master_seed = cfg.seeds[0]
    if train is None or test is None:
        train, test = load_data(cfg)
    if cfg.algorithm == "fedspd_dp":
        return Simulation(cfg, master_seed, train, test).run()
    from . import baselines

    return baselines.run_baseline(cfg, master_seed, train, test)
