"""Gaussian-mechanism calibration and per-client privacy accounting.

Two views of the total privacy loss are provided and both appear in run
artifacts:

* a closed-form bound  eps_total = c0 * q * eps * sqrt(p*T / (1-q))  over T
  rounds with client-participation fraction p and per-round budget (eps,
  delta), together with its inversion that turns a total budget into a
  per-round eps;
* a numeric ledger that composes log moments of the subsampled Gaussian
  mechanism over the rounds a client actually participated in and converts
  back to an epsilon at a target delta.

The per-round log moment of order tau is

    alpha(tau) = q^2/(1-q) * tau*(tau+1) * eps^2 / (4 ln(1.25/delta)),

dropping the amplification factor q^2/(1-q) for mechanisms that consume the
whole shard every round (the full-batch baseline regime).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

DEFAULT_C0 = 3.04
DEFAULT_TAU_MAX = 64


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def _check_q(q):
    if not 0.0 < q < 1.0:
        raise ValueError(f"sampling ratio q must lie in (0, 1), got {q}")


def sensitivity(Q, G, rho_plus_gamma):
    """l2 sensitivity of a client upload after Q clipped local steps.

    4*G/(rho+gamma) for a single step, 4*Q*G/((Q-1)*(rho+gamma)) otherwise.
    """
    if Q < 1:
        raise ValueError(f"Q must be >= 1, got {Q}")
    if G <= 0.0 or rho_plus_gamma <= 0.0:
        raise ValueError("G and rho+gamma must be positive")
    if Q == 1:
        return 4.0 * G / rho_plus_gamma
    return 4.0 * Q * G / ((Q - 1) * rho_plus_gamma)


def noise_scale(Q, G, rho_plus_gamma, eps, delta):
    """Gaussian std giving (eps, delta)-DP for one upload of the above sensitivity."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    _check_delta(delta)
    s = sensitivity(Q, G, rho_plus_gamma)
    return s * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


def gaussian_perturb(v, sigma, rng):
    """v plus isotropic Gaussian noise of std sigma (sigma=0 returns a copy)."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    import numpy as np

    v = np.asarray(v, dtype=np.float64)
    if sigma == 0.0:
        return v.copy()
    return v + sigma * rng.standard_normal(v.shape)


def data_sampling_ratio(Q, b, m, mode):
    """Fraction of a shard of size m touched by Q mini-batches of size b.

    WOR counts distinct draws, q = Q*b/m (requires Q*b <= m); WR uses the
    inclusion probability q = 1 - (1 - 1/m)^(Q*b).
    """
    if Q < 1 or b < 1 or m < 1:
        raise ValueError(f"Q, b, m must be >= 1, got Q={Q}, b={b}, m={m}")
    if mode == "WOR":
        if Q * b > m:
            raise ValueError(f"WOR requires Q*b <= m, got Q*b={Q * b}, m={m}")
        return Q * b / m
    if mode == "WR":
        return 1.0 - (1.0 - 1.0 / m) ** (Q * b)
    raise ValueError(f"sampling mode must be 'WOR' or 'WR', got {mode!r}")


def total_privacy_loss_closed_form(eps, q, p, T, c0=DEFAULT_C0):
    """Closed-form total loss c0 * q * eps * sqrt(p*T/(1-q)) after T rounds."""
    if T < 0:
        raise ValueError(f"T must be nonnegative, got {T}")
    if T == 0:
        return 0.0
    _check_q(q)
    if eps <= 0.0 or not 0.0 < p <= 1.0 or c0 <= 0.0:
        raise ValueError("need eps > 0, p in (0, 1], c0 > 0")
    return c0 * q * eps * math.sqrt(p * T / (1.0 - q))


def per_round_epsilon(eps_bar, q, p, T, c0=DEFAULT_C0):
    """Per-round eps whose closed-form total over T rounds equals eps_bar."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    _check_q(q)
    if eps_bar <= 0.0 or not 0.0 < p <= 1.0 or c0 <= 0.0:
        raise ValueError("need eps_bar > 0, p in (0, 1], c0 > 0")
    return eps_bar * math.sqrt(1.0 - q) / (c0 * q * math.sqrt(p * T))


def log_moment(tau, q, eps, delta):
    """Order-tau log moment of one subsampled Gaussian round."""
    if tau < 1 or int(tau) != tau:
        raise ValueError(f"tau must be a positive integer, got {tau}")
    _check_q(q)
    _check_delta(delta)
    if eps < 0.0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if eps == 0.0:
        return 0.0
    amp = q * q / (1.0 - q)
    return amp * tau * (tau + 1.0) * eps * eps / (4.0 * math.log(1.25 / delta))


def log_moment_full(tau, eps, delta):
    """Order-tau log moment of one full-batch Gaussian round (no amplification)."""
    if tau < 1 or int(tau) != tau:
        raise ValueError(f"tau must be a positive integer, got {tau}")
    _check_delta(delta)
    if eps < 0.0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if eps == 0.0:
        return 0.0
    return tau * (tau + 1.0) * eps * eps / (4.0 * math.log(1.25 / delta))


@lru_cache(maxsize=1 << 16)
def ledger_spent_epsilon(
    count, q, eps, delta, tau_max=DEFAULT_TAU_MAX, subsampled=True, target_delta=None
):
    """Epsilon after composing ``count`` rounds of the mechanism.

    Minimises (count*alpha(tau) + ln(1/target_delta))/tau over integer tau in
    [1, tau_max]. The moments use the mechanism delta; the conversion uses
    target_delta, which defaults to the same value. ``count`` may be
    fractional (expected participations).
    """
    if count < 0.0:
        raise ValueError(f"count must be nonnegative, got {count}")
    if tau_max < 1:
        raise ValueError(f"tau_max must be >= 1, got {tau_max}")
    if count == 0.0:
        return 0.0
    if target_delta is None:
        target_delta = delta
    _check_delta(delta)
    _check_delta(target_delta)
    best = math.inf
    log_inv_delta = math.log(1.0 / target_delta)
    for tau in range(1, tau_max + 1):
        if subsampled:
            alpha = log_moment(tau, q, eps, delta)
        else:
            alpha = log_moment_full(tau, eps, delta)
        best = min(best, (count * alpha + log_inv_delta) / tau)
    return best


@dataclass
class PrivacyLedger:
    """Per-client moments accountant over realized participations.

    ``eps_round=None`` marks a noiseless run: participations are still
    counted but the spent budget is reported as zero.
    """

    q: float
    eps_round: float | None
    delta: float
    subsampled: bool = True
    tau_max: int = DEFAULT_TAU_MAX
    participations: int = 0

    def __post_init__(self):
        if self.eps_round is not None:
            if self.eps_round <= 0.0:
                raise ValueError(f"eps_round must be positive, got {self.eps_round}")
            _check_delta(self.delta)
            if self.subsampled:
                _check_q(self.q)

    def record_participation(self, rounds=1):
        if rounds < 0:
            raise ValueError(f"rounds must be nonnegative, got {rounds}")
        self.participations += rounds

    def total_log_moment(self, tau):
        if self.eps_round is None:
            return 0.0
        if self.subsampled:
            alpha = log_moment(tau, self.q, self.eps_round, self.delta)
        else:
            alpha = log_moment_full(tau, self.eps_round, self.delta)
        return self.participations * alpha

    def spent_epsilon(self, target_delta=None):
        """Total epsilon at target_delta (defaults to the mechanism delta)."""
        if self.eps_round is None or self.participations == 0:
            return 0.0
        return ledger_spent_epsilon(
            self.participations,
            self.q,
            self.eps_round,
            self.delta,
            tau_max=self.tau_max,
            subsampled=self.subsampled,
            target_delta=target_delta,
        )
