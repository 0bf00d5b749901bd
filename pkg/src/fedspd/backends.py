"""Numeric backend selection: numba-jitted kernels with a pure-numpy fallback.

The hot path of a simulation is the per-client local round (Q proximal
stochastic-gradient steps on a small mini-batch). That loop is implemented
twice: once with explicit loops compiled by numba, once vectorised in numpy.
``FEDSPD_BACKEND`` picks the implementation:

    auto   use numba when importable, else numpy (default)
    numba  require the jitted kernels, fail if numba is missing
    numpy  force the fallback

The two backends agree to floating-point tolerance but are not bit-identical
(BLAS reductions vs. explicit accumulation). Determinism guarantees hold
within a backend. ``benchmarks/bench_backends.py`` compares the two.
"""

import os

import numpy as np

_REQUESTED = os.environ.get("FEDSPD_BACKEND", "auto").strip().lower()
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"FEDSPD_BACKEND must be 'auto', 'numba' or 'numpy', got {_REQUESTED!r}"
    )

_HAVE_NUMBA = False
if _REQUESTED in ("auto", "numba"):
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _REQUESTED == "numba":
            raise


def active_backend():
    """Name of the backend actually in use ('numba' or 'numpy')."""
    return "numba" if _HAVE_NUMBA else "numpy"


def _local_round_py(X, y, batches, x_start, x0, lam, gamma, rho, lam_reg, grad_clip):
    """Run Q proximal SGD steps; return (mean of the Q iterates, last iterate).

    Step r uses the mini-batch rows ``batches[r]`` of the shard (X, y):

        g   = clip(grad of the batch logistic loss at x, grad_clip)
        v   = (gamma*x + rho*x0 + lam - g) / (gamma + rho)
        x   = soft-threshold(v, lam_reg / (gamma + rho))
    """
    n_steps, batch_size = batches.shape
    inv = 1.0 / (gamma + rho)
    thresh = lam_reg * inv
    x = x_start.copy()
    acc = np.zeros_like(x)
    for r in range(n_steps):
        rows = batches[r]
        A = X[rows]
        labels = y[rows]
        z = A @ x
        m = -labels * z
        e = np.exp(-np.abs(m))
        s = np.where(m >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
        g = A.T @ (-labels * s) / batch_size
        norm = float(np.sqrt(g @ g))
        if norm > grad_clip:
            g *= grad_clip / norm
        v = (gamma * x + rho * x0 + lam - g) * inv
        x = np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
        acc += x
    return acc / n_steps, x


def _ordered_mean_py(rows):
    """Mean of the registry rows accumulated in ascending index order."""
    acc = np.zeros(rows.shape[1])
    for i in range(rows.shape[0]):
        acc += rows[i]
    return acc / rows.shape[0]


if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _local_round_nb(X, y, batches, x_start, x0, lam, gamma, rho, lam_reg, grad_clip):
        n_steps, batch_size = batches.shape
        d = x_start.shape[0]
        inv = 1.0 / (gamma + rho)
        thresh = lam_reg * inv
        x = x_start.copy()
        acc = np.zeros(d)
        g = np.empty(d)
        for r in range(n_steps):
            for k in range(d):
                g[k] = 0.0
            for j in range(batch_size):
                i = batches[r, j]
                z = 0.0
                for k in range(d):
                    z += X[i, k] * x[k]
                m = -y[i] * z
                if m >= 0.0:
                    s = 1.0 / (1.0 + np.exp(-m))
                else:
                    e = np.exp(m)
                    s = e / (1.0 + e)
                c = -y[i] * s
                for k in range(d):
                    g[k] += c * X[i, k]
            sq = 0.0
            for k in range(d):
                g[k] /= batch_size
                sq += g[k] * g[k]
            norm = np.sqrt(sq)
            if norm > grad_clip:
                scale = grad_clip / norm
                for k in range(d):
                    g[k] *= scale
            for k in range(d):
                v = (gamma * x[k] + rho * x0[k] + lam[k] - g[k]) * inv
                if v > thresh:
                    x[k] = v - thresh
                elif v < -thresh:
                    x[k] = v + thresh
                else:
                    x[k] = 0.0
                acc[k] += x[k]
        return acc / n_steps, x

    @njit(cache=True, nogil=True)
    def _ordered_mean_nb(rows):
        n, d = rows.shape
        acc = np.zeros(d)
        for i in range(n):
            for k in range(d):
                acc[k] += rows[i, k]
        return acc / n

    local_round = _local_round_nb
    ordered_mean = _ordered_mean_nb
else:
    local_round = _local_round_py
    ordered_mean = _ordered_mean_py


def implementations():
    """Both implementations keyed by backend name, for tests and benchmarks."""
    impls = {"numpy": (_local_round_py, _ordered_mean_py)}
    if _HAVE_NUMBA:
        impls["numba"] = (_local_round_nb, _ordered_mean_nb)
    return impls
