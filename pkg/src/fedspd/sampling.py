"""Deterministic random streams plus client and mini-batch sampling.

Every source of randomness in a run is a named stream derived from the master
seed through a SeedSequence spawn key, so draws for one entity never perturb
another's:

    stream 0            server (client subset selection)
    stream i + 1        client i (mini-batch indices, then the noise draw)
    stream 2**20        synthetic data generation
    stream 2**20 + 1    dataset partitioning

Client counts are validated elsewhere to stay below 2**20 so the ids cannot
collide.
"""

import numpy as np

STREAM_SERVER = 0
STREAM_DATA = 1 << 20
STREAM_PARTITION = (1 << 20) + 1
MAX_CLIENTS = 1 << 20


def rng_stream(master_seed, stream_id):
    """Independent Generator for (master_seed, stream_id)."""
    if stream_id < 0:
        raise ValueError(f"stream id must be nonnegative, got {stream_id}")
    seq = np.random.SeedSequence(master_seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(seq))


def client_stream(master_seed, client_index):
    """Stream owned by one client; index i maps to stream id i + 1."""
    if not 0 <= client_index < MAX_CLIENTS:
        raise ValueError(f"client index out of range: {client_index}")
    return rng_stream(master_seed, client_index + 1)


def sample_clients(n_clients, k, rng):
    """Uniform k-subset of {0..n_clients-1} without replacement, sorted."""
    if not 1 <= k <= n_clients:
        raise ValueError(f"need 1 <= k <= n_clients, got k={k}, n={n_clients}")
    chosen = rng.choice(n_clients, size=k, replace=False)
    chosen.sort()
    return chosen.astype(np.int64)


def sample_minibatch(m, b, mode, rng):
    """b sample indices from a shard of size m.

    WOR draws indices distinct within the batch; WR draws independently with
    replacement. Index dtype is int64 either way.
    """
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    if mode == "WOR":
        if b > m:
            raise ValueError(f"WOR batch of {b} exceeds shard size {m}")
        return rng.choice(m, size=b, replace=False).astype(np.int64)
    if mode == "WR":
        if m < 1:
            raise ValueError(f"shard size must be >= 1, got {m}")
        return rng.integers(0, m, size=b, dtype=np.int64)
    raise ValueError(f"sampling mode must be 'WOR' or 'WR', got {mode!r}")
