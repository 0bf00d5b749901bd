"""Dataset ingestion, preprocessing, partitioning and synthetic generation.

All loaders produce `Dataset` objects: dense float64 features, labels in
{-1, +1}. Preprocessing is deterministic (no RNG anywhere in this module
except where a Generator is passed explicitly), so identical input files
yield byte-identical arrays.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class DataIntegrityError(Exception):
    """Missing, malformed or inconsistent input data."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    source: str = "memory"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError(
                f"labels of shape {self.y.shape} do not match features {self.X.shape}"
            )
        if self.y.size and not np.all(np.abs(self.y) == 1.0):
            raise ValueError("labels must be -1 or +1")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


def partition_uniform(dataset, n_shards, rng):
    """Random permutation split into n_shards near-equal disjoint shards.

    The first (n mod n_shards) shards receive the extra sample, so sizes
    differ by at most one.
    """
    if not 1 <= n_shards <= dataset.n:
        raise ValueError(
            f"need 1 <= n_shards <= {dataset.n} samples, got {n_shards}"
        )
    perm = rng.permutation(dataset.n)
    base, extra = divmod(dataset.n, n_shards)
    shards = []
    start = 0
    for i in range(n_shards):
        size = base + (1 if i < extra else 0)
        rows = perm[start : start + size]
        start += size
        shards.append(
            Dataset(
                dataset.X[rows].copy(),
                dataset.y[rows].copy(),
                source=f"{dataset.source}#shard{i}",
            )
        )
    return shards


def generate_synthetic(d, m, margin, label_noise, rng):
    """Linear classification data with a planted normal vector.

    Features are uniform on the unit sphere in R^d; the label is the sign of
    the inner product with the planted vector; samples with |score| < margin
    are rejected; each label is then flipped with probability label_noise.
    """
    if d < 1 or m < 1:
        raise ValueError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    if not 0.0 <= margin < 0.9:
        raise ValueError(f"margin must lie in [0, 0.9), got {margin}")
    if not 0.0 <= label_noise < 1.0:
        raise ValueError(f"label_noise must lie in [0, 1), got {label_noise}")
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    rows = []
    collected = 0
    block = max(m, 64)
    while collected < m:
        g = rng.standard_normal((block, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        keep = np.abs(g @ w) >= margin
        g = g[keep]
        rows.append(g)
        collected += g.shape[0]
    X = np.vstack(rows)[:m]
    y = np.where(X @ w >= 0.0, 1.0, -1.0)
    if label_noise > 0.0:
        flips = rng.random(m) < label_noise
        y = np.where(flips, -y, y)
    return Dataset(
        X, y, source=f"synthetic(d={d},m={m},margin={margin},noise={label_noise})"
    )


# ---------------------------------------------------------------------------
# libsvm format


def load_libsvm(path, d=None):
    """Parse a sparse 'label idx:val ...' file into a dense Dataset.

    Indices are 1-based. Labels may be {-1,+1} or {0,1}; 0 maps to -1.
    Dimension is inferred from the largest index unless given.
    """
    labels = []
    rows = []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            try:
                raw = float(tokens[0])
            except ValueError:
                raise DataIntegrityError(
                    f"{path}:{lineno}: bad label {tokens[0]!r}"
                ) from None
            if raw == 0.0:
                label = -1.0
            elif raw in (-1.0, 1.0):
                label = raw
            else:
                raise DataIntegrityError(
                    f"{path}:{lineno}: label must be -1, 0 or +1, got {tokens[0]!r}"
                )
            entries = {}
            for tok in tokens[1:]:
                idx_s, _, val_s = tok.partition(":")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise DataIntegrityError(
                        f"{path}:{lineno}: bad feature token {tok!r}"
                    ) from None
                if idx < 1:
                    raise DataIntegrityError(
                        f"{path}:{lineno}: feature index must be >= 1, got {idx}"
                    )
                if idx in entries:
                    raise DataIntegrityError(
                        f"{path}:{lineno}: duplicate feature index {idx}"
                    )
                entries[idx] = val
            max_idx = max(max_idx, max(entries, default=0))
            labels.append(label)
            rows.append(entries)
    if not rows:
        raise DataIntegrityError(f"{path}: no samples")
    dim = max_idx if d is None else d
    if dim < max_idx:
        raise DataIntegrityError(
            f"{path}: declared dimension {d} below largest index {max_idx}"
        )
    X = np.zeros((len(rows), dim))
    for i, entries in enumerate(rows):
        for idx, val in entries.items():
            X[i, idx - 1] = val
    return Dataset(X, np.asarray(labels), source=str(path))


def save_libsvm(dataset, path):
    """Write a Dataset in sparse libsvm format at 17 significant digits."""
    with open(path, "w") as fh:
        for i in range(dataset.n):
            parts = [f"{int(dataset.y[i]):+d}"]
            row = dataset.X[i]
            for j in np.nonzero(row)[0]:
                parts.append(f"{j + 1}:{row[j]:.17g}")
            fh.write(" ".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Adult census income data

ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
)
ADULT_CONTINUOUS = frozenset(
    {"age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"}
)
ADULT_TRAIN_ROWS = 32561
ADULT_TEST_ROWS = 16281


def _parse_adult_file(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if fields[0] == ADULT_COLUMNS[0]:
                continue  # header row
            if len(fields) != len(ADULT_COLUMNS) + 1:
                raise DataIntegrityError(
                    f"{path}:{lineno}: expected {len(ADULT_COLUMNS) + 1} fields, "
                    f"got {len(fields)}"
                )
            label = fields[-1].rstrip(".")
            if label == ">50K":
                y = 1.0
            elif label == "<=50K":
                y = -1.0
            else:
                raise DataIntegrityError(f"{path}:{lineno}: bad label {fields[-1]!r}")
            rows.append((fields[:-1], y))
    if not rows:
        raise DataIntegrityError(f"{path}: no samples")
    return rows


def _column_mode(values):
    # most frequent value; ties broken by smallest value for determinism
    counts = Counter(v for v in values if v != "?")
    if not counts:
        raise DataIntegrityError("column contains only missing values")
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def load_adult(train_path, test_path, expect_counts=True):
    """Load and encode the Adult census pair (UCI adult.data / adult.test).

    Missing values ('?') are imputed with the most frequent training value of
    the column; categorical columns are one-hot encoded over the training
    categories (unseen test categories encode to all-zero blocks);
    continuous columns are min-max scaled with training minima and maxima.
    Labels map <=50K to -1 and >50K to +1.
    """
    train_rows = _parse_adult_file(train_path)
    test_rows = _parse_adult_file(test_path)
    if expect_counts:
        if len(train_rows) != ADULT_TRAIN_ROWS:
            raise DataIntegrityError(
                f"{train_path}: expected {ADULT_TRAIN_ROWS} rows, got {len(train_rows)}"
            )
        if len(test_rows) != ADULT_TEST_ROWS:
            raise DataIntegrityError(
                f"{test_path}: expected {ADULT_TEST_ROWS} rows, got {len(test_rows)}"
            )

    n_cols = len(ADULT_COLUMNS)
    modes = []
    for c in range(n_cols):
        modes.append(_column_mode([r[0][c] for r in train_rows]))

    def impute(rows):
        return [
            ([v if v != "?" else modes[c] for c, v in enumerate(fields)], y)
            for fields, y in rows
        ]

    train_rows = impute(train_rows)
    test_rows = impute(test_rows)

    encoders = []  # per column: ("cont", lo, hi) or ("cat", {value: slot})
    feature_names = []
    for c, name in enumerate(ADULT_COLUMNS):
        if name in ADULT_CONTINUOUS:
            try:
                vals = [float(r[0][c]) for r in train_rows]
            except ValueError as exc:
                raise DataIntegrityError(
                    f"{train_path}: non-numeric value in column {name}: {exc}"
                ) from None
            lo, hi = min(vals), max(vals)
            encoders.append(("cont", lo, hi))
            feature_names.append(name)
        else:
            cats = sorted({r[0][c] for r in train_rows})
            encoders.append(("cat", {v: k for k, v in enumerate(cats)}))
            feature_names.extend(f"{name}={v}" for v in cats)
    d = len(feature_names)

    def encode(rows, path):
        X = np.zeros((len(rows), d))
        y = np.empty(len(rows))
        for i, (fields, label) in enumerate(rows):
            y[i] = label
            off = 0
            for c, enc in enumerate(encoders):
                if enc[0] == "cont":
                    _, lo, hi = enc
                    try:
                        v = float(fields[c])
                    except ValueError:
                        raise DataIntegrityError(
                            f"{path}: non-numeric value {fields[c]!r} "
                            f"in column {ADULT_COLUMNS[c]}"
                        ) from None
                    X[i, off] = 0.0 if hi == lo else (v - lo) / (hi - lo)
                    off += 1
                else:
                    slot = enc[1].get(fields[c])
                    if slot is not None:
                        X[i, off + slot] = 1.0
                    off += len(enc[1])
        return X, y

    meta = {"feature_names": feature_names, "d": d}
    X_tr, y_tr = encode(train_rows, train_path)
    X_te, y_te = encode(test_rows, test_path)
    train = Dataset(X_tr, y_tr, source=str(train_path), meta=meta)
    test = Dataset(X_te, y_te, source=str(test_path), meta=meta)
    return train, test
