"""Experiment configuration: a flat, typed key-value file with sections.

Every key is declared once in ``KEY_TABLE`` with its section, type and
default; ``docs/config.md`` documents the same keys. Parsing, serialization,
overrides and the content hash all drive off the table, which keeps the
round-trip (parse -> serialize -> parse) an identity.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, replace


class ConfigError(ValueError):
    """Invalid configuration; messages carry the section.key path."""


ALGORITHMS = ("fedspd_dp", "dp_sgd", "dp_fedavg", "dp_admm")
DATA_SOURCES = ("synthetic", "adult", "libsvm")
SAMPLING_MODES = ("WOR", "WR")


@dataclass(frozen=True)
class ExperimentConfig:
    # [experiment]
    algorithm: str = "fedspd_dp"
    seeds: tuple = (1, 2, 3)
    output_dir: str = ""
    tag: str = ""
    # [data]
    data_source: str = "synthetic"
    data_seed: int = 7
    adult_train: str = "data/adult/adult.data"
    adult_test: str = "data/adult/adult.test"
    libsvm_train: str = ""
    libsvm_test: str = ""
    synthetic_d: int = 160
    synthetic_train: int = 32561
    synthetic_test: int = 16281
    synthetic_margin: float = 0.0
    synthetic_label_noise: float = 0.1
    # [federation]
    n_clients: int = 100
    clients_per_round: int = 20
    rounds: int = 100
    local_steps: int = 5
    batch_size: int = 10
    sampling: str = "WOR"
    workers: int = 1
    # [optimization]
    rho: float = 20.0
    lambda_reg: float = 0.01
    dual_projection: bool = False
    # [privacy]
    total_budget: float | None = 1.0
    per_round_eps: float | None = None
    delta: float = 1e-4
    tau_max: int = 64
    # [constants]
    grad_clip: float = 1.0
    d_x: float = 1.0
    d_lambda: float = 1.0
    phi: float = 1.0
    c0: float = 3.04
    beta: float = 1.0
    # [baseline]
    fedavg_clip: float = 1.0
    # [output]
    record_timing: bool = True
    metric_stride: int = 1


# (section, key, type) per attribute; key name equals the attribute name
KEY_TABLE = (
    ("experiment", "algorithm", "str"),
    ("experiment", "seeds", "seeds"),
    ("experiment", "output_dir", "str"),
    ("experiment", "tag", "str"),
    ("data", "data_source", "str"),
    ("data", "data_seed", "int"),
    ("data", "adult_train", "str"),
    ("data", "adult_test", "str"),
    ("data", "libsvm_train", "str"),
    ("data", "libsvm_test", "str"),
    ("data", "synthetic_d", "int"),
    ("data", "synthetic_train", "int"),
    ("data", "synthetic_test", "int"),
    ("data", "synthetic_margin", "float"),
    ("data", "synthetic_label_noise", "float"),
    ("federation", "n_clients", "int"),
    ("federation", "clients_per_round", "int"),
    ("federation", "rounds", "int"),
    ("federation", "local_steps", "int"),
    ("federation", "batch_size", "int"),
    ("federation", "sampling", "str"),
    ("federation", "workers", "int"),
    ("optimization", "rho", "float"),
    ("optimization", "lambda_reg", "float"),
    ("optimization", "dual_projection", "bool"),
    ("privacy", "total_budget", "opt_float"),
    ("privacy", "per_round_eps", "opt_float"),
    ("privacy", "delta", "float"),
    ("privacy", "tau_max", "int"),
    ("constants", "grad_clip", "float"),
    ("constants", "d_x", "float"),
    ("constants", "d_lambda", "float"),
    ("constants", "phi", "float"),
    ("constants", "c0", "float"),
    ("constants", "beta", "float"),
    ("baseline", "fedavg_clip", "float"),
    ("output", "record_timing", "bool"),
    ("output", "metric_stride", "int"),
)

_BY_PATH = {f"{sec}.{key}": (key, typ) for sec, key, typ in KEY_TABLE}


def _parse_value(path, typ, raw):
    raw = raw.strip()
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "opt_float":
            return None if raw == "" else float(raw)
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ == "seeds":
            parts = raw.replace(",", " ").split()
            if not parts:
                raise ValueError("empty seed list")
            return tuple(int(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _format_value(typ, value):
    if typ == "opt_float":
        return "" if value is None else repr(value)
    if typ == "bool":
        return "true" if value else "false"
    if typ == "seeds":
        return " ".join(str(s) for s in value)
    if typ == "float":
        return repr(value)
    return str(value)


def load_config(path):
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    return _from_parser(parser, str(path))


def loads_config(text):
    parser = configparser.ConfigParser()
    parser.read_string(text)
    return _from_parser(parser, "<string>")


def _from_parser(parser, origin):
    known_sections = {sec for sec, _, _ in KEY_TABLE}
    values = {}
    for sec in parser.sections():
        if sec not in known_sections:
            raise ConfigError(f"{origin}: unknown section [{sec}]")
        for key, raw in parser.items(sec):
            path = f"{sec}.{key}"
            if path not in _BY_PATH:
                raise ConfigError(f"{origin}: unknown key {path}")
            attr, typ = _BY_PATH[path]
            values[attr] = _parse_value(path, typ, raw)
    return ExperimentConfig(**values)


def to_ini_string(cfg):
    out = io.StringIO()
    current = None
    for sec, key, typ in KEY_TABLE:
        if sec != current:
            if current is not None:
                out.write("\n")
            out.write(f"[{sec}]\n")
            current = sec
        out.write(f"{key} = {_format_value(typ, getattr(cfg, key))}\n")
    return out.getvalue()


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(to_ini_string(cfg))


def config_hash(cfg):
    """Stable content hash of the canonical serialization."""
    return hashlib.sha256(to_ini_string(cfg).encode()).hexdigest()


def apply_overrides(cfg, overrides):
    """Apply 'section.key=value' strings on top of cfg; flags win."""
    updates = {}
    for item in overrides:
        path, sep, raw = item.partition("=")
        path = path.strip()
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if path not in _BY_PATH:
            raise ConfigError(f"unknown key {path}")
        attr, typ = _BY_PATH[path]
        updates[attr] = _parse_value(path, typ, raw)
    return replace(cfg, **updates)


def validate_config(cfg):
    """Reject every precondition violation detectable without data."""

    def bad(path, msg):
        raise ConfigError(f"{path}: {msg}")

    if cfg.algorithm not in ALGORITHMS:
        bad("experiment.algorithm", f"must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if not cfg.seeds:
        bad("experiment.seeds", "at least one seed required")
    if cfg.data_source not in DATA_SOURCES:
        bad("data.data_source", f"must be one of {DATA_SOURCES}, got {cfg.data_source!r}")
    if cfg.data_source == "adult" and not (cfg.adult_train and cfg.adult_test):
        bad("data.adult_train", "adult source requires both file paths")
    if cfg.data_source == "libsvm" and not (cfg.libsvm_train and cfg.libsvm_test):
        bad("data.libsvm_train", "libsvm source requires both file paths")
    if cfg.synthetic_d < 1:
        bad("data.synthetic_d", "must be >= 1")
    if cfg.synthetic_train < 1 or cfg.synthetic_test < 1:
        bad("data.synthetic_train", "sizes must be >= 1")
    if not 0.0 <= cfg.synthetic_margin < 0.9:
        bad("data.synthetic_margin", "must lie in [0, 0.9)")
    if not 0.0 <= cfg.synthetic_label_noise < 1.0:
        bad("data.synthetic_label_noise", "must lie in [0, 1)")
    if not 1 <= cfg.n_clients < (1 << 20):
        bad("federation.n_clients", "must lie in [1, 2^20)")
    if not 1 <= cfg.clients_per_round <= cfg.n_clients:
        bad(
            "federation.clients_per_round",
            f"must lie in [1, n_clients={cfg.n_clients}], got {cfg.clients_per_round}",
        )
    if cfg.rounds < 0:
        bad("federation.rounds", "must be >= 0")
    if cfg.local_steps < 1:
        bad("federation.local_steps", "must be >= 1")
    if cfg.batch_size < 1:
        bad("federation.batch_size", "must be >= 1")
    if cfg.sampling not in SAMPLING_MODES:
        bad("federation.sampling", f"must be WOR or WR, got {cfg.sampling!r}")
    if cfg.workers < 1:
        bad("federation.workers", "must be >= 1")
    if cfg.rho <= 0.0:
        bad("optimization.rho", "must be > 0")
    if cfg.lambda_reg < 0.0:
        bad("optimization.lambda_reg", "must be >= 0")
    privacy_on = cfg.total_budget is not None or cfg.per_round_eps is not None
    if cfg.total_budget is not None and cfg.per_round_eps is not None:
        bad(
            "privacy.total_budget",
            "set exactly one of total_budget and per_round_eps (or neither for "
            "a noiseless run)",
        )
    if cfg.total_budget is not None and cfg.total_budget <= 0.0:
        bad("privacy.total_budget", "must be > 0 when set")
    if cfg.per_round_eps is not None and cfg.per_round_eps <= 0.0:
        bad("privacy.per_round_eps", "must be > 0 when set")
    if privacy_on and not 0.0 < cfg.delta < 1.0:
        bad("privacy.delta", "must lie in (0, 1)")
    if cfg.tau_max < 1:
        bad("privacy.tau_max", "must be >= 1")
    if cfg.algorithm == "dp_admm" and cfg.total_budget is not None:
        bad(
            "privacy.total_budget",
            "dp_admm consumes whole shards, so the subsampled budget inversion "
            "does not apply; use per_round_eps or disable privacy",
        )
    for name in ("grad_clip", "d_x", "d_lambda", "phi", "c0"):
        if getattr(cfg, name) <= 0.0:
            bad(f"constants.{name}", "must be > 0")
    if cfg.beta < 0.0:
        bad("constants.beta", "must be >= 0")
    if cfg.fedavg_clip <= 0.0:
        bad("baseline.fedavg_clip", "must be > 0")
    if cfg.metric_stride < 1:
        bad("output.metric_stride", "must be >= 1")
    return cfg


def default_config():
    return ExperimentConfig()
