"""Command line front end: run, sweep, accountant, plot, prep-data.

Exit codes: 0 success, 2 validation failure (bad config, bad arguments),
3 data integrity failure (missing or corrupt dataset files), 4 anything
else at runtime.

Output directory resolution, highest priority first: the -o flag, the
``output_dir`` config key, the FEDSPD_OUTPUT_DIR environment variable,
then ``runs``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .bench import CSV_COLUMNS
from .config import (
    ConfigError,
    apply_overrides,
    config_hash,
    load_config,
    to_ini_string,
    validate_config,
)
from .datastore import DataIntegrityError, save_libsvm
from .engine import load_data, run_experiment
from .privacy import (
    data_sampling_ratio,
    ledger_spent_epsilon,
    per_round_epsilon,
    total_privacy_loss_closed_form,
)

OUTPUT_DIR_ENV = "FEDSPD_OUTPUT_DIR"

SWEEP_AXES = {
    "total_budget": float,
    "per_round_eps": float,
    "K": int,
    "Q": int,
    "algorithm": str,
}

PLOT_KINDS = {
    "accuracy": "test_accuracy",
    "alfv": "alfv",
    "consensus": "consensus_gap",
    "privacy": "spent_eps_ledger",
}


class SchemaError(ValueError):
    """Artifact files do not match the expected CSV schema."""


def _resolve_outdir(flag, cfg_dir):
    if flag:
        return Path(flag)
    if cfg_dir:
        return Path(cfg_dir)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return Path("runs")


def _load_validated(args):
    cfg = load_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    validate_config(cfg)
    return cfg


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_records(path, records):
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(r.csv_row()) for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _mean(values):
    return sum(values) / len(values)


def _execute(cfg, run_dir, train, test, quiet=False):
    """Run every seed of cfg into run_dir; returns the summary payload."""
    run_dir.mkdir(parents=True, exist_ok=True)
    per_seed = {}
    hashes = {}
    results = {}
    for seed in cfg.seeds:
        result = run_experiment(cfg, seed, train, test)
        name = f"run_seed{seed}.csv"
        _write_records(run_dir / name, result.records)
        hashes[name] = _sha256_file(run_dir / name)
        per_seed[str(seed)] = result.summary
        results[seed] = result
        if not quiet:
            s = result.summary
            print(
                f"seed {seed}: accuracy={s['final_accuracy']:.4f} "
                f"alfv={s['final_alfv']:.6g} "
                f"eps_ledger={s['spent_eps_ledger_max_final']:.4g}"
            )
    summaries = list(per_seed.values())
    payload = {
        "config": to_ini_string(cfg),
        "config_hash": config_hash(cfg),
        "seeds": list(cfg.seeds),
        "per_seed": per_seed,
        "csv_sha256": hashes,
        "aggregate": {
            "final_accuracy_mean": _mean([s["final_accuracy"] for s in summaries]),
            "final_alfv_mean": _mean([s["final_alfv"] for s in summaries]),
            "final_consensus_gap_mean": _mean(
                [s["final_consensus_gap"] for s in summaries]
            ),
            "spent_eps_closed_final_mean": _mean(
                [s["spent_eps_closed_final"] for s in summaries]
            ),
            "spent_eps_ledger_max_final_mean": _mean(
                [s["spent_eps_ledger_max_final"] for s in summaries]
            ),
        },
    }
    _write_json(run_dir / "summary.json", payload)
    return payload, results


def cmd_run(args):
    cfg = _load_validated(args)
    outdir = _resolve_outdir(args.outdir, cfg.output_dir)
    run_dir = outdir / (cfg.tag or f"run-{config_hash(cfg)[:12]}")
    train, test = load_data(cfg)
    payload, _ = _execute(cfg, run_dir, train, test)
    agg = payload["aggregate"]
    print(f"mean final accuracy {agg['final_accuracy_mean']:.4f}")
    print(f"artifacts in {run_dir}")
    return 0


def _apply_axis(cfg, axis, value):
    if axis == "total_budget":
        return replace(cfg, total_budget=value, per_round_eps=None)
    if axis == "per_round_eps":
        return replace(cfg, per_round_eps=value, total_budget=None)
    if axis == "K":
        return replace(cfg, clients_per_round=value)
    if axis == "Q":
        return replace(cfg, local_steps=value)
    return replace(cfg, algorithm=value)


def cmd_sweep(args):
    base = _load_validated(args)
    axis = args.axis
    cast = SWEEP_AXES[axis]
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"sweep values {args.values!r} are not valid for axis {axis}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    outdir = _resolve_outdir(args.outdir, base.output_dir)
    sweep_dir = outdir / (base.tag or f"sweep-{config_hash(base)[:12]}")
    sweep_dir.mkdir(parents=True, exist_ok=True)

    # all sweep points share the dataset unless the axis changes nothing
    # about it, which none of the supported axes do
    train, test = load_data(base)
    merged = [",".join((axis, "seed") + CSV_COLUMNS)]
    table = []
    for value in values:
        cfg = _apply_axis(base, axis, value)
        validate_config(cfg)
        run_dir = sweep_dir / f"{axis}={_fmt(value)}"
        payload, results = _execute(cfg, run_dir, train, test, quiet=True)
        for seed in cfg.seeds:
            for rec in results[seed].records:
                merged.append(
                    ",".join([_fmt(value), str(seed)] + rec.csv_row())
                )
        agg = payload["aggregate"]
        table.append((value, agg))
        print(
            f"{axis}={_fmt(value)}: mean final accuracy "
            f"{agg['final_accuracy_mean']:.4f}, mean ledger eps "
            f"{agg['spent_eps_ledger_max_final_mean']:.4g}"
        )
    (sweep_dir / "sweep.csv").write_text("\n".join(merged) + "\n")
    _write_json(
        sweep_dir / "sweep_summary.json",
        {
            "axis": axis,
            "values": [_fmt(v) for v in values],
            "config_hash_base": config_hash(base),
            "aggregate": {_fmt(v): agg for v, agg in table},
        },
    )
    print(f"artifacts in {sweep_dir}")
    return 0


def cmd_accountant(args):
    if (args.eps is None) == (args.total_budget is None):
        raise ConfigError("give exactly one of --eps / --total-budget")
    if args.T < 0:
        raise ConfigError(f"--T must be nonnegative, got {args.T}")
    if not 0.0 < args.p <= 1.0:
        raise ConfigError(f"--p must lie in (0, 1], got {args.p}")
    count = args.p * args.T
    print(
        f"Q={args.Q} b={args.b} m={args.m} p={args.p} T={args.T} "
        f"delta={args.delta} (expected participations {count:g})"
    )
    header = f"{'mode':<5} {'q':>14} {'eps/round':>14} {'closed-form':>14} {'ledger':>14}"
    print(header)
    for mode in ("WOR", "WR"):
        q = data_sampling_ratio(args.Q, args.b, args.m, mode)
        if q >= 1.0:
            raise ConfigError(f"sampling ratio q={q:.6g} >= 1 under {mode}")
        if args.T == 0:
            print(f"{mode:<5} {q:>14.10f} {0.0:>14.10f} {0.0:>14.10f} {0.0:>14.10f}")
            continue
        if args.eps is not None:
            eps = args.eps
        else:
            eps = per_round_epsilon(args.total_budget, q, args.p, args.T, args.c0)
        closed = total_privacy_loss_closed_form(eps, q, args.p, args.T, args.c0)
        ledger = ledger_spent_epsilon(
            count, q, eps, args.delta, tau_max=args.tau_max, subsampled=True
        )
        print(f"{mode:<5} {q:>14.10f} {eps:>14.10f} {closed:>14.10f} {ledger:>14.10f}")
    return 0


def _read_artifact_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if reader.fieldnames is None:
        raise SchemaError(f"{path}: empty artifact file")
    for col in CSV_COLUMNS:
        if col not in reader.fieldnames:
            raise SchemaError(f"{path}: missing column {col!r}")
    return rows


def _series(rows, column):
    """(rounds, mean-over-seeds values) from a list of row dicts."""
    by_round = {}
    for row in rows:
        t = int(row["round"])
        v = float(row[column])
        by_round.setdefault(t, []).append(v)
    rounds = sorted(by_round)
    means = []
    for t in rounds:
        vals = [v for v in by_round[t] if not math.isnan(v)]
        means.append(_mean(vals) if vals else float("nan"))
    return rounds, means


def cmd_plot(args):
    column = PLOT_KINDS.get(args.kind, args.kind)
    if column not in CSV_COLUMNS:
        raise ConfigError(
            f"unknown figure kind {args.kind!r}; choose one of "
            f"{sorted(PLOT_KINDS)} or a CSV column"
        )
    art_dir = Path(args.artifact_dir)
    sweep_path = art_dir / "sweep.csv"
    lines = []
    if sweep_path.exists():
        with open(sweep_path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        if not rows or reader.fieldnames is None:
            raise SchemaError(f"{sweep_path}: empty artifact file")
        axis = reader.fieldnames[0]
        for col in CSV_COLUMNS:
            if col not in reader.fieldnames:
                raise SchemaError(f"{sweep_path}: missing column {col!r}")
        values = []
        for row in rows:
            if row[axis] not in values:
                values.append(row[axis])
        for value in values:
            subset = [r for r in rows if r[axis] == value]
            rounds, means = _series(subset, column)
            lines.append((f"{axis}={value}", rounds, means))
    else:
        csv_paths = sorted(art_dir.glob("run_seed*.csv"))
        if not csv_paths:
            raise SchemaError(f"{art_dir}: no run artifacts found")
        rows = []
        for path in csv_paths:
            rows.extend(_read_artifact_csv(path))
        rounds, means = _series(rows, column)
        lines.append((column, rounds, means))

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "fedspd"
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, rounds, means in lines:
        ax.plot(rounds, means, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel(column)
    ax.legend()
    fig.tight_layout()
    out = Path(args.out) if args.out else art_dir / f"{args.kind}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    # a pinned Date keeps the SVG bytes reproducible
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(f"wrote {out}")
    return 0


def cmd_prep_data(args):
    cfg = _load_validated(args)
    outdir = _resolve_outdir(args.outdir, cfg.output_dir)
    prep_dir = outdir / (cfg.tag or "dataset")
    prep_dir.mkdir(parents=True, exist_ok=True)
    train, test = load_data(cfg)
    manifest = {"source": {"train": train.source, "test": test.source}}
    hashes = {}
    for name, ds in (("train", train), ("test", test)):
        path = prep_dir / f"{name}.libsvm"
        save_libsvm(ds, path)
        hashes[f"{name}.libsvm"] = _sha256_file(path)
    manifest.update(
        {
            "n_train": train.n,
            "n_test": test.n,
            "d": train.d,
            "sha256": hashes,
            "config_hash": config_hash(cfg),
        }
    )
    _write_json(prep_dir / "manifest.json", manifest)
    print(f"train: {train.n} x {train.d}, test: {test.n} x {test.d}")
    print(f"artifacts in {prep_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedspd",
        description="Deterministic simulator for private federated learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("-c", "--config", required=True, help="path to the INI config")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config key (repeatable, flag wins)",
        )
        p.add_argument("-o", "--outdir", default=None, help="output directory")

    p_run = sub.add_parser("run", help="execute one experiment per seed")
    add_config_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the config across one axis")
    add_config_args(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p_sweep.add_argument(
        "--values", required=True, help="comma-separated axis values"
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_acc = sub.add_parser("accountant", help="print the privacy budget table")
    p_acc.add_argument("--Q", type=int, required=True, help="local steps per round")
    p_acc.add_argument("--b", type=int, required=True, help="mini-batch size")
    p_acc.add_argument("--m", type=int, required=True, help="samples per client")
    p_acc.add_argument("--p", type=float, required=True, help="participation fraction")
    p_acc.add_argument("--T", type=int, required=True, help="communication rounds")
    p_acc.add_argument("--delta", type=float, default=1e-4)
    p_acc.add_argument("--eps", type=float, default=None, help="per-round epsilon")
    p_acc.add_argument(
        "--total-budget", type=float, default=None, help="total budget to invert"
    )
    p_acc.add_argument("--c0", type=float, default=3.04)
    p_acc.add_argument("--tau-max", type=int, default=64)
    p_acc.set_defaults(func=cmd_accountant)

    p_plot = sub.add_parser("plot", help="render artifacts to SVG")
    p_plot.add_argument("artifact_dir", help="run or sweep output directory")
    p_plot.add_argument(
        "--kind",
        default="accuracy",
        help="accuracy | alfv | consensus | privacy | any CSV column",
    )
    p_plot.add_argument("-o", "--out", default=None, help="output SVG path")
    p_plot.set_defaults(func=cmd_plot)

    p_prep = sub.add_parser(
        "prep-data", help="materialize the preprocessed dataset with content hashes"
    )
    add_config_args(p_prep)
    p_prep.set_defaults(func=cmd_prep_data)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataIntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # anything else is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
