"""Command line entry point: train / eval / attack / bench / anchors.

Config precedence: command-line flags > config file ([run] section,
key = value) > per-dataset defaults > built-in defaults. Every run writes
its fully resolved config next to its results so it can be replayed.

Exit codes: 0 success, 2 configuration/usage/data errors, 3 numeric
failures (non-finite loss or gradients).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .anchors import louvain, modularity
from .bench import fit_loglog_slope, scaling_sweep, write_timing_csv
from .errors import ConfigError, DataError, NumericError
from .graphs import DatasetBundle, flip_edges, load_tu_dataset, stratified_kfold
from .model import load_params, model_forward, save_params
from .training import (
    DATASET_DEFAULTS,
    RunConfig,
    ablation_anchor_selection,
    cross_validate,
    model_config_for,
    prepare_anchors,
    write_ablation_csv,
    write_results_csv,
    write_timings_csv,
    _derive_seed,
)

log = logging.getLogger(__name__)

_INT_FIELDS = {"num_gnn_layers", "hidden_dim", "proj_dim", "ffn_hidden", "epochs",
               "batch_size", "folds", "seed", "workers"}
_FLOAT_FIELDS = {"dropout", "lr", "weight_decay"}


def _coerce(name: str, value: str):
    if name in _INT_FIELDS:
        return int(value)
    if name in _FLOAT_FIELDS:
        return float(value)
    return value


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    if not parser.has_section("run"):
        raise ConfigError(f"{path}: missing [run] section")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    for key, raw in parser.items("run"):
        if key not in known:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def write_manifest(path, config: RunConfig) -> None:
    parser = configparser.ConfigParser()
    parser["run"] = {f.name: str(getattr(config, f.name)) for f in dataclasses.fields(RunConfig)}
    with open(path, "w", newline="\n") as fh:
        parser.write(fh)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, per-dataset defaults, config file and flags."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    flag_values = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)
                   if getattr(args, f.name, None) is not None}
    dataset = flag_values.get("dataset") or file_values.get("dataset") or RunConfig().dataset
    values = dataclasses.asdict(RunConfig())
    values.update(DATASET_DEFAULTS.get(dataset, {}))
    values.update(file_values)
    values.update(flag_values)
    config = RunConfig(**values)
    config.validate()
    return config


def _data_dir(config: RunConfig) -> str:
    if config.data_dir:
        return config.data_dir
    env = os.environ.get("AGF_DATA_DIR")
    if env:
        return env
    raise ConfigError("no dataset directory: pass --data-dir or set AGF_DATA_DIR")


def _load_bundle(config: RunConfig) -> DatasetBundle:
    return load_tu_dataset(_data_dir(config), config.dataset)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file with a [run] section")
    p.add_argument("--dataset", help="TU dataset name (default MUTAG)")
    p.add_argument("--data-dir", dest="data_dir", help="dataset root (default $AGF_DATA_DIR)")
    p.add_argument("--backbone", choices=["gcn", "gin"])
    p.add_argument("--anchor-mode", dest="anchor_mode", choices=["louvain", "random", "full"])
    p.add_argument("--num-gnn-layers", dest="num_gnn_layers", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--proj-dim", dest="proj_dim", type=int)
    p.add_argument("--ffn-hidden", dest="ffn_hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    bundle = _load_bundle(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = cross_validate(bundle, config)
    write_results_csv(out / "results.csv", result)
    write_timings_csv(out / "timings.csv", result)
    write_manifest(out / "manifest.cfg", config)
    for fold in result.folds:
        save_params(fold.params, out / f"fold_{fold.fold}.ckpt")
    print(f"{config.dataset} {config.backbone}/{config.anchor_mode}: "
          f"accuracy {result.mean:.4f}±{result.std:.4f} over {config.folds} folds")
    return 0


def cmd_ablation(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    bundle = _load_bundle(config)
    result = ablation_anchor_selection(bundle, config)
    write_ablation_csv(args.out, result)
    for mode, mean, std in result.rows:
        print(f"{mode}: {mean:.4f}±{std:.4f}")
    return 0


def _load_run(run_dir) -> tuple[RunConfig, DatasetBundle, list, list]:
    run_dir = Path(run_dir)
    manifest = run_dir / "manifest.cfg"
    if not manifest.exists():
        raise ConfigError(f"no manifest.cfg in {run_dir}")
    values = read_config_file(manifest)
    config = RunConfig(**{**dataclasses.asdict(RunConfig()), **values})
    bundle = load_tu_dataset(_data_dir(config), config.dataset)
    splits = stratified_kfold(bundle, config.folds, config.seed)
    fold_params = []
    for k in range(config.folds):
        ckpt = run_dir / f"fold_{k}.ckpt"
        if not ckpt.exists():
            raise ConfigError(f"missing checkpoint {ckpt}")
        fold_params.append(load_params(ckpt))
    return config, bundle, splits, fold_params


def _pooled_flip_accuracy(config: RunConfig, bundle: DatasetBundle, splits, fold_params,
                          rate: float, seed: int) -> float:
    """Accuracy over every graph, each scored by the fold that held it out,
    after adding `rate * |E|` random edges (anchors recomputed on the
    perturbed topology)."""
    if rate == 0.0:
        graphs = bundle.graphs
    else:
        graphs = [flip_edges(g, rate, _derive_seed(seed, 13, int(round(rate * 1e6)), i))
                  for i, g in enumerate(bundle.graphs)]
    anchors = prepare_anchors(bundle, config.anchor_mode, seed, graphs=graphs)
    mc = model_config_for(bundle, config)
    rng = np.random.default_rng(0)
    correct = total = 0
    for k, (_train, test) in enumerate(splits):
        for gid in test:
            logits = model_forward(graphs[gid], anchors[gid], fold_params[k], mc, rng, training=False)
            correct += int(np.argmax(logits.data)) == graphs[gid].label
            total += 1
    return correct / total


def cmd_eval(args: argparse.Namespace) -> int:
    config, bundle, splits, fold_params = _load_run(args.run)
    acc = _pooled_flip_accuracy(config, bundle, splits, fold_params, args.flip_rate, args.flip_seed)
    label = f"flip_rate={args.flip_rate}" if args.flip_rate else "clean"
    print(f"{config.dataset} {config.backbone}/{config.anchor_mode} ({label}): accuracy {acc:.4f}")
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    rates = [float(r) for r in args.flip_rates.split(",")]
    runs = [("anchor", args.run_anchor), ("full", args.run_full)]
    rows = []
    for mode_name, run_dir in runs:
        config, bundle, splits, fold_params = _load_run(run_dir)
        if (config.anchor_mode == "full") != (mode_name == "full"):
            raise ConfigError(f"{run_dir}: anchor_mode {config.anchor_mode!r} does not match "
                              f"the {mode_name!r} slot")
        for rate in rates:
            acc = _pooled_flip_accuracy(config, bundle, splits, fold_params, rate, args.seed)
            rows.append((rate, mode_name, acc))
            log.info("attack rate=%.3f mode=%s accuracy=%.4f", rate, mode_name, acc)
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(args.out, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate", "mode", "accuracy"])
        for rate, mode_name, acc in rows:
            w.writerow([f"{rate:g}", mode_name, f"{acc:.10f}"])
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    records = scaling_sweep(sizes, args.anchors, args.dim, args.reps, args.seed,
                            edge_rate=args.edge_rate, anchor_source=args.anchor_source)
    write_timing_csv(args.out, records)
    for r in records:
        print(f"{r.mode:>6} n={r.n:>6} c={r.c:>5} median={r.median_seconds * 1e3:9.2f} ms "
              f"(mad {r.mad_seconds * 1e3:.2f})")
    if len(sizes) >= 3:
        for mode in ("anchor", "full"):
            series = [(r.n, r.median_seconds) for r in records if r.mode == mode]
            print(f"{mode} log-log slope: {fit_loglog_slope(series):.2f}")
    return 0


def cmd_anchors(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    bundle = _load_bundle(config)
    ratios = []
    with open(args.out, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["graph_id", "n", "c", "ratio", "modularity"])
        for gid, g in enumerate(bundle.graphs):
            part = louvain(g)
            ratio = part.num_communities / g.num_nodes
            ratios.append(ratio)
            q = f"{modularity(g, part):.6f}" if g.num_edges else ""
            w.writerow([gid, g.num_nodes, part.num_communities, f"{ratio:.6f}", q])
    print(f"{config.dataset}: mean anchor ratio C/N = {np.mean(ratios):.4f} "
          f"over {len(ratios)} graphs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agformer",
                                     description="anchor-graph transformer experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="cross-validated training; writes results + checkpoints")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablation", help="louvain vs random anchors on identical folds")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("eval", help="evaluate a finished run (optionally with edge flips)")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--flip-rate", dest="flip_rate", type=float, default=0.0)
    p.add_argument("--flip-seed", dest="flip_seed", type=int, default=42)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="edge-flip robustness: anchor run vs full-attention run")
    p.add_argument("--run-anchor", dest="run_anchor", required=True)
    p.add_argument("--run-full", dest="run_full", required=True)
    p.add_argument("--flip-rates", dest="flip_rates", default="0,0.05,0.1,0.15,0.2")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", help="attention wall-time scaling sweep")
    p.add_argument("--sizes", default="512,1024,2048,4096,8192")
    p.add_argument("--anchors", type=int, default=128)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--edge-rate", dest="edge_rate", type=float, default=0.01)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--anchor-source", dest="anchor_source", choices=["fixed", "louvain"],
                   default="fixed")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("anchors", help="per-graph Louvain community statistics")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_anchors)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
