"""Command-line experiment runner.

``fusenet run CONFIG`` trains and writes ``metrics.csv``, ``weights.npz``, ``sharing_l<k>.dot`` (joint_robust)
and finally ``summary.json``; ``fusenet validate CONFIG`` parses and dry-runs; ``fusenet graph SNAPSHOT``
re-derives the sharing graphs from a weights snapshot.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import ExperimentConfig, load_experiment, validate_experiment
from .convex_mtl import LinearModel, logreg_joint_train, sign_accuracy, svm_joint_train
from .data import generate_synthetic, load_csv, load_idx
from .env import Environment
from .exc import ConfigError, DimensionMismatch, FusenetError, NumericalError
from .fusion import pair_distances
from .joint_trainer import TrainHistory, irls_train, train_baseline
from .network import Dataset, ParamEnsemble
from .numerics import Rng
from .sharing_graph import build_graphs, export_dot, influence

__all__ = ["load_datasets", "execute", "run", "rebuild_graphs", "main"]

logger = logging.getLogger(__name__)

SCHEMA = "#schema=1"
# stream index for data randomness, kept apart from the per-network training streams
DATA_STREAM = 0xDA7A

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def load_datasets(config: ExperimentConfig) -> list[Dataset]:
    root = Rng(config.seed).child(DATA_STREAM)
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic, root, config.network)
    datasets = []
    for i, source in enumerate(config.datasets):
        common: dict[str, Any] = dict(
            dataset_id=i, name=source.name, test_fraction=source.test_fraction, rng=root.child(i)
        )
        if source.csv is not None:
            datasets.append(load_csv(source.csv, source.label_column, **common))
        elif source.idx_images is not None:
            datasets.append(load_idx(source.idx_images, source.idx_labels, **common))
    return datasets


def _check_inputs(config: ExperimentConfig, datasets: Sequence[Dataset]) -> None:
    if not datasets:
        raise ConfigError("no datasets configured")
    dims = {d.features.shape[1] for d in datasets}
    if len(dims) != 1:
        raise DimensionMismatch(f"datasets disagree on feature dimension: {sorted(dims)}")
    if config.network is not None and not config.is_convex and dims != {config.network.input_dim}:
        raise DimensionMismatch(f"datasets have {dims.pop()} features, network expects {config.network.input_dim}")


def _cell(value: float | None) -> str:
    if value is None or not np.isfinite(value):
        return "-"
    return f"{value:.12g}"


def _finite(value: float | None) -> float | None:
    return None if value is None or not np.isfinite(value) else float(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with path.open("w", newline="") as f:
        f.write(SCHEMA + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _network_metrics(
    history: TrainHistory, datasets: Sequence[Dataset], timing: bool
) -> tuple[list[str], list[list[str]]]:
    labels = [d.label for d in datasets]
    has_accuracy = bool(history.records) and history.records[0].test_accuracy is not None
    header = ["iteration", *(f"train_loss[{x}]" for x in labels), *(f"test_loss[{x}]" for x in labels)]
    if has_accuracy:
        header += [f"test_accuracy[{x}]" for x in labels]
    header += ["consistency", "delta", "elapsed_s"]
    rows = []
    for r in history.records:
        row = [str(r.iteration), *map(_cell, r.train_loss), *map(_cell, r.test_loss)]
        if has_accuracy and r.test_accuracy is not None:
            row += map(_cell, r.test_accuracy)
        row += [_cell(r.consistency), _cell(r.delta), f"{r.elapsed:.3f}" if timing else "-"]
        rows.append(row)
    return header, rows


def _write_graphs(
    out: Path, weights: np.ndarray | None, distances: np.ndarray, labels: Sequence[str], k: int, metric: str
) -> list[dict[str, Any]]:
    if metric == "weight" and weights is None:
        raise ConfigError("no IRLS weights available; use --metric inverse_distance")
    if len(labels) < 2:
        logger.warning("sharing graphs need at least two datasets; skipped")
        return []
    scores = influence(weights, distances, metric)
    written = []
    for graph in build_graphs(scores, k):
        name = f"sharing_l{graph.layer_pair_index}.dot"
        (out / name).write_text(export_dot(graph, labels))
        written.append(
            {
                "file": name,
                "layer_pair": graph.layer_pair_index,
                "edges": [list(e) for e in sorted(graph.edges)],
                "components": graph.components(),
            }
        )
    return written


def _run_network(config: ExperimentConfig, datasets: list[Dataset], out: Path) -> dict[str, Any]:
    assert config.network is not None
    spec, train = config.network, config.train
    weights: np.ndarray | None = None
    sigma: np.ndarray | None = None
    if train.mode == "joint_robust":
        ensemble, history, state = irls_train(datasets, train, spec)
        weights, sigma = state.weights, state.sigma
    else:
        ensemble, history = train_baseline(datasets, train, spec)
    distances = pair_distances(ensemble)

    out.mkdir(parents=True, exist_ok=True)
    header, rows = _network_metrics(history, datasets, config.record_timing)
    _write_csv(out / "metrics.csv", header, rows)
    _save_snapshot(out / "weights.npz", ensemble, datasets, distances, weights, sigma)
    graphs: list[dict[str, Any]] = []
    if train.mode == "joint_robust":
        labels = [d.label for d in datasets]
        graphs = _write_graphs(out, weights, distances, labels, config.graph_k, config.graph_metric)

    last = history.records[-1]
    per_dataset = []
    for i, d in enumerate(datasets):
        entry: dict[str, Any] = {
            "name": d.label,
            "records": d.size,
            "train_records": int(len(d.train)),
            "test_records": int(len(d.test)),
            "train_loss": _finite(last.train_loss[i]),
            "test_loss": _finite(last.test_loss[i]),
        }
        if last.test_accuracy is not None:
            entry["test_accuracy"] = _finite(last.test_accuracy[i])
        per_dataset.append(entry)
    summary = {
        "task": config.task,
        "mode": train.mode,
        "seed": config.seed,
        "iterations": len(history.records),
        "sweeps": history.sweeps,
        "sgd_steps": history.sgd_steps,
        "final_delta": _finite(last.delta),
        "converged": last.delta is not None and last.delta <= train.delta_tol,
        "datasets": per_dataset,
        "graphs": graphs,
    }
    if config.record_timing:
        summary["elapsed_s"] = round(last.elapsed, 3)
    return summary


def _save_snapshot(
    path: Path,
    ensemble: ParamEnsemble,
    datasets: Sequence[Dataset],
    distances: np.ndarray,
    weights: np.ndarray | None,
    sigma: np.ndarray | None,
) -> None:
    spec = ensemble.spec
    arrays: dict[str, Any] = {
        "names": np.array([d.label for d in datasets]),
        "units": np.array([spec.input_dim, *(out_dim for _, out_dim in spec.layer_dims)]),
        "activations": np.array(spec.activations),
        "loss": np.array(spec.loss_kind),
        "params": np.stack([ensemble.flat(i) for i in range(ensemble.n)]),
        "distances": distances,
    }
    if weights is not None and sigma is not None:
        arrays["weights"] = weights
        arrays["sigma"] = sigma
    np.savez(path, **arrays)


def _run_convex(config: ExperimentConfig, datasets: list[Dataset], out: Path) -> dict[str, Any]:
    trainer = svm_joint_train if config.task == "svm_joint" else logreg_joint_train
    trace: list[float] = []
    models: list[LinearModel] = trainer(datasets, config.convex, Rng(config.seed), trace)

    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", ["iteration", "objective"], [[str(t), _cell(v)] for t, v in enumerate(trace, 1)])
    np.savez(
        out / "weights.npz",
        names=np.array([d.label for d in datasets]),
        w=np.stack([m.w for m in models]),
        b=np.array([m.b for m in models]),
    )
    return {
        "task": config.task,
        "seed": config.seed,
        "iterations": len(trace),
        "objective": _finite(trace[-1]) if trace else None,
        "datasets": [
            {
                "name": d.label,
                "records": d.size,
                "train_records": int(len(d.train)),
                "test_records": int(len(d.test)),
                "train_accuracy": _finite(sign_accuracy(m, d, d.train)),
                "test_accuracy": _finite(sign_accuracy(m, d, d.test)),
            }
            for m, d in zip(models, datasets)
        ],
    }


def execute(config: ExperimentConfig) -> Path:
    """Validate, train and write every output; returns the output directory.

    Nothing is written before training has finished, and ``summary.json`` is written last.
    """
    validate_experiment(config)
    datasets = load_datasets(config)
    _check_inputs(config, datasets)
    logger.info("running %s on %d datasets", config.task, len(datasets))
    out = config.output_dir
    try:
        # a summary left by an earlier run must not outlive a failed one
        (out / "summary.json").unlink(missing_ok=True)
        if config.is_convex:
            summary = _run_convex(config, datasets, out)
        else:
            summary = _run_network(config, datasets, out)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write outputs to {out}: {exc.strerror or exc}", str(out)) from exc
    logger.info("outputs written to %s", out)
    return out


def _report(exc: FusenetError) -> None:
    logger.debug("%s", type(exc).__name__, exc_info=exc)
    print(f"fusenet: {type(exc).__name__}: " + "; ".join(map(str, exc.args)), file=sys.stderr)


def run(config: ExperimentConfig) -> int:
    try:
        execute(config)
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        _report(exc)
        return EXIT_NUMERICAL
    return EXIT_OK


def rebuild_graphs(
    snapshot: str | Path, k: int = 3, metric: str = "weight", out: str | Path | None = None
) -> list[Path]:
    """Write ``sharing_l<k>.dot`` files for a snapshot; returns the written paths."""
    snapshot = Path(snapshot)
    try:
        with np.load(snapshot) as data:
            arrays = {name: data[name] for name in data.files}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read snapshot {snapshot}: {exc}", str(snapshot)) from exc
    if "distances" not in arrays or "names" not in arrays:
        raise ConfigError(f"{snapshot} is not a network weights snapshot", str(snapshot))
    target = Path(out) if out is not None else snapshot.parent
    try:
        target.mkdir(parents=True, exist_ok=True)
        written = _write_graphs(target, arrays.get("weights"), arrays["distances"], arrays["names"].tolist(), k, metric)
    except OSError as exc:
        raise ConfigError(f"cannot write graphs to {target}: {exc.strerror or exc}", str(target)) from exc
    return [target / entry["file"] for entry in written]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusenet", description="Jointly train networks over related datasets")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)
    run_cmd = commands.add_parser("run", help="Train and write metrics, weights, graphs and summary")
    run_cmd.add_argument("config", type=Path, help="Experiment config (JSON)")
    validate_cmd = commands.add_parser("validate", help="Parse the config and dry-run its checks")
    validate_cmd.add_argument("config", type=Path, help="Experiment config (JSON)")
    graph_cmd = commands.add_parser("graph", help="Re-derive sharing graphs from a weights snapshot")
    graph_cmd.add_argument("snapshot", type=Path, help="weights.npz written by 'run'")
    graph_cmd.add_argument("--k", type=int, default=3, help="Mutual top-k neighbours (default: 3)")
    graph_cmd.add_argument("--metric", choices=("weight", "inverse_distance"), default="weight")
    graph_cmd.add_argument("--out", type=Path, default=None, help="Output directory (default: next to snapshot)")
    return parser


def _log_level(verbose: int) -> int:
    level = logging.getLevelName(Environment.LOG_LEVEL)
    if verbose:
        level = min(level, logging.DEBUG if verbose > 1 else logging.INFO)
    return level


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        logging.basicConfig(level=_log_level(args.verbose), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        if args.command == "graph":
            if args.k < 1:
                raise ConfigError(f"--k must be >= 1, got {args.k}")
            for path in rebuild_graphs(args.snapshot, args.k, args.metric, args.out):
                print(path)
            return EXIT_OK
        config = load_experiment(args.config)
        if args.command == "validate":
            validate_experiment(config)
            datasets = load_datasets(config)
            _check_inputs(config, datasets)
            print(f"{args.config}: ok ({config.task}, {len(datasets)} datasets)")
            return EXIT_OK
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    return run(config)
