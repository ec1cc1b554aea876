"""Experiment configuration: a JSON document read through typed :class:`~fusenet.core.Key` variables."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .convex_mtl import ConvexConfig
from .core import Const, Key, Variable
from .data import ClusterSpec, SyntheticSpec
from .env import Environment
from .exc import ConfigError, DimensionMismatch, ValueNotValid
from .hint import Default, OneOf, Required, Validated, at_least_one, non_negative, positive
from .joint_trainer import TrainConfig, max_stable_lr
from .network import ACTIVATIONS, LOSS_KINDS, NetworkSpec

__all__ = [
    "TASKS",
    "NETWORK_TASKS",
    "CONVEX_TASKS",
    "DatasetSource",
    "ExperimentConfig",
    "load_experiment",
    "validate_experiment",
]

logger = logging.getLogger(__name__)

NETWORK_TASKS = {"classification": "cross_entropy", "autoencoder": "reconstruction"}
CONVEX_TASKS = ("svm_joint", "logreg_joint")
TASKS = (*NETWORK_TASKS, *CONVEX_TASKS)
METRICS = ("weight", "inverse_distance")


def _integer(raw: Any) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise TypeError(f"expected an integer, got {raw!r}")
    return raw


def _number(raw: Any) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise TypeError(f"expected a number, got {raw!r}")
    return float(raw)


def _flag(raw: Any) -> bool:
    if not isinstance(raw, bool):
        raise TypeError(f"expected true or false, got {raw!r}")
    return raw


def _text(raw: Any) -> str:
    if not isinstance(raw, str):
        raise TypeError(f"expected a string, got {raw!r}")
    return raw


def _section(raw: Any) -> Mapping[str, Any]:
    if not isinstance(raw, Mapping):
        raise TypeError(f"expected an object, got {type(raw).__name__}")
    return raw


def _entries(raw: Any) -> list[Any]:
    if not isinstance(raw, list):
        raise TypeError(f"expected a list, got {type(raw).__name__}")
    return raw


def _column(raw: Any) -> int | str:
    return raw if isinstance(raw, str) else _integer(raw)


def _members(raw: Any) -> list[int]:
    return [_integer(m) for m in _entries(raw)]


def _fraction(x: float) -> bool:
    return 0 <= x < 1


_TRAIN_FIELDS: dict[str, Callable[[Any], Any]] = {
    "lam": _number,
    "lr": _number,
    "batch_size": _integer,
    "inner_epochs_per_sweep": _integer,
    "sweeps_per_irls_iter": _integer,
    "max_irls_iters": _integer,
    "delta_tol": _number,
    "mode": _text,
    "init_max_sweeps": _integer,
    "init_rel_tol": _number,
    "epochs": _integer,
    "finetune_epochs": _integer,
    "shared_layers": _integer,
    "ordered_pairs": _flag,
    "jacobi": _flag,
    "workers": _integer,
    "shared_seed": _flag,
    "divergence_factor": _number,
}

_CONVEX_FIELDS: dict[str, Callable[[Any], Any]] = {
    "lam": _number,
    "mu": _number,
    "gamma": _number,
    "lr": _number,
    "max_iters": _integer,
    "tol": _number,
    "inner_iters": _integer,
    "init_std": _number,
    "divergence_factor": _number,
}

# spelled-out aliases accepted in the document
_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class DatasetSource:
    name: str
    csv: Path | None = None
    label_column: int | str | None = None
    idx_images: Path | None = None
    idx_labels: Path | None = None
    test_fraction: float = 0.2

    @property
    def paths(self) -> tuple[Path, ...]:
        return tuple(p for p in (self.csv, self.idx_images, self.idx_labels) if p is not None)


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    seed: int
    output_dir: Path
    train: TrainConfig
    convex: ConvexConfig
    network: NetworkSpec | None = None
    datasets: tuple[DatasetSource, ...] = ()
    synthetic: SyntheticSpec | None = None
    num_classes: int | None = None
    graph_k: int = 3
    graph_metric: str = "weight"
    record_timing: bool = False
    source: Path | None = field(default=None, compare=False)

    @property
    def is_convex(self) -> bool:
        return self.task in CONVEX_TASKS


def _section_fields(
    document: Mapping[str, Any], name: str, parsers: Mapping[str, Callable[[Any], Any]]
) -> dict[str, Any]:
    section = Key(document, name, parser=_section).given(Default({})).value()
    values = {}
    for raw_name in section:
        attr = _ALIASES.get(raw_name, raw_name)
        if attr not in parsers:
            raise ValueNotValid(raw_name, f"Key({name})", f"unknown field; expected one of {sorted(parsers)}")
        found = Key(document, f"{name}.{raw_name}", parser=parsers[attr]).given(Required(False))()
        if found is not None:
            values[attr] = found
    return values


def _relative(base: Path, raw: str) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else base / path


def _sources(document: Mapping[str, Any], base: Path) -> tuple[DatasetSource, ...]:
    entries = Key(document, "datasets", parser=_entries).given(Default([])).value()
    indexed = {"datasets": {str(i): entry for i, entry in enumerate(entries)}}
    sources = []
    for index in range(len(entries)):
        Key(indexed, f"datasets.{index}", parser=_section).value()

        def key(name: str, parser: Callable[[Any], Any], i: int = index) -> Variable[Any]:
            return Key(indexed, f"datasets.{i}.{name}", parser=parser)

        csv_path = key("csv", _text).given(Required(False))()
        images = key("idx_images", _text).given(Required(False))()
        if (csv_path is None) == (images is None):
            raise ConfigError(f"datasets[{index}] needs exactly one of 'csv' or 'idx_images'", entries[index])
        labels = key("idx_labels", _text).given(Required(False))()
        sources.append(
            DatasetSource(
                name=key("name", _text).otherwise(Const(f"d{index}")).value(),
                csv=_relative(base, csv_path) if csv_path is not None else None,
                label_column=key("label_column", _column).given(Required(False))(),
                idx_images=_relative(base, images) if images is not None else None,
                idx_labels=_relative(base, labels) if labels is not None else None,
                test_fraction=key("test_fraction", _number).given(Default(0.2), Validated(_fraction)).value(),
            )
        )
    return tuple(sources)


def _synthetic(document: Mapping[str, Any]) -> SyntheticSpec | None:
    if Key(document, "synthetic", parser=_section).given(Required(False))() is None:
        return None

    def key(name: str, parser: Callable[[Any], Any]) -> Variable[Any]:
        return Key(document, f"synthetic.{name}", parser=parser)

    clusters = []
    for index, raw in enumerate(key("clusters", _entries).value()):
        path = f"synthetic.clusters.{index}"
        cluster = {"synthetic": {"clusters": {str(index): raw}}}
        Key(cluster, path, parser=_section).value()
        clusters.append(
            ClusterSpec(
                members=tuple(Key(cluster, f"{path}.members", parser=_members).value()),
                seed=Key(cluster, f"{path}.seed", parser=_integer)
                .given(Default(index), Validated(non_negative))
                .value(),
                perturbation_std=Key(cluster, f"{path}.perturbation_std", parser=_number).given(
                    Default(0.0), Validated(non_negative)
                ).value(),
            )
        )
    return SyntheticSpec(
        kind=key("kind", _text).given(OneOf({"teacher_net", "gaussian_blobs"})).value(),
        clusters=tuple(clusters),
        train_samples=key("train_samples", _integer).given(Default(500), Validated(at_least_one)).value(),
        test_samples=key("test_samples", _integer).given(Default(100), Validated(non_negative)).value(),
        noise_std=key("noise_std", _number).given(Default(0.01), Validated(non_negative)).value(),
        input_dim=key("input_dim", _integer).given(Default(8), Validated(at_least_one)).value(),
        mask_size=key("mask_size", _integer).given(Default(0), Validated(non_negative)).value(),
        names=tuple(
            Key({"name": name}, "name", parser=_text).value()
            for name in key("names", _entries).given(Default([])).value()
        ),
    )


def _network(document: Mapping[str, Any], task: str) -> NetworkSpec | None:
    if Key(document, "network", parser=_section).given(Required(False))() is None:
        return None
    units = [_integer(u) for u in Key(document, "network.layer_dims", parser=_entries).value()]
    if len(units) < 2 or any(u < 1 for u in units):
        raise ValueNotValid(units, "Key(network.layer_dims)", "need at least two positive unit counts")
    activations = [
        Key({"a": a}, "a", parser=_text).given(OneOf(set(ACTIVATIONS))).value()
        for a in Key(document, "network.activations", parser=_entries).value()
    ]
    loss = Key(document, "network.loss", parser=_text).given(
        Default(NETWORK_TASKS.get(task, "reconstruction")), OneOf(set(LOSS_KINDS))
    )
    try:
        return NetworkSpec.from_units(units, activations, loss.value())
    except DimensionMismatch as exc:
        exc.args += ("Key(network)",)
        raise


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", str(path)) from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}", str(path)) from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top level must be an object", str(path))

    base = path.parent
    task = Key(document, "task", parser=_text).given(OneOf(set(TASKS))).value()
    seed = Environment.SEED
    if seed is None:
        seed = Key(document, "seed", parser=_integer).given(Default(0), Validated(non_negative)).value()
    else:
        logger.info("seed %d taken from FUSENET_SEED", seed)

    train_fields = _section_fields(document, "train", _TRAIN_FIELDS)
    train_fields["seed"] = seed
    if train_fields.get("workers") is None and Environment.WORKERS is not None:
        train_fields["workers"] = Environment.WORKERS
    train = TrainConfig(**train_fields)

    output = (Key(document, "output_dir", parser=_text) | Const("out")).value()
    config = ExperimentConfig(
        task=task,
        seed=seed,
        output_dir=_relative(base, output),
        train=train,
        convex=ConvexConfig(**_section_fields(document, "convex", _CONVEX_FIELDS)),
        network=_network(document, task),
        datasets=_sources(document, base),
        synthetic=_synthetic(document),
        num_classes=Key(document, "synthetic.num_classes", parser=_integer).given(
            Required(False), Validated(positive)
        )(),
        graph_k=Key(document, "graph.k", parser=_integer).given(Default(3), Validated(at_least_one)).value(),
        graph_metric=Key(document, "graph.metric", parser=_text).given(Default("weight"), OneOf(set(METRICS))).value(),
        record_timing=Key(document, "record_timing", parser=_flag).given(Default(False)).value(),
        source=path,
    )
    logger.debug("loaded %r", config)
    return config


def validate_experiment(config: ExperimentConfig) -> None:
    """Dry-run checks that need no training: inputs exist and the pieces fit together."""
    if bool(config.datasets) == (config.synthetic is not None):
        raise ConfigError("give either 'datasets' or 'synthetic', not both or neither")
    for source in config.datasets:
        for path in source.paths:
            if not path.is_file():
                raise ConfigError(f"dataset {source.name}: file {path} does not exist", str(path))
        if source.idx_labels is not None and source.idx_images is None:
            raise ConfigError(f"dataset {source.name}: idx_labels without idx_images")

    synthetic = config.synthetic
    if config.is_convex:
        if synthetic is not None and synthetic.kind != "gaussian_blobs":
            raise ConfigError(f"task {config.task} needs gaussian_blobs synthetic data, got {synthetic.kind}")
        return

    network = config.network
    if network is None:
        raise ConfigError(f"task {config.task} needs a 'network' section")
    if network.loss_kind != NETWORK_TASKS[config.task]:
        raise ConfigError(f"task {config.task} needs loss {NETWORK_TASKS[config.task]}, got {network.loss_kind}")
    if config.task == "autoencoder" and network.output_dim != network.input_dim:
        raise DimensionMismatch(f"autoencoder output dim {network.output_dim} != input dim {network.input_dim}")
    if config.train.shared_layers > network.L:
        raise ValueNotValid(config.train.shared_layers, "Key(train.shared_layers)", f"network has {network.L} layers")
    n = synthetic.n if synthetic is not None else len(config.datasets)
    limit = max_stable_lr(config.train, n, network.L)
    if config.train.lr >= limit:
        message = f"fusion pull does not contract with {n} datasets; lr must be below {limit:.3g}"
        raise ValueNotValid(config.train.lr, "Key(train.lr)", message)
    if synthetic is not None:
        if synthetic.kind != "teacher_net":
            raise ConfigError(f"task {config.task} needs teacher_net synthetic data, got {synthetic.kind}")
        if config.num_classes is not None and config.num_classes != network.output_dim:
            raise DimensionMismatch(f"num_classes {config.num_classes} != network output dim {network.output_dim}")
    for source in config.datasets:
        if config.task == "classification" and source.label_column is None and source.idx_labels is None:
            raise ConfigError(f"dataset {source.name}: classification needs labels")
