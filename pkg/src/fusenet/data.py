"""Dataset ingestion (CSV, IDX) and seeded synthetic generators."""

from __future__ import annotations

import csv
import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Literal, Sequence

import numpy as np
from numpy.typing import NDArray

from .exc import ConfigError, DataFormatError
from .network import Dataset, LayerParams, NetworkSpec, forward_batch, init_params
from .numerics import Matrix, Rng

__all__ = [
    "ClusterSpec",
    "SyntheticSpec",
    "split_indices",
    "load_csv",
    "load_idx",
    "generate_synthetic",
]

logger = logging.getLogger(__name__)

IDX_UBYTE = 0x08


def split_indices(n: int, test_fraction: float, rng: Rng | None = None) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Train/test indices; a seeded permutation when ``rng`` is given, else the trailing rows are held out."""
    if not 0 <= test_fraction < 1:
        raise ConfigError(f"test_fraction must be in [0, 1), got {test_fraction}")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    n_test = int(round(n * test_fraction))
    train, test = order[: n - n_test], order[n - n_test :]
    return np.sort(train).astype(np.int64), np.sort(test).astype(np.int64)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(
    path: str | Path,
    label_column: int | str | None = None,
    *,
    dataset_id: int = 0,
    name: str = "",
    test_fraction: float = 0.2,
    rng: Rng | None = None,
) -> Dataset:
    """Rectangular numeric CSV; a first row with any non-numeric cell is taken as the header."""
    path = Path(path)
    with path.open(newline="") as f:
        rows = [(line, row) for line, row in enumerate(csv.reader(f), start=1) if row and any(c.strip() for c in row)]
    if not rows:
        raise DataFormatError(f"{path}: no records")
    header: list[str] | None = None
    if not all(_is_number(c) for c in rows[0][1]):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: no records")

    width = len(header) if header is not None else len(rows[0][1])
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise DataFormatError(f"{path}: label column {label_column!r} not in header", 1)
        label_column = header.index(label_column)
    if label_column is not None and not 0 <= label_column < width:
        raise DataFormatError(f"{path}: label column {label_column} out of range for {width} columns", 1)

    features, labels = [], []
    for line, row in rows:
        if len(row) != width:
            raise DataFormatError(f"{path}:{line}: expected {width} cells, got {len(row)}", line)
        values = []
        for col, cell in enumerate(row):
            if col == label_column:
                try:
                    labels.append(int(cell))
                except ValueError:
                    raise DataFormatError(f"{path}:{line}: label {cell!r} is not an integer", line) from None
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise DataFormatError(f"{path}:{line}: cell {col + 1} {cell!r} is not numeric", line) from None
        features.append(values)

    x = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataFormatError(f"{path}: non-finite feature values")
    train, test = split_indices(len(x), test_fraction, rng)
    logger.info("loaded %d records with %d features from %s", len(x), x.shape[1], path)
    return Dataset(
        id=dataset_id,
        features=x,
        train=train,
        test=test,
        labels=np.asarray(labels, dtype=np.int64) if label_column is not None else None,
        name=name or path.stem,
    )


def _open(path: Path) -> IO[bytes]:
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def _read_idx(path: Path) -> NDArray[np.uint8]:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataFormatError(f"{path}: bad IDX magic {raw[:4]!r}", 0)
    dtype, ndim = raw[2], raw[3]
    if dtype != IDX_UBYTE:
        raise DataFormatError(f"{path}: IDX dtype 0x{dtype:02x} not supported (only unsigned byte)", 2)
    header_end = 4 + 4 * ndim
    if ndim == 0 or len(raw) < header_end:
        raise DataFormatError(f"{path}: truncated IDX header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims))
    payload = raw[header_end:]
    if len(payload) != expected:
        raise DataFormatError(f"{path}: IDX payload has {len(payload)} bytes, dims {dims} need {expected}", header_end)
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(
    images_path: str | Path,
    labels_path: str | Path | None = None,
    *,
    dataset_id: int = 0,
    name: str = "",
    test_fraction: float = 0.2,
    rng: Rng | None = None,
) -> Dataset:
    """MNIST-style IDX files; pixels scaled to [0, 1] and each image flattened to one row."""
    images_path = Path(images_path)
    images = _read_idx(images_path)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        raw_labels = _read_idx(Path(labels_path))
        if raw_labels.ndim != 1:
            raise DataFormatError(f"{labels_path}: label file must be 1-D, got {raw_labels.ndim} dims")
        if raw_labels.shape[0] != x.shape[0]:
            raise DataFormatError(f"{labels_path}: {raw_labels.shape[0]} labels for {x.shape[0]} images")
        labels = raw_labels.astype(np.int64)
    train, test = split_indices(len(x), test_fraction, rng)
    logger.info("loaded %d IDX images of %d values from %s", len(x), x.shape[1], images_path)
    return Dataset(dataset_id, x, train, test, labels=labels, name=name or images_path.name.split(".")[0])


@dataclass(frozen=True)
class ClusterSpec:
    members: tuple[int, ...]
    seed: int
    perturbation_std: float = 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    kind: Literal["teacher_net", "gaussian_blobs"]
    clusters: tuple[ClusterSpec, ...]
    train_samples: int = 500
    test_samples: int = 100
    noise_std: float = 0.01
    input_dim: int = 8
    mask_size: int = 0
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        ids = sorted(i for cluster in self.clusters for i in cluster.members)
        if ids != list(range(len(ids))):
            raise ConfigError(f"dataset ids {ids} must be 0..n-1 with each id in exactly one cluster")
        if self.train_samples < 1 or self.test_samples < 0:
            raise ConfigError("train_samples must be >= 1 and test_samples >= 0")
        if self.names and len(self.names) != len(ids):
            raise ConfigError(f"{len(self.names)} names for {len(ids)} datasets")

    @property
    def n(self) -> int:
        return sum(len(cluster.members) for cluster in self.clusters)

    def cluster_of(self, dataset_id: int) -> ClusterSpec:
        return next(c for c in self.clusters if dataset_id in c.members)


def _perturbed(theta: Sequence[LayerParams], std: float, rng: Rng) -> list[LayerParams]:
    if std == 0:
        return list(theta)
    return [
        LayerParams(p.weights + rng.normal(0.0, std, p.weights.shape), p.bias + rng.normal(0.0, std, p.bias.shape))
        for p in theta
    ]


def _block_mask(rng: Rng, rows: int, dim: int, size: int) -> Matrix:
    mask = np.ones((rows, dim))
    if size <= 0:
        return mask
    size = min(size, dim)
    for r, start in enumerate(rng.integers(0, dim - size + 1, size=rows)):
        mask[r, start : start + size] = 0.0
    return mask


def generate_synthetic(spec: SyntheticSpec, rng: Rng, network: NetworkSpec | None = None) -> list[Dataset]:
    """Datasets whose generative laws are shared within a cluster.

    ``teacher_net``: every cluster has a hidden teacher with the student's architecture, and each member
    perturbs its weights. Autoencoder records are ``teacher(z) + noise`` with ``z ~ N(0, I)``;
    classification labels are the argmax of the noisy teacher logits on ``x ~ N(0, I)``.
    ``gaussian_blobs``: labels in {-1, +1}, ``x = y * centre + noise``; centres are shared per cluster.
    """
    total = spec.train_samples + spec.test_samples
    train = np.arange(spec.train_samples, dtype=np.int64)
    test = np.arange(spec.train_samples, total, dtype=np.int64)
    datasets = []
    for i in range(spec.n):
        cluster = spec.cluster_of(i)
        own = rng.child(i)
        name = spec.names[i] if spec.names else f"d{i}"
        if spec.kind == "teacher_net":
            if network is None:
                raise ConfigError("teacher_net data needs a network spec")
            teacher = _perturbed(init_params(network, Rng(cluster.seed)), cluster.perturbation_std, own.child(0))
            x = own.child(1).normal(0.0, 1.0, (total, network.input_dim))
            out, _ = forward_batch(network, teacher, x)
            out = out + own.child(2).normal(0.0, spec.noise_std, out.shape) if spec.noise_std > 0 else out
            if network.loss_kind == "cross_entropy":
                datasets.append(Dataset(i, x, train, test, labels=out.argmax(axis=1).astype(np.int64), name=name))
            else:
                mask = _block_mask(own.child(3), total, out.shape[1], spec.mask_size) if spec.mask_size else None
                datasets.append(Dataset(i, out, train, test, mask=mask, name=name))
        elif spec.kind == "gaussian_blobs":
            centre = Rng(cluster.seed).normal(0.0, 1.0, (spec.input_dim,))
            centre = centre / np.linalg.norm(centre)
            if cluster.perturbation_std:
                centre = centre + own.child(0).normal(0.0, cluster.perturbation_std, centre.shape)
            y = np.where(own.child(1).permutation(total) % 2 == 0, 1, -1).astype(np.int64)
            x = y[:, None] * centre[None, :] + own.child(2).normal(0.0, spec.noise_std, (total, spec.input_dim))
            datasets.append(Dataset(i, x, train, test, labels=y, name=name))
        else:
            raise ConfigError(f"unknown synthetic kind {spec.kind!r}")
    logger.info("generated %d %s datasets of %d records", spec.n, spec.kind, total)
    return datasets
