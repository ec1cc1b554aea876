"""Feed-forward networks with hand-derived backprop and the per-dataset task losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from numpy.typing import NDArray

from .exc import DimensionMismatch, LabelOutOfRange, NonFiniteError
from .numerics import Matrix, Rng, Vector, gaussian_fill

__all__ = [
    "ACTIVATIONS",
    "LOSS_KINDS",
    "NetworkSpec",
    "LayerParams",
    "ParamEnsemble",
    "Dataset",
    "Pull",
    "ExtraGrad",
    "init_params",
    "forward",
    "forward_batch",
    "loss_classification",
    "loss_reconstruction",
    "task_loss",
    "accuracy",
    "grad_task_loss",
    "anchor_pull",
    "sgd_epoch",
    "steps_per_epoch",
]

logger = logging.getLogger(__name__)

Activation = Literal["relu", "tanh", "sigmoid", "identity"]
LossKind = Literal["cross_entropy", "reconstruction"]
Indices = NDArray[np.int64]


def _sigmoid(z: Matrix) -> Matrix:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# name -> (activation(pre), derivative(pre, post))
ACTIVATIONS: dict[str, tuple[Callable[[Matrix], Matrix], Callable[[Matrix, Matrix], Matrix]]] = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "identity": (lambda z: z.copy(), lambda z, a: np.ones_like(z)),
}

LOSS_KINDS = ("cross_entropy", "reconstruction")


@dataclass(frozen=True)
class NetworkSpec:
    layer_dims: tuple[tuple[int, int], ...]
    activations: tuple[str, ...]
    loss_kind: str

    def __post_init__(self) -> None:
        if len(self.layer_dims) < 2:
            raise DimensionMismatch(f"layer-pair fusion needs at least two layers, got {len(self.layer_dims)}")
        if len(self.activations) != len(self.layer_dims):
            raise DimensionMismatch("one activation per layer", len(self.activations), len(self.layer_dims))
        for l, ((_, out_dim), (in_dim, _)) in enumerate(zip(self.layer_dims, self.layer_dims[1:]), start=1):
            if out_dim != in_dim:
                raise DimensionMismatch(f"layer {l} outputs {out_dim} units but layer {l + 1} expects {in_dim}")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise DimensionMismatch(f"unknown activation {name!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise DimensionMismatch(f"unknown loss kind {self.loss_kind!r}")

    @classmethod
    def from_units(cls, units: Sequence[int], activations: Sequence[str], loss_kind: str) -> NetworkSpec:
        """Build from unit counts ``d_0..d_L``: layer ``l`` maps ``d_{l-1}`` to ``d_l``."""
        return cls(tuple(zip(units[:-1], units[1:])), tuple(activations), loss_kind)

    @property
    def L(self) -> int:
        return len(self.layer_dims)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0][0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1][1]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(out_dim * in_dim + out_dim for in_dim, out_dim in self.layer_dims)


@dataclass(frozen=True)
class LayerParams:
    weights: Matrix
    bias: Vector

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    def flat(self) -> Vector:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def from_flat(cls, flat: Vector, in_dim: int, out_dim: int) -> LayerParams:
        if flat.size != out_dim * in_dim + out_dim:
            raise DimensionMismatch(f"expected {out_dim * in_dim + out_dim} values, got {flat.size}")
        split = out_dim * in_dim
        return cls(flat[:split].reshape(out_dim, in_dim).copy(), flat[split:].copy())

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> LayerParams:
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))


Network = list[LayerParams]
ExtraGrad = Callable[[Sequence[LayerParams]], Sequence[LayerParams | None]]


@dataclass
class ParamEnsemble:
    """``params[i][l]`` holds layer ``l`` of the network trained on dataset ``i``."""

    spec: NetworkSpec
    params: list[Network]

    def __post_init__(self) -> None:
        for i, theta in enumerate(self.params):
            if len(theta) != self.spec.L:
                raise DimensionMismatch(f"network {i} has {len(theta)} layers, spec has {self.spec.L}")
            for l, (layer, (in_dim, out_dim)) in enumerate(zip(theta, self.spec.layer_dims)):
                if layer.weights.shape != (out_dim, in_dim) or layer.bias.shape != (out_dim,):
                    raise DimensionMismatch(f"network {i} layer {l} has shape {layer.weights.shape}")

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def L(self) -> int:
        return self.spec.L

    def layer_flat(self, i: int, l: int) -> Vector:
        return self.params[i][l].flat()

    def flat(self, i: int) -> Vector:
        return np.concatenate([layer.flat() for layer in self.params[i]])

    def copy(self) -> ParamEnsemble:
        return ParamEnsemble(
            self.spec, [[LayerParams(p.weights.copy(), p.bias.copy()) for p in theta] for theta in self.params]
        )

    @classmethod
    def from_flat(cls, spec: NetworkSpec, flats: Sequence[Vector]) -> ParamEnsemble:
        networks = []
        for flat in flats:
            offsets = np.cumsum((0, *spec.layer_sizes))
            networks.append(
                [
                    LayerParams.from_flat(flat[start:stop], in_dim, out_dim)
                    for start, stop, (in_dim, out_dim) in zip(offsets[:-1], offsets[1:], spec.layer_dims)
                ]
            )
        return cls(spec, networks)


@dataclass(frozen=True)
class Dataset:
    id: int
    features: Matrix
    train: Indices
    test: Indices
    labels: NDArray[np.int64] | None = None
    mask: Matrix | None = None
    name: str = field(default="")

    def __post_init__(self) -> None:
        if self.labels is not None and self.labels.shape != (self.features.shape[0],):
            raise DimensionMismatch(f"dataset {self.id}: {self.labels.size} labels for {self.features.shape[0]} rows")
        if self.mask is not None and self.mask.shape != self.features.shape:
            raise DimensionMismatch(f"dataset {self.id}: mask shape {self.mask.shape} != {self.features.shape}")

    @property
    def label(self) -> str:
        return self.name or f"d{self.id}"

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    def inputs(self, subset: Indices) -> Matrix:
        x = self.features[subset]
        return x * self.mask[subset] if self.mask is not None else x

    @classmethod
    def union(cls, datasets: Sequence[Dataset], id: int = 0) -> Dataset:
        """Stack records of several datasets; train/test splits keep their membership."""
        offsets = np.cumsum([0, *(d.size for d in datasets)])
        has_mask = any(d.mask is not None for d in datasets)
        return cls(
            id=id,
            features=np.vstack([d.features for d in datasets]),
            train=np.concatenate([d.train + off for d, off in zip(datasets, offsets)]).astype(np.int64),
            test=np.concatenate([d.test + off for d, off in zip(datasets, offsets)]).astype(np.int64),
            labels=None if datasets[0].labels is None else np.concatenate([d.labels for d in datasets]),
            mask=(
                np.vstack([d.mask if d.mask is not None else np.ones_like(d.features) for d in datasets])
                if has_mask
                else None
            ),
            name="+".join(d.label for d in datasets),
        )


def init_params(spec: NetworkSpec, rng: Rng) -> Network:
    """Gaussian weights with std ``1/sqrt(in_dim)``, zero bias."""
    return [
        LayerParams(gaussian_fill(rng, np.empty((out_dim, in_dim)), 0.0, 1.0 / np.sqrt(in_dim)), np.zeros(out_dim))
        for in_dim, out_dim in spec.layer_dims
    ]


@dataclass(frozen=True)
class _Cache:
    inputs: Matrix
    pre: list[Matrix]
    post: list[Matrix]


def forward_batch(spec: NetworkSpec, theta: Sequence[LayerParams], x: Matrix) -> tuple[Matrix, _Cache]:
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"input has shape {x.shape}, network expects (*, {spec.input_dim})")
    pre: list[Matrix] = []
    post: list[Matrix] = []
    a = x
    for layer, name in zip(theta, spec.activations):
        z = a @ layer.weights.T + layer.bias
        a = ACTIVATIONS[name][0](z)
        pre.append(z)
        post.append(a)
    return a, _Cache(x, pre, post)


def forward(spec: NetworkSpec, theta: Sequence[LayerParams], x: Vector) -> tuple[Vector, _Cache]:
    out, cache = forward_batch(spec, theta, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return out[0], cache


def _log_softmax(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _checked_labels(spec: NetworkSpec, dataset: Dataset, subset: Indices) -> NDArray[np.int64]:
    if dataset.labels is None:
        raise LabelOutOfRange(f"dataset {dataset.label} has no labels for a cross-entropy loss")
    y = dataset.labels[subset]
    bad = np.flatnonzero((y < 0) | (y >= spec.output_dim))
    if bad.size:
        record = int(subset[bad[0]])
        raise LabelOutOfRange(f"dataset {dataset.label} record {record}: label {int(y[bad[0]])}", record)
    return y


def loss_classification(spec: NetworkSpec, theta: Sequence[LayerParams], dataset: Dataset, subset: Indices) -> float:
    if spec.loss_kind != "cross_entropy":
        raise DimensionMismatch(f"network loss is {spec.loss_kind}, not cross_entropy")
    if len(subset) == 0:
        raise DimensionMismatch("empty subset")
    y = _checked_labels(spec, dataset, subset)
    logits, _ = forward_batch(spec, theta, dataset.inputs(subset))
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def loss_reconstruction(spec: NetworkSpec, theta: Sequence[LayerParams], dataset: Dataset, subset: Indices) -> float:
    if spec.loss_kind != "reconstruction":
        raise DimensionMismatch(f"network loss is {spec.loss_kind}, not reconstruction")
    if len(subset) == 0:
        raise DimensionMismatch("empty subset")
    out, _ = forward_batch(spec, theta, dataset.inputs(subset))
    # target is the uncorrupted record even when the input is masked
    return float(((dataset.features[subset] - out) ** 2).sum(axis=1).mean())


def task_loss(spec: NetworkSpec, theta: Sequence[LayerParams], dataset: Dataset, subset: Indices) -> float:
    if spec.loss_kind == "cross_entropy":
        return loss_classification(spec, theta, dataset, subset)
    return loss_reconstruction(spec, theta, dataset, subset)


def accuracy(spec: NetworkSpec, theta: Sequence[LayerParams], dataset: Dataset, subset: Indices) -> float:
    y = _checked_labels(spec, dataset, subset)
    logits, _ = forward_batch(spec, theta, dataset.inputs(subset))
    return float((logits.argmax(axis=1) == y).mean())


def grad_task_loss(
    spec: NetworkSpec, theta: Sequence[LayerParams], dataset: Dataset, batch: Indices
) -> list[LayerParams]:
    if len(batch) == 0:
        raise DimensionMismatch("empty batch")
    out, cache = forward_batch(spec, theta, dataset.inputs(batch))
    size = len(batch)
    if spec.loss_kind == "cross_entropy":
        y = _checked_labels(spec, dataset, batch)
        delta = np.exp(_log_softmax(out))
        delta[np.arange(size), y] -= 1.0
        delta /= size
    else:
        delta = 2.0 * (out - dataset.features[batch]) / size

    grads: list[LayerParams] = []
    for l in range(spec.L - 1, -1, -1):
        name = spec.activations[l]
        dz = delta * ACTIVATIONS[name][1](cache.pre[l], cache.post[l])
        a_prev = cache.post[l - 1] if l > 0 else cache.inputs
        grads.append(LayerParams(dz.T @ a_prev, dz.sum(axis=0)))
        delta = dz @ theta[l].weights
    grads.reverse()
    return grads


@dataclass(frozen=True)
class Pull:
    """Quadratic pull ``strength * ||theta^l - anchor||^2`` on one layer."""

    strength: float
    anchor: Vector


def anchor_pull(spec: NetworkSpec, pulls: Sequence[Pull | None]) -> ExtraGrad:
    """Gradient ``2 * strength * (theta^l - anchor)`` per layer; None where a layer is free."""

    def extra_grad(theta: Sequence[LayerParams]) -> list[LayerParams | None]:
        out: list[LayerParams | None] = []
        for layer, pull, (in_dim, out_dim) in zip(theta, pulls, spec.layer_dims):
            if pull is None or pull.strength == 0:
                out.append(None)
            else:
                out.append(LayerParams.from_flat(2.0 * pull.strength * (layer.flat() - pull.anchor), in_dim, out_dim))
        return out

    return extra_grad


def steps_per_epoch(dataset: Dataset, batch_size: int) -> int:
    return -(-len(dataset.train) // batch_size)


def sgd_epoch(
    spec: NetworkSpec,
    theta: Sequence[LayerParams],
    dataset: Dataset,
    lr: float,
    batch_size: int,
    rng: Rng,
    extra_grad: ExtraGrad | None = None,
) -> Network:
    """One shuffled pass over the training split of ``dataset``."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    order = dataset.train[rng.permutation(len(dataset.train))]
    current = list(theta)
    for step, start in enumerate(range(0, len(order), batch_size)):
        grads = grad_task_loss(spec, current, dataset, order[start : start + batch_size])
        extras = extra_grad(current) if extra_grad is not None else [None] * spec.L
        updated: Network = []
        for l, (layer, grad, extra) in enumerate(zip(current, grads, extras)):
            gw, gb = grad.weights, grad.bias
            if extra is not None:
                gw, gb = gw + extra.weights, gb + extra.bias
            new = LayerParams(layer.weights - lr * gw, layer.bias - lr * gb)
            if not (np.all(np.isfinite(new.weights)) and np.all(np.isfinite(new.bias))):
                norm = float(np.linalg.norm(layer.flat()))
                raise NonFiniteError(
                    f"dataset {dataset.label}: non-finite parameters after step {step} in layer {l}"
                    f" (norm before step {norm:.3e}); lower the learning rate",
                    step,
                    l,
                    norm,
                )
            updated.append(new)
        current = updated
    return current
