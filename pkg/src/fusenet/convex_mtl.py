"""Linear multi-task models in a shared feature space: joint SVMs and joint logistic regressions.

Labels are in {-1, +1}. Biases are never penalised or fused; only the weight vectors are.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import isotonic_regression

from .exc import DivergenceError, LabelOutOfRange, ValueNotValid
from .network import Dataset
from .numerics import Matrix, Rng, Vector

__all__ = [
    "LinearModel",
    "ConvexConfig",
    "svm_objective",
    "svm_joint_train",
    "logreg_objective",
    "logreg_joint_train",
    "fusion_l1_prox",
    "sign_accuracy",
]

logger = logging.getLogger(__name__)


@dataclass
class LinearModel:
    w: Vector
    b: float

    def margins(self, x: Matrix) -> Vector:
        return x @ self.w + self.b


@dataclass(frozen=True)
class ConvexConfig:
    lam: float = 0.1
    mu: float = 1.0
    gamma: float = 0.1
    lr: float = 0.01
    max_iters: int = 2000
    tol: float = 1e-9
    inner_iters: int = 50
    init_std: float = 0.0
    divergence_factor: float = 1e3

    def __post_init__(self) -> None:
        for name in ("lam", "mu", "gamma", "init_std"):
            if getattr(self, name) < 0:
                raise ValueNotValid(getattr(self, name), f"ConvexConfig.{name}")
        if self.lr <= 0 or self.max_iters < 1 or self.inner_iters < 1 or self.tol < 0:
            raise ValueNotValid((self.lr, self.max_iters, self.inner_iters, self.tol), "ConvexConfig")


def _signed(dataset: Dataset) -> tuple[Matrix, Vector]:
    if dataset.labels is None:
        raise LabelOutOfRange(f"dataset {dataset.label} has no labels")
    x = dataset.features[dataset.train]
    y = dataset.labels[dataset.train]
    bad = np.flatnonzero((y != 1) & (y != -1))
    if bad.size:
        record = int(dataset.train[bad[0]])
        label = int(y[bad[0]])
        raise LabelOutOfRange(f"dataset {dataset.label} record {record}: label {label} not in {{-1,+1}}", record)
    return x, y.astype(np.float64)


def sign_accuracy(model: LinearModel, dataset: Dataset, subset: NDArray[np.int64]) -> float:
    """Fraction of records whose label matches the sign of the margin; a zero margin predicts +1."""
    if len(subset) == 0 or dataset.labels is None:
        return float("nan")
    predicted = np.where(model.margins(dataset.features[subset]) >= 0, 1, -1)
    return float((predicted == dataset.labels[subset]).mean())


def _pairwise(ws: Matrix, p: int) -> float:
    m = ws.shape[0]
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            diff = ws[i] - ws[j]
            total += float(np.sum(np.abs(diff))) if p == 1 else float(diff @ diff)
    return total


def _init(datasets: Sequence[Dataset], cfg: ConvexConfig, rng: Rng | None) -> list[LinearModel]:
    d = datasets[0].features.shape[1]
    if rng is None or cfg.init_std == 0:
        return [LinearModel(np.zeros(d), 0.0) for _ in datasets]
    return [LinearModel(rng.child(i).normal(0.0, cfg.init_std, (d,)), 0.0) for i in range(len(datasets))]


def svm_objective(models: Sequence[LinearModel], datasets: Sequence[Dataset], cfg: ConvexConfig) -> float:
    total = 0.0
    for model, dataset in zip(models, datasets):
        x, y = _signed(dataset)
        total += float(np.maximum(0.0, 1.0 - y * model.margins(x)).sum()) + cfg.lam * float(model.w @ model.w)
    return total + cfg.mu * _pairwise(np.stack([m.w for m in models]), 2)


def _quadratic_prox(v: Matrix, step: float, cfg: ConvexConfig) -> Matrix:
    # prox of step*(lam*sum||w_i||^2 + mu*sum_{i<j}||w_i-w_j||^2): the mean and the deviations decouple
    shrink = 1.0 + 2.0 * step * cfg.lam
    if cfg.mu == 0:
        return v / shrink
    m = v.shape[0]
    mean = v.mean(axis=0)
    return mean / shrink + (v - mean) / (shrink + 2.0 * step * cfg.mu * m)


def svm_joint_train(
    datasets: Sequence[Dataset], cfg: ConvexConfig, rng: Rng | None = None, trace: list[float] | None = None
) -> list[LinearModel]:
    """Proximal subgradient descent on the hinge form with step ``lr / sqrt(t)``; returns the best iterate.

    Models coupled by ``mu > 0`` form a single block. With ``mu == 0`` every model is its own block, so
    each model keeps its own best iterate and stopping point, as if trained alone.
    ``trace``, when given, receives the objective after every iteration.
    """
    if not datasets:
        raise ValueNotValid(0, "svm_joint_train needs at least one dataset")
    data = [_signed(d) for d in datasets]
    models = _init(datasets, cfg, rng)
    w = np.stack([m.w for m in models])
    b = np.array([m.b for m in models])
    blocks = [[i] for i in range(len(datasets))] if cfg.mu == 0 else [list(range(len(datasets)))]

    def objective(rows: list[int]) -> float:
        return svm_objective([LinearModel(w[i], b[i]) for i in rows], [datasets[i] for i in rows], cfg)

    values = [objective(rows) for rows in blocks]
    best = list(values)
    initial = sum(values)
    best_w, best_b = w.copy(), b.copy()
    live = list(range(len(blocks)))
    t = 0
    while live and t < cfg.max_iters:
        t += 1
        step = cfg.lr / np.sqrt(t)
        gw = np.zeros_like(w)
        gb = np.zeros_like(b)
        for i, (x, y) in enumerate(data):
            active = y * (x @ w[i] + b[i]) < 1.0
            gw[i] = -(y[active] @ x[active])
            gb[i] = -y[active].sum()
        new_w = _quadratic_prox(w - step * gw, step, cfg)
        new_b = b - step * gb
        for k in list(live):
            rows = blocks[k]
            moved = float(np.abs(new_w[rows] - w[rows]).max() + np.abs(new_b[rows] - b[rows]).max())
            w[rows], b[rows] = new_w[rows], new_b[rows]
            values[k] = objective(rows)
            if values[k] < best[k]:
                best[k] = values[k]
                best_w[rows], best_b[rows] = w[rows], b[rows]
            if moved < cfg.tol:
                live.remove(k)
        current = sum(values)
        if trace is not None:
            trace.append(current)
        if not np.isfinite(current) or current > cfg.divergence_factor * max(initial, 1e-12):
            raise DivergenceError(f"svm objective grew from {initial:.4g} to {current:.4g}; lower lr", t)
    logger.info("svm: objective %.6g -> %.6g after %d iterations", initial, sum(best), t)
    return [LinearModel(wi, float(bi)) for wi, bi in zip(best_w, best_b)]


def _sigmoid(z: Vector) -> Vector:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logreg_data_term(model: LinearModel, x: Matrix, y: Vector) -> float:
    residual = _sigmoid(model.margins(x)) - (1.0 + y) / 2.0
    return float(residual @ residual)


def logreg_objective(
    models: Sequence[LinearModel], datasets: Sequence[Dataset], cfg: ConvexConfig, augmented: bool = True
) -> float:
    total = 0.0
    for model, dataset in zip(models, datasets):
        x, y = _signed(dataset)
        total += _logreg_data_term(model, x, y) + cfg.lam * float(model.w @ model.w)
    ws = np.stack([m.w for m in models])
    total += cfg.mu * _pairwise(ws, 1)
    if augmented:
        total += cfg.gamma * _pairwise(ws, 2)
    return total


def _smooth(
    w: Vector, b: float, x: Matrix, y: Vector, partners: Matrix, cfg: ConvexConfig
) -> tuple[float, Vector, float]:
    """Value and gradient in ``(w, b)`` of one model's smooth terms, partners fixed."""
    s = _sigmoid(x @ w + b)
    residual = s - (1.0 + y) / 2.0
    dz = 2.0 * residual * s * (1.0 - s)
    diff = w - partners
    value = float(residual @ residual) + cfg.lam * float(w @ w) + cfg.gamma * float(np.sum(diff * diff))
    grad_w = x.T @ dz + 2.0 * cfg.lam * w + 2.0 * cfg.gamma * diff.sum(axis=0)
    return value, grad_w, float(dz.sum())


def _partner_prox(v: Vector, partners: Matrix, tau: float) -> Vector:
    """Coordinatewise prox of ``tau * sum_p |x - a_p|``: the median of the partners and ``v`` shifted by ``tau``."""
    p = partners.shape[0]
    if p == 0 or tau == 0:
        return v.copy()
    shifts = v[None, :] + tau * (p - 2.0 * np.arange(p + 1))[:, None]
    return np.median(np.vstack([partners, shifts]), axis=0)


def fusion_l1_prox(v: Matrix, tau: float) -> Matrix:
    """Prox of ``tau * sum_{i<j} ||w_i - w_j||_1`` for stacked rows ``v``.

    Per coordinate, sorting turns the pairwise sum into a linear term, and the ordering constraint is
    restored by isotonic regression; rows whose values meet are fused exactly.
    """
    m = v.shape[0]
    out = np.empty_like(v)
    ranks = 2.0 * np.arange(1, m + 1) - m - 1
    for k in range(v.shape[1]):
        order = np.argsort(v[:, k], kind="stable")
        out[order, k] = isotonic_regression(v[order, k] - tau * ranks).x
    return out


def _block_minimize(
    model: LinearModel, x: Matrix, y: Vector, partners: Matrix, cfg: ConvexConfig, step: float
) -> tuple[LinearModel, float]:
    w, b = model.w.copy(), model.b
    value, gw, gb = _smooth(w, b, x, y, partners, cfg)
    for _ in range(cfg.inner_iters):
        while True:
            new_w = _partner_prox(w - step * gw, partners, step * cfg.mu)
            new_b = b - step * gb
            new_value, new_gw, new_gb = _smooth(new_w, new_b, x, y, partners, cfg)
            dw, db = new_w - w, new_b - b
            bound = value + float(gw @ dw) + gb * db + (float(dw @ dw) + db * db) / (2.0 * step)
            if new_value <= bound + 1e-15 or step < 1e-14:
                break
            step *= 0.5
        moved = float(np.abs(dw).max(initial=0.0) + abs(db))
        w, b, value, gw, gb = new_w, new_b, new_value, new_gw, new_gb
        if moved < cfg.tol:
            break
    return LinearModel(w, b), step


def _fusion_step(
    models: list[LinearModel], data: Sequence[tuple[Matrix, Vector]], cfg: ConvexConfig, step: float
) -> tuple[list[LinearModel], float]:
    """One proximal-gradient step on all models at once, so fused coordinates can move together."""
    w = np.stack([m.w for m in models])
    b = np.array([m.b for m in models])

    def smooth_all(w: Matrix, b: Vector) -> tuple[float, Matrix, Vector]:
        value, gw, gb = 0.0, np.zeros_like(w), np.zeros_like(b)
        for i, (x, y) in enumerate(data):
            v, g, g0 = _smooth(w[i], b[i], x, y, np.delete(w, i, axis=0), cfg)
            value += v
            gw[i], gb[i] = g, g0
        # every gamma pair was counted from both ends
        value -= cfg.gamma * _pairwise(w, 2)
        return value, gw, gb

    value, gw, gb = smooth_all(w, b)
    while True:
        new_w = fusion_l1_prox(w - step * gw, step * cfg.mu)
        new_b = b - step * gb
        new_value, _, _ = smooth_all(new_w, new_b)
        dw, db = new_w - w, new_b - b
        distance = float(np.sum(dw * dw)) + float(db @ db)
        bound = value + float(np.sum(gw * dw)) + float(gb @ db) + distance / (2.0 * step)
        if new_value <= bound + 1e-15 or step < 1e-14:
            break
        step *= 0.5
    return [LinearModel(wi, float(bi)) for wi, bi in zip(new_w, new_b)], step


def logreg_joint_train(
    datasets: Sequence[Dataset], cfg: ConvexConfig, rng: Rng | None = None, trace: list[float] | None = None
) -> list[LinearModel]:
    """Alternating minimisation of the augmented objective.

    Each outer cycle minimises over one model at a time (proximal gradient with backtracking, the L1
    fusion to the fixed partners handled by its exact coordinatewise prox) and then takes one joint
    proximal step over all models. Every accepted step satisfies the sufficient-decrease bound, so the
    objective never increases. ``trace`` receives the objective after every cycle.
    """
    if not datasets:
        raise ValueNotValid(0, "logreg_joint_train needs at least one dataset")
    data = [_signed(d) for d in datasets]
    models = _init(datasets, cfg, rng)
    steps = [cfg.lr] * len(models)
    joint_step = cfg.lr
    initial = previous = logreg_objective(models, datasets, cfg)
    for cycle in range(1, cfg.max_iters + 1):
        for i, (x, y) in enumerate(data):
            partners = np.stack([m.w for j, m in enumerate(models) if j != i]) if len(models) > 1 else np.empty((0, 0))
            models[i], steps[i] = _block_minimize(models[i], x, y, partners.reshape(-1, x.shape[1]), cfg, steps[i])
        if len(models) > 1:
            models, joint_step = _fusion_step(models, data, cfg, joint_step)
        current = logreg_objective(models, datasets, cfg)
        if trace is not None:
            trace.append(current)
        if not np.isfinite(current) or current > cfg.divergence_factor * max(initial, 1e-12):
            raise DivergenceError(f"logreg objective grew from {initial:.4g} to {current:.4g}; lower lr", cycle)
        logger.debug("logreg cycle %d: objective %.10g", cycle, current)
        if previous - current <= cfg.tol * max(1.0, abs(previous)):
            break
        previous = current
    logger.info("logreg: objective %.6g -> %.6g after %d cycles", initial, current, cycle)
    return models
