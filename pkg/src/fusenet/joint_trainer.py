"""Joint training of one network per dataset, coupled through the robust layer-pair fusion term.

The robust objective is minimised by iteratively reweighted least squares: each iteration turns the
current pair distances into weights, converts them to per-layer coefficients and solves the weighted
quadratic problem by block-coordinate descent, one network at a time.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .exc import DivergenceError, ValueNotValid
from .fusion import (
    FusionState,
    compute_weights,
    consistency_loss,
    delta,
    estimate_sigma,
    layer_coefficients,
    pair_distances,
    surrogate_loss,
)
from .network import (
    Dataset,
    LayerParams,
    Network,
    NetworkSpec,
    ParamEnsemble,
    Pull,
    accuracy,
    anchor_pull,
    init_params,
    sgd_epoch,
    steps_per_epoch,
    task_loss,
)
from .numerics import Rng, Vector

__all__ = [
    "MODES",
    "TrainConfig",
    "IterationRecord",
    "TrainHistory",
    "anchor",
    "joint_objective",
    "max_stable_lr",
    "solve_weighted_joint",
    "init_l2",
    "irls_train",
    "train_baseline",
]

logger = logging.getLogger(__name__)

MODES = ("joint_robust", "isolated", "l2_reg", "shareall", "pretrain_finetune")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters.

    ``lam`` multiplies every fusion term. With ``ordered_pairs`` the reweighted step counts each
    unordered dataset pair twice, as a sum over all ordered pairs does, so ``lam=10`` keeps that scale.
    """

    lam: float = 10.0
    lr: float = 1e-2
    batch_size: int = 32
    inner_epochs_per_sweep: int = 1
    sweeps_per_irls_iter: int = 5
    max_irls_iters: int = 12
    delta_tol: float = 1e-2
    seed: int = 0
    mode: str = "joint_robust"
    init_max_sweeps: int = 20
    init_rel_tol: float = 1e-3
    epochs: int = 40
    finetune_epochs: int | None = None
    shared_layers: int = 0
    ordered_pairs: bool = True
    jacobi: bool = False
    workers: int | None = None
    shared_seed: bool = False
    divergence_factor: float = 1e3

    def __post_init__(self) -> None:
        checks = {
            "lam": self.lam >= 0,
            "lr": self.lr > 0,
            "batch_size": self.batch_size >= 1,
            "inner_epochs_per_sweep": self.inner_epochs_per_sweep >= 1,
            "sweeps_per_irls_iter": self.sweeps_per_irls_iter >= 1,
            "max_irls_iters": self.max_irls_iters >= 1,
            "delta_tol": self.delta_tol > 0,
            "seed": self.seed >= 0,
            "mode": self.mode in MODES,
            "init_max_sweeps": self.init_max_sweeps >= 1,
            "epochs": self.epochs >= 0,
            "finetune_epochs": self.finetune_epochs is None or 0 <= self.finetune_epochs <= self.epochs,
            "shared_layers": self.shared_layers >= 0,
        }
        for name, ok in checks.items():
            if not ok:
                raise ValueNotValid(getattr(self, name), f"TrainConfig.{name}")

    @property
    def irls_scale(self) -> float:
        return self.lam * (2.0 if self.ordered_pairs else 1.0)

    @property
    def finetune_budget(self) -> int:
        return self.epochs // 2 if self.finetune_epochs is None else self.finetune_epochs


@dataclass
class IterationRecord:
    iteration: int
    train_loss: list[float]
    test_loss: list[float]
    test_accuracy: list[float] | None
    consistency: float
    delta: float | None
    elapsed: float
    sweeps: int
    sgd_steps: int


@dataclass
class TrainHistory:
    records: list[IterationRecord] = field(default_factory=list)
    # joint objective before and after every block-coordinate sweep
    sweep_objectives: list[tuple[float, float]] = field(default_factory=list)
    weights: NDArray[np.float64] | None = None
    sigma: NDArray[np.float64] | None = None
    sweeps: int = 0
    sgd_steps: int = 0


@dataclass
class _Run:
    config: TrainConfig
    datasets: Sequence[Dataset]
    spec: NetworkSpec
    rngs: list[Rng]
    history: TrainHistory = field(default_factory=TrainHistory)
    started: float = field(default_factory=time.perf_counter)

    @classmethod
    def start(cls, spec: NetworkSpec, datasets: Sequence[Dataset], config: TrainConfig) -> _Run:
        root = Rng(config.seed)
        rngs = [root.child(0 if config.shared_seed else i) for i in range(len(datasets))]
        return cls(config, datasets, spec, rngs)

    def fresh_ensemble(self) -> ParamEnsemble:
        return ParamEnsemble(self.spec, [init_params(self.spec, rng) for rng in self.rngs])

    def record(
        self, ensemble: ParamEnsemble, iteration: int, consistency: float = float("nan"), change: float | None = None
    ) -> IterationRecord:
        spec = ensemble.spec
        train, test, acc = [], [], []
        for i, dataset in enumerate(self.datasets):
            theta = ensemble.params[i]
            train.append(task_loss(spec, theta, dataset, dataset.train))
            test.append(task_loss(spec, theta, dataset, dataset.test) if len(dataset.test) else float("nan"))
            if spec.loss_kind == "cross_entropy":
                acc.append(accuracy(spec, theta, dataset, dataset.test) if len(dataset.test) else float("nan"))
        entry = IterationRecord(
            iteration=iteration,
            train_loss=train,
            test_loss=test,
            test_accuracy=acc if spec.loss_kind == "cross_entropy" else None,
            consistency=consistency,
            delta=change,
            elapsed=time.perf_counter() - self.started,
            sweeps=self.history.sweeps,
            sgd_steps=self.history.sgd_steps,
        )
        self.history.records.append(entry)
        return entry


def anchor(i: int, l: int, c: NDArray[np.float64], ensemble: ParamEnsemble) -> tuple[float, Vector | None]:
    """Pull strength ``sum_{j != i} c_ijl`` and the c-weighted mean of the other networks' layer ``l``.

    Returns ``(0.0, None)`` when no other network is coupled to layer ``l`` of network ``i``.
    """
    others = [j for j in range(ensemble.n) if j != i]
    strength = float(sum(c[i, j, l] for j in others))
    if strength <= 0:
        return 0.0, None
    acc = sum(c[i, j, l] * ensemble.layer_flat(j, l) for j in others)
    return strength, np.asarray(acc, dtype=np.float64) / strength


def joint_objective(
    datasets: Sequence[Dataset], ensemble: ParamEnsemble, c: NDArray[np.float64], scale: float
) -> float:
    """``sum_i f_i(theta_i) + scale * sum_{i<j} sum_l c_ijl ||theta_i^l - theta_j^l||^2`` on the training splits."""
    data = sum(task_loss(ensemble.spec, ensemble.params[i], d, d.train) for i, d in enumerate(datasets))
    fusion = 0.0
    if scale:
        for i in range(ensemble.n):
            for j in range(i + 1, ensemble.n):
                for l in range(ensemble.L):
                    if c[i, j, l]:
                        diff = ensemble.layer_flat(i, l) - ensemble.layer_flat(j, l)
                        fusion += c[i, j, l] * float(diff @ diff)
    return float(data + scale * fusion)


def _peak_strength(c: NDArray[np.float64]) -> float:
    strengths = c.sum(axis=1) - np.einsum("iil->il", c)
    return float(strengths.max(initial=0.0))


def max_stable_lr(config: TrainConfig, n: int, L: int) -> float:
    """Learning rates below this bound keep every explicit fusion pull step a contraction.

    A step on ``strength * ||theta - anchor||^2`` contracts while ``2 * lr * strength < 2``. Pair weights
    never exceed 1, so the unit-weight coefficients bound every reweighted solve of the run.
    """
    if n < 2 or config.mode not in ("joint_robust", "l2_reg"):
        return float("inf")
    scale = config.irls_scale if config.mode == "joint_robust" else config.lam
    peak = scale * _peak_strength(layer_coefficients(np.ones((n, n, L - 1)), L))
    return float("inf") if peak == 0 else 1.0 / peak


def _block_update(
    run: _Run, i: int, source: ParamEnsemble, c: NDArray[np.float64], scale: float
) -> tuple[int, Network]:
    spec, config, dataset = source.spec, run.config, run.datasets[i]
    extra = None
    if scale > 0:
        pulls: list[Pull | None] = []
        for l in range(spec.L):
            strength, target = anchor(i, l, c, source)
            pulls.append(None if target is None else Pull(scale * strength, target))
            if target is not None:
                logger.debug("network %d layer %d: pull %.4g", i, l, scale * strength)
        extra = anchor_pull(spec, pulls)
    theta = source.params[i]
    for _ in range(config.inner_epochs_per_sweep):
        theta = sgd_epoch(spec, theta, dataset, config.lr, config.batch_size, run.rngs[i], extra)
    return i, theta


def _tie(ensemble: ParamEnsemble, source: int, layers: int) -> None:
    for j in range(ensemble.n):
        if j != source:
            for l in range(layers):
                tied = ensemble.params[source][l]
                ensemble.params[j][l] = LayerParams(tied.weights.copy(), tied.bias.copy())


def _sweep(run: _Run, ensemble: ParamEnsemble, c: NDArray[np.float64], scale: float, tied_layers: int) -> None:
    config = run.config
    if config.jacobi:
        snapshot = ensemble.copy()
        with ThreadPoolExecutor(max_workers=config.workers or ensemble.n) as pool:
            updates = list(pool.map(lambda i: _block_update(run, i, snapshot, c, scale), range(ensemble.n)))
        for i, theta in updates:
            ensemble.params[i] = theta
        if tied_layers:
            _tie(ensemble, 0, tied_layers)
    else:
        for i in range(ensemble.n):
            _, ensemble.params[i] = _block_update(run, i, ensemble, c, scale)
            if tied_layers:
                _tie(ensemble, i, tied_layers)
    run.history.sweeps += 1
    run.history.sgd_steps += sum(
        steps_per_epoch(d, config.batch_size) * config.inner_epochs_per_sweep for d in run.datasets
    )


def solve_weighted_joint(
    datasets: Sequence[Dataset],
    ensemble: ParamEnsemble,
    c: NDArray[np.float64],
    config: TrainConfig,
    *,
    scale: float | None = None,
    sweeps: int | None = None,
    tied_layers: int = 0,
    _run: _Run | None = None,
) -> ParamEnsemble:
    """Block-coordinate descent on the weighted quadratic problem with layer coefficients ``c``.

    Each sweep visits the networks in order; network ``i`` trains for ``inner_epochs_per_sweep`` epochs on
    ``f_i(theta) + scale * sum_l strength_il * ||theta^l - anchor_il||^2`` with anchors rebuilt from the
    current parameters of the others. The input ensemble is updated in place and returned.
    """
    run = _run or _Run.start(ensemble.spec, datasets, config)
    scale = config.lam if scale is None else scale
    sweeps = config.sweeps_per_irls_iter if sweeps is None else sweeps
    peak = scale * _peak_strength(c)
    if config.lr * peak >= 1.0:
        step = 2 * config.lr * peak
        message = f"pull step 2 * lr * strength = {step:.3g} does not contract; lr must be below {1 / peak:.3g}"
        raise ValueNotValid(config.lr, "TrainConfig.lr", message)
    initial = joint_objective(datasets, ensemble, c, scale)
    before = initial
    for s in range(sweeps):
        _sweep(run, ensemble, c, scale, tied_layers)
        after = joint_objective(datasets, ensemble, c, scale)
        run.history.sweep_objectives.append((before, after))
        logger.debug("sweep %d: objective %.6g -> %.6g", run.history.sweeps, before, after)
        if not np.isfinite(after) or after > config.divergence_factor * max(abs(initial), 1e-12):
            raise DivergenceError(
                f"joint objective grew from {initial:.4g} to {after:.4g} in sweep {s + 1}; lower the learning rate",
                initial,
                after,
            )
        before = after
    return ensemble


def init_l2(
    datasets: Sequence[Dataset],
    config: TrainConfig,
    spec: NetworkSpec,
    *,
    max_sweeps: int | None = None,
    rel_tol: float | None = None,
    record_every: int = 0,
    _run: _Run | None = None,
) -> ParamEnsemble:
    """Start point of IRLS: every pair weight is 1, i.e. the robust norm replaced by the squared L2 norm.

    Sweeps stop once the joint objective changes by less than ``rel_tol`` relative to its previous
    value, or after ``max_sweeps``. With ``record_every`` a history row is written every that many sweeps.
    """
    run = _run or _Run.start(spec, datasets, config)
    max_sweeps = config.init_max_sweeps if max_sweeps is None else max_sweeps
    rel_tol = config.init_rel_tol if rel_tol is None else rel_tol
    ensemble = run.fresh_ensemble()
    n, L = len(datasets), spec.L
    c = layer_coefficients(np.ones((n, n, L - 1)), L)
    tied = min(config.shared_layers, L) if config.mode == "l2_reg" else 0
    if tied:
        _tie(ensemble, 0, tied)
    for s in range(1, max_sweeps + 1):
        solve_weighted_joint(datasets, ensemble, c, config, scale=config.lam, sweeps=1, tied_layers=tied, _run=run)
        if record_every and (s % record_every == 0 or s == max_sweeps):
            run.record(ensemble, len(run.history.records))
        before, after = run.history.sweep_objectives[-1]
        if rel_tol > 0 and abs(before - after) <= rel_tol * max(abs(before), 1e-12):
            break
    logger.info("L2 initialisation finished after %d sweeps", run.history.sweeps)
    return ensemble


def irls_train(
    datasets: Sequence[Dataset], config: TrainConfig, spec: NetworkSpec
) -> tuple[ParamEnsemble, TrainHistory, FusionState]:
    if config.mode != "joint_robust":
        raise ValueNotValid(config.mode, "irls_train needs mode joint_robust")
    run = _Run.start(spec, datasets, config)
    n, L = len(datasets), spec.L
    ensemble = init_l2(datasets, config, spec, _run=run)

    if n >= 2:
        table = pair_distances(ensemble)
        scale = float(np.mean([np.linalg.norm(ensemble.flat(i)) for i in range(n)]))
        sigma = estimate_sigma(table, param_scale=scale)
    else:
        sigma = np.ones(L - 1)
    logger.debug("sigma per layer pair: %s", np.array2string(sigma, precision=4))

    state = FusionState(sigma=sigma, weights=np.ones((n, n, L - 1)))
    for k in range(1, config.max_irls_iters + 1):
        table = pair_distances(ensemble)
        state.advance(compute_weights(table, sigma))
        surrogate, robust = surrogate_loss(table, state.weights), consistency_loss(ensemble, sigma)
        if not np.isclose(surrogate, robust, rtol=1e-9, atol=1e-12):
            logger.warning("IRLS splitting mismatch at iteration %d: %.12g vs %.12g", k, surrogate, robust)
        change = delta(state)
        c = layer_coefficients(state.weights, L)
        solve_weighted_joint(datasets, ensemble, c, config, scale=config.irls_scale, _run=run)
        entry = run.record(ensemble, k, consistency_loss(ensemble, sigma), change)
        logger.info(
            "IRLS %d: delta=%.4g consistency=%.6g mean train loss=%.6g",
            k,
            change,
            entry.consistency,
            float(np.mean(entry.train_loss)),
        )
        if change <= config.delta_tol:
            break
    else:
        logger.warning("IRLS stopped after %d iterations with delta above %g", config.max_irls_iters, config.delta_tol)

    run.history.weights = state.weights.copy()
    run.history.sigma = sigma.copy()
    return ensemble, run.history, state


def _train_isolated(run: _Run, ensemble: ParamEnsemble, epochs: int) -> None:
    config = run.config
    block = config.sweeps_per_irls_iter
    for start in range(0, epochs, block):
        span = min(block, epochs - start)
        for i, dataset in enumerate(run.datasets):
            theta = ensemble.params[i]
            for _ in range(span):
                theta = sgd_epoch(ensemble.spec, theta, dataset, config.lr, config.batch_size, run.rngs[i])
            ensemble.params[i] = theta
            run.history.sgd_steps += steps_per_epoch(dataset, config.batch_size) * span
        run.history.sweeps += span
        run.record(ensemble, len(run.history.records))


def _train_shared(run: _Run, epochs: int) -> ParamEnsemble:
    config, spec = run.config, run.spec
    union = Dataset.union(run.datasets)
    theta = init_params(spec, run.rngs[0])

    def replicate() -> ParamEnsemble:
        copies = [[LayerParams(p.weights.copy(), p.bias.copy()) for p in theta] for _ in run.datasets]
        return ParamEnsemble(spec, copies)

    block = config.sweeps_per_irls_iter
    for start in range(0, epochs, block):
        span = min(block, epochs - start)
        for _ in range(span):
            theta = sgd_epoch(spec, theta, union, config.lr, config.batch_size, run.rngs[0])
        run.history.sgd_steps += steps_per_epoch(union, config.batch_size) * span
        run.history.sweeps += span
        run.record(replicate(), len(run.history.records))
    return replicate()


def train_baseline(
    datasets: Sequence[Dataset], config: TrainConfig, spec: NetworkSpec
) -> tuple[ParamEnsemble, TrainHistory]:
    """The comparison modes: isolated, l2_reg, shareall and pretrain_finetune.

    All modes spend ``config.epochs`` epochs per dataset and record one history row every
    ``sweeps_per_irls_iter`` epochs.
    """
    run = _Run.start(spec, datasets, config)
    logger.info("training baseline %s on %d datasets", config.mode, len(datasets))
    if config.mode == "isolated":
        ensemble = run.fresh_ensemble()
        _train_isolated(run, ensemble, config.epochs)
    elif config.mode == "l2_reg":
        sweeps = config.epochs // config.inner_epochs_per_sweep
        ensemble = init_l2(
            datasets, config, spec, max_sweeps=sweeps, rel_tol=0.0, record_every=config.sweeps_per_irls_iter, _run=run
        )
    elif config.mode == "shareall":
        ensemble = _train_shared(run, config.epochs)
    elif config.mode == "pretrain_finetune":
        ensemble = _train_shared(run, config.epochs - config.finetune_budget)
        _train_isolated(run, ensemble, config.finetune_budget)
    else:
        raise ValueNotValid(config.mode, "train_baseline needs a baseline mode")
    if not run.history.records:
        run.record(ensemble, 0)
    return ensemble, run.history
