"""Robust fusion of adjacent-layer parameters and its iteratively reweighted least squares weights.

Layer pairs are indexed ``0..L-2``; pair ``l`` concatenates layers ``l`` and ``l+1``. Tensors over
dataset pairs are dense ``(n, n, L-1)`` arrays, symmetric in the first two axes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .exc import DimensionMismatch
from .network import ParamEnsemble

__all__ = [
    "FusionState",
    "PairDistanceTable",
    "rho",
    "irls_weight",
    "pair_distances",
    "estimate_sigma",
    "compute_weights",
    "consistency_loss",
    "surrogate_loss",
    "delta",
    "pair_weights_to_layer_coeffs",
    "layer_coefficients",
]

logger = logging.getLogger(__name__)

Tensor = NDArray[np.float64]
# (n, n, L-1), symmetric, zero diagonal
PairDistanceTable = Tensor

SIGMA_FLOOR = 1e-8


def rho(x: float | Tensor, sigma: float | Tensor) -> float | Tensor:
    """``sigma^2 x^2 / (sigma^2 + x^2)``: quadratic near zero, saturating at ``sigma^2``."""
    s2 = np.square(sigma)
    x2 = np.square(x)
    return s2 * x2 / (s2 + x2)


def irls_weight(x: float | Tensor, sigma: float | Tensor) -> float | Tensor:
    s2 = np.square(sigma)
    return s2 / (s2 + np.square(x))


def _pair_vector(ensemble: ParamEnsemble, i: int, l: int) -> NDArray[np.float64]:
    return np.concatenate([ensemble.layer_flat(i, l), ensemble.layer_flat(i, l + 1)])


def pair_distances(ensemble: ParamEnsemble) -> PairDistanceTable:
    """``d[i, j, l] = ||(theta_i^l, theta_i^{l+1}) - (theta_j^l, theta_j^{l+1})||``."""
    n, L = ensemble.n, ensemble.L
    if n < 1:
        raise DimensionMismatch("layer-pair distances need at least one network")
    d = np.zeros((n, n, L - 1))
    for l in range(L - 1):
        pairs = np.stack([_pair_vector(ensemble, i, l) for i in range(n)])
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j, l] = d[j, i, l] = np.linalg.norm(pairs[i] - pairs[j])
    return d


def estimate_sigma(table: PairDistanceTable, param_scale: float = 0.0) -> NDArray[np.float64]:
    """Per layer pair, the mean over datasets of the nearest-neighbour distance.

    Values below ``1e-8 * (1 + param_scale)`` are replaced by that floor so the robust norm never
    degenerates when networks start identical.
    """
    n = table.shape[0]
    if n < 2:
        raise DimensionMismatch(f"sigma needs at least two datasets, got {n}")
    masked = table + np.where(np.eye(n, dtype=bool)[:, :, None], np.inf, 0.0)
    sigma = masked.min(axis=1).mean(axis=0)
    floor = SIGMA_FLOOR * (1.0 + param_scale)
    if np.any(sigma < floor):
        logger.warning("sigma below floor at layer pairs %s; using %.3e", np.flatnonzero(sigma < floor).tolist(), floor)
        sigma = np.maximum(sigma, floor)
    return sigma


def compute_weights(table: PairDistanceTable, sigma: NDArray[np.float64]) -> Tensor:
    if np.any(sigma <= 0):
        raise DimensionMismatch("sigma must be positive")
    w = irls_weight(table, sigma[None, None, :])
    return np.asarray(w, dtype=np.float64)


def consistency_loss(ensemble: ParamEnsemble, sigma: NDArray[np.float64]) -> float:
    """Sum over ``i < j`` and layer pairs of ``rho(d_ijl, sigma_l)``."""
    if ensemble.n < 2:
        return 0.0
    d = pair_distances(ensemble)
    upper = np.triu_indices(ensemble.n, k=1)
    return float(np.sum(rho(d[upper], sigma[None, :])))


def surrogate_loss(table: PairDistanceTable, weights: Tensor) -> float:
    """Sum over ``i < j`` of ``w_ijl * d_ijl^2``; equals the consistency loss where the weights were computed."""
    upper = np.triu_indices(table.shape[0], k=1)
    return float(np.sum(weights[upper] * np.square(table[upper])))


@dataclass
class FusionState:
    sigma: NDArray[np.float64]
    weights: Tensor
    prev_weights: Tensor | None = None
    k: int = 0

    def advance(self, weights: Tensor) -> None:
        self.prev_weights, self.weights = self.weights, weights
        self.k += 1


def delta(state: FusionState) -> float:
    """Largest change of any ``i < j`` weight between the last two IRLS iterations."""
    if state.k < 1 or state.prev_weights is None:
        raise ValueError("delta needs at least one completed reweighting")
    n = state.weights.shape[0]
    if n < 2:
        return 0.0
    upper = np.triu_indices(n, k=1)
    return float(np.max(np.abs(state.weights[upper] - state.prev_weights[upper])))


def pair_weights_to_layer_coeffs(w: NDArray[np.float64], L: int) -> NDArray[np.float64]:
    """``c_l = w_{l-1} + w_l`` with ``w_{-1} = w_{L-1} = 0``.

    Because pair ``l`` covers layers ``l`` and ``l+1``, the pair-form penalty
    ``sum_l w_l ||pair diff||^2`` equals the layer-form ``sum_l c_l ||layer diff||^2``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != L - 1:
        raise DimensionMismatch(f"expected {L - 1} pair weights, got {w.shape[-1]}")
    pad = [(0, 0)] * (w.ndim - 1)
    return np.pad(w, [*pad, (1, 0)]) + np.pad(w, [*pad, (0, 1)])


def layer_coefficients(weights: Tensor, L: int) -> Tensor:
    """Layer coefficients for every dataset pair, shape ``(n, n, L)``; the diagonal is zero."""
    c = pair_weights_to_layer_coeffs(weights, L)
    n = weights.shape[0]
    c[np.arange(n), np.arange(n), :] = 0.0
    return c
