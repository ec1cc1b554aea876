"""Dense float64 helpers, seeded randomness and a finite-difference gradient oracle.

Matrices are plain ``numpy.ndarray`` objects of dtype float64; every public function returns a
fresh, finite array. All randomness goes through :class:`Rng` so that two runs with the same
seed draw the same numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exc import DimensionMismatch, NonFiniteError

__all__ = ["Matrix", "Vector", "Rng", "as_matrix", "matmul", "fd_gradient", "gaussian_fill"]

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]


def as_matrix(values: ArrayLike, *, name: str = "matrix") -> Matrix:
    m = np.array(values, dtype=np.float64, ndmin=2)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D", m.shape)
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return m


@dataclass
class Rng:
    """Single-owner random stream; children are derived from ``(seed, index)``, never shared."""

    seed: int
    path: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        self.generator = np.random.default_rng(np.random.SeedSequence([self.seed, *self.path]))

    def child(self, index: int) -> Rng:
        return Rng(self.seed, (*self.path, index))

    def normal(self, mean: float, std: float, shape: tuple[int, ...]) -> NDArray[np.float64]:
        return self.generator.normal(mean, std, size=shape)

    def permutation(self, n: int) -> NDArray[np.int64]:
        return self.generator.permutation(n)

    def integers(self, low: int, high: int, size: int | None = None) -> NDArray[np.int64]:
        return self.generator.integers(low, high, size=size)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return np.asarray(a @ b, dtype=np.float64)


def gaussian_fill(rng: Rng, m: Matrix, mean: float = 0.0, std: float = 1.0) -> Matrix:
    """A matrix shaped like ``m`` with i.i.d. normal(mean, std**2) entries."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.full_like(m, mean, dtype=np.float64)
    return rng.normal(mean, std, m.shape)


def fd_gradient(f: Callable[[Vector], float], theta: Vector, h: float = 1e-5) -> Vector:
    """Central differences with a per-coordinate step ``h * max(1, |theta_k|)``."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    shifted = theta.copy()
    for k in range(theta.size):
        step = h * max(1.0, abs(theta.flat[k]))
        shifted.flat[k] = theta.flat[k] + step
        upper = f(shifted)
        shifted.flat[k] = theta.flat[k] - step
        lower = f(shifted)
        shifted.flat[k] = theta.flat[k]
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteError("objective is not finite around coordinate", k, upper, lower)
        grad.flat[k] = (upper - lower) / (2.0 * step)
    return grad
