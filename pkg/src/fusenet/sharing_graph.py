from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exc import DimensionMismatch

__all__ = ["SharingGraph", "influence", "build_graph", "build_graphs", "export_dot"]

Metric = Literal["weight", "inverse_distance"]


@dataclass(frozen=True)
class SharingGraph:
    """Undirected graph over datasets: ``(i, j)`` with ``i < j`` when each is among the other's top-k."""

    layer_pair_index: int
    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    influence: NDArray[np.float64]

    def components(self) -> list[list[int]]:
        index = {v: k for k, v in enumerate(self.nodes)}
        rows = [index[i] for i, _ in self.edges]
        cols = [index[j] for _, j in self.edges]
        size = len(self.nodes)
        adjacency = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))
        _, labels = connected_components(adjacency, directed=False)
        groups: dict[int, list[int]] = {}
        for v, label in zip(self.nodes, labels):
            groups.setdefault(int(label), []).append(v)
        return sorted(sorted(group) for group in groups.values())


def influence(
    weights: NDArray[np.float64] | None, distances: NDArray[np.float64], metric: Metric = "weight"
) -> NDArray[np.float64]:
    """Influence tensor: the IRLS weights themselves, or ``1 / distance`` between layer pairs."""
    if metric == "weight":
        if weights is None:
            raise DimensionMismatch("the weight metric needs IRLS weights")
        return weights
    if metric == "inverse_distance":
        with np.errstate(divide="ignore"):
            return np.where(distances > 0, 1.0 / distances, np.inf)
    raise DimensionMismatch(f"unknown influence metric {metric!r}")


def _top_k(scores: NDArray[np.float64], i: int, k: int) -> set[int]:
    # larger influence first, lower index wins ties
    others = sorted((j for j in range(len(scores)) if j != i), key=lambda j: (-scores[j], j))
    return set(others[:k])


def build_graph(slice_: NDArray[np.float64], k: int = 3, layer_pair_index: int = 1) -> SharingGraph:
    n = slice_.shape[0]
    if slice_.shape != (n, n) or n < 2:
        raise DimensionMismatch(f"influence slice must be square with n >= 2, got {slice_.shape}")
    if k < 1:
        raise DimensionMismatch(f"k must be >= 1, got {k}")
    scores = (slice_ + slice_.T) / 2.0
    top = [_top_k(scores[i], i, k) for i in range(n)]
    edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n) if j in top[i] and i in top[j])
    return SharingGraph(layer_pair_index, tuple(range(n)), edges, scores)


def build_graphs(influence_tensor: NDArray[np.float64], k: int = 3) -> list[SharingGraph]:
    """One graph per layer pair; graphs are numbered from 1 like the pairs they describe."""
    return [build_graph(influence_tensor[:, :, l], k, l + 1) for l in range(influence_tensor.shape[2])]


def _quote(label: str) -> str:
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(graph: SharingGraph, labels: Sequence[str] | None = None) -> str:
    labels = list(labels) if labels is not None else [str(v) for v in graph.nodes]
    if len(labels) != len(graph.nodes):
        raise DimensionMismatch(f"{len(labels)} labels for {len(graph.nodes)} nodes")
    lines = [f"graph sharing_l{graph.layer_pair_index} {{"]
    for v in graph.nodes:
        lines.append(f"  n{v} [label={_quote(labels[v])}];")
    for i, j in sorted(graph.edges):
        lines.append(f'  n{i} -- n{j} [weight="{graph.influence[i, j]:.6f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
