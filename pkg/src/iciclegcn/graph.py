"""k-NN graphs over feature rows and their symmetric self-loop normalisation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass
class KnnGraph:
    adjacency: np.ndarray  # N×N, {0, 1}, symmetric, zero diagonal
    k: int
    similarity: np.ndarray | None = None

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as (i, j) with i < j, sorted."""
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(rows.tolist(), cols.tolist()))


@dataclass
class NormalizedAdjacency:
    matrix: np.ndarray
    degrees: np.ndarray  # row sums of A + I


def heat_kernel_similarity(z_i, z_j, t_heat: float = 1.0) -> float:
    if t_heat <= 0:
        raise ConfigError(f"t_heat must be positive, got {t_heat}")
    d = np.asarray(z_i, dtype=np.float64) - np.asarray(z_j, dtype=np.float64)
    return float(np.exp(-np.dot(d, d) / t_heat))


def pairwise_sq_dists(z: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Exact squared distances from explicit differences, so duplicate points tie exactly."""
    n = len(z)
    out = np.empty((n, n))
    for s in range(0, n, chunk):
        diff = z[s : s + chunk, None, :] - z[None, :, :]
        out[s : s + chunk] = np.einsum("ijd,ijd->ij", diff, diff)
    return out


def build_knn_graph(z: np.ndarray, k: int, t_heat: float = 1.0, keep_similarity: bool = False) -> KnnGraph:
    """Link each row to its k most heat-kernel-similar rows, then symmetrise by OR.

    Ranking uses squared distance directly: the heat kernel is monotone in
    it, and distances do not underflow to spurious ties. Ties go to the lower
    node index.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionError(f"features must be N×d, got {z.shape}")
    if t_heat <= 0:
        raise ConfigError(f"t_heat must be positive, got {t_heat}")
    n = len(z)
    if not 1 <= k < n:
        raise ConfigError(f"k must satisfy 1 <= k < N={n}, got {k}")
    d2 = pairwise_sq_dists(z)
    np.fill_diagonal(d2, np.inf)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    adj = np.zeros((n, n), dtype=np.int8)
    adj[np.repeat(np.arange(n), k), nbrs.ravel()] = 1
    adj = np.maximum(adj, adj.T)
    sim = None
    if keep_similarity:
        np.fill_diagonal(d2, 0.0)
        sim = np.exp(-d2 / t_heat)
    return KnnGraph(adjacency=adj, k=k, similarity=sim)


def normalize_adjacency(graph: KnnGraph | np.ndarray) -> NormalizedAdjacency:
    a = graph.adjacency if isinstance(graph, KnnGraph) else np.asarray(graph)
    a_tilde = a.astype(np.float64) + np.eye(a.shape[0])
    deg = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return NormalizedAdjacency(matrix=inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :], degrees=deg)


def write_edge_list(graph: KnnGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        for i, j in graph.edges():
            fh.write(f"{i} {j}\n")
