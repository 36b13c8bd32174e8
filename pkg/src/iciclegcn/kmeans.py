"""Lloyd's k-means with k-means++ seeding, deterministic for a given seed."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[int(rng.integers(n))]]
    closest = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, np.ndarray, float]:
    k = len(centers)
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        labels = d.argmin(axis=1)
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # reseed at the point farthest from its nearest center
                far = int(d.min(axis=1).argmax())
                new[j] = x[far]
                d[far] = 0.0
        shift = float(np.sqrt(np.max(np.sum((new - centers) ** 2, axis=1))))
        centers = new
        if shift < tol:
            break
    d = _sq_dists(x, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(x)), labels].sum())
    return centers, labels, inertia


def kmeans(
    x: np.ndarray, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100, tol: float = 1e-8
) -> tuple[np.ndarray, np.ndarray, float]:
    """Return ``(centers, labels, inertia)`` of the best of ``n_init`` seeded runs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"kmeans expects an N×D matrix, got {x.shape}")
    if len(x) < k or k < 1:
        raise ContractError(f"kmeans needs 1 <= K <= N, got K={k}, N={len(x)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        result = _lloyd(x, _plus_plus(x, k, rng), max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    return best
