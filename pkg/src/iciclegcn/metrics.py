"""Clustering accuracy, NMI, ARI and confusion matrices."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError


def _pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=np.int64).ravel()
    p = np.asarray(pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ContractError(f"label vectors differ in length: {t.size} vs {p.size}")
    if (t < 0).any() or (p < 0).any():
        raise ContractError("labels must be nonnegative")
    return t, p


def confusion_matrix(truth, pred, num_true: int | None = None, num_pred: int | None = None) -> np.ndarray:
    """counts[i, j] = number of samples with truth i and prediction j."""
    t, p = _pair(truth, pred)
    kt = num_true if num_true is not None else (int(t.max()) + 1 if t.size else 0)
    kp = num_pred if num_pred is not None else (int(p.max()) + 1 if p.size else 0)
    counts = np.zeros((kt, kp), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return counts


def clustering_accuracy(truth, pred) -> float:
    """Best one-to-one matching of predicted clusters to classes (Hungarian)."""
    t, p = _pair(truth, pred)
    if t.size == 0:
        return 0.0
    counts = confusion_matrix(t, p)
    k = max(counts.shape)
    square = np.zeros((k, k), dtype=np.int64)
    square[: counts.shape[0], : counts.shape[1]] = counts
    rows, cols = linear_sum_assignment(-square)
    return float(square[rows, cols].sum()) / t.size


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(truth, pred) -> float:
    """Mutual information normalised by the geometric mean of the two entropies."""
    t, p = _pair(truth, pred)
    n = t.size
    if n == 0:
        return 0.0
    counts = confusion_matrix(t, p)
    h_t = _entropy(counts.sum(axis=1), n)
    h_p = _entropy(counts.sum(axis=0), n)
    if h_t == 0.0 or h_p == 0.0:
        return 1.0 if h_t == h_p == 0.0 else 0.0
    joint = counts / n
    outer = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / (n * n)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return max(0.0, float(mi / np.sqrt(h_t * h_p)))


def _comb2(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(truth, pred) -> float:
    t, p = _pair(truth, pred)
    n = t.size
    counts = confusion_matrix(t, p)
    index = _comb2(counts).sum()
    a = _comb2(counts.sum(axis=1)).sum()
    b = _comb2(counts.sum(axis=0)).sum()
    total = _comb2(n)
    expected = a * b / total if total > 0 else 0.0
    max_index = (a + b) / 2.0
    if max_index == expected:
        # both partitions trivial (all singletons or one block): identical up to relabelling
        return 1.0
    return float((index - expected) / (max_index - expected))


def confusion_csv(counts: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\pred", *range(counts.shape[1])])
    for i, row in enumerate(counts):
        writer.writerow([i, *row.tolist()])
    return buf.getvalue()


def write_confusion_csv(counts: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(confusion_csv(counts))


def evaluate(truth, pred) -> dict[str, float]:
    return {"acc": clustering_accuracy(truth, pred), "nmi": nmi(truth, pred), "ari": ari(truth, pred)}
