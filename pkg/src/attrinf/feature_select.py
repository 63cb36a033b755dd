"""Plug-in mutual information and greedy mRMR feature ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset
from .errors import DomainError


@dataclass
class FeatureRanking:
    # (feature index, criterion value when selected), best first
    entries: list[tuple[int, float]]
    method_meta: dict = field(default_factory=lambda: {"relevance": "MID", "log_base": 2})

    @property
    def indices(self) -> list[int]:
        return [i for i, _ in self.entries]

    def top(self, k: int) -> list[int]:
        return self.indices[:k]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "feature_index", "score"])
            for r, (i, s) in enumerate(self.entries, start=1):
                w.writerow([r, i, repr(float(s))])


def _xlogx_ratio(joint: np.ndarray, pa: np.ndarray, pb: np.ndarray) -> float:
    nz = joint > 0
    return float((joint[nz] * np.log2(joint[nz] / np.outer(pa, pb)[nz])).sum())


def mutual_information(a, b) -> float:
    """Empirical mutual information in bits between two discrete columns."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"columns must be 1-d and equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise DomainError("mutual information of empty columns")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= a.size
    return max(0.0, _xlogx_ratio(joint, joint.sum(1), joint.sum(0)))


def _relevance(X: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    """I(feature; label) for every binary column of X at once."""
    n = X.shape[0]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    n1c = X.T @ onehot                        # (m, C) count of f=1 per class
    nc = onehot.sum(0)                        # (C,)
    n0c = nc[None, :] - n1c
    p1 = X.sum(0) / n
    pc = nc / n
    out = np.zeros(X.shape[1])
    for joint, pf in ((n0c / n, 1.0 - p1), (n1c / n, p1)):
        denom = pf[:, None] * pc[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(joint > 0, joint * np.log2(joint / denom), 0.0)
        out += t.sum(1)
    return np.maximum(out, 0.0)


def _redundancy(X: np.ndarray, j: int) -> np.ndarray:
    """I(f; f_j) for every binary column f of X."""
    n = X.shape[0]
    xj = X[:, j]
    n11 = X.T @ xj
    p1 = X.sum(0) / n
    q1 = xj.sum() / n
    cells = (
        (n11 / n, p1, q1),
        ((X.sum(0) - n11) / n, p1, 1.0 - q1),
        ((xj.sum() - n11) / n, 1.0 - p1, q1),
        ((n - X.sum(0) - xj.sum() + n11) / n, 1.0 - p1, 1.0 - q1),
    )
    out = np.zeros(X.shape[1])
    for joint, pa, pb in cells:
        with np.errstate(divide="ignore", invalid="ignore"):
            out += np.where(joint > 0, joint * np.log2(joint / (pa * pb)), 0.0)
    return np.maximum(out, 0.0)


def mrmr_rank(D: Dataset, top_k: int) -> FeatureRanking:
    """Greedy mRMR (difference form): relevance minus mean redundancy with the picks so far.

    Ties go to the lower feature index.
    """
    if D.labels is None:
        raise DomainError("mRMR ranking needs a labeled dataset")
    if not 1 <= top_k <= D.m:
        raise DomainError(f"top_k must lie in [1, {D.m}], got {top_k}")
    y = D.labels
    if np.unique(y).size < 2:
        raise DomainError("label column is constant; relevance is zero for every feature")
    X = D.bits.astype(np.float64)
    n_classes = D.n_classes or int(y.max()) + 1
    rel = _relevance(X, y, n_classes)

    available = np.ones(D.m, dtype=bool)
    red_sum = np.zeros(D.m)
    entries: list[tuple[int, float]] = []
    for step in range(top_k):
        score = rel - (red_sum / step if step else 0.0)
        score = np.where(available, score, -np.inf)
        j = int(np.argmax(score))
        entries.append((j, float(score[j])))
        available[j] = False
        if step + 1 < top_k:
            red_sum += _redundancy(X, j)
    return FeatureRanking(entries)
