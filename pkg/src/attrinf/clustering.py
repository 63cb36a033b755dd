"""Lloyd's k-means with k-means++ seeding, used to label binary datasets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset
from .errors import DomainError, SchemaError


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 100
    seed: int = 0
    tol: float = 1e-6
    n_init: int = 10

    def __post_init__(self):
        if self.k < 2:
            raise DomainError(f"k must be at least 2, got {self.k}")
        if self.max_iters < 1:
            raise DomainError("max_iters must be positive")
        if self.tol < 0:
            raise DomainError("tol must be nonnegative")
        if self.n_init < 1:
            raise DomainError("n_init must be positive")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    # inertia after each assignment step, in order
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # |x|^2 - 2 x.c + |c|^2, clipped against round-off
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _exact_sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    out = np.empty((X.shape[0], C.shape[0]))
    step = max(1, (1 << 22) // max(1, C.size))
    for s in range(0, X.shape[0], step):
        out[s:s + step] = ((X[s:s + step, None, :] - C[None, :, :]) ** 2).sum(2)
    return out


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each step draws a few D^2-weighted candidates and keeps the best."""
    n = X.shape[0]
    trials = 2 + int(np.log(k))
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; any unused point will do
            centers[j] = X[rng.integers(n)]
            continue
        cand = np.searchsorted(np.cumsum(closest), rng.random(trials) * total, side="right")
        cand = np.minimum(cand, n - 1)
        pot = np.minimum(closest[None, :], _sq_dists(X, X[cand]).T)
        best = int(pot.sum(axis=1).argmin())
        centers[j] = X[cand[best]]
        closest = pot[best]
    return centers


def assign(centroids: np.ndarray, x) -> int | np.ndarray:
    """Nearest centroid by squared Euclidean distance, lowest index on ties.

    Accepts a single vector (BitVector or 1-d array) or a 2-d batch.
    """
    C = np.asarray(centroids, dtype=np.float64)
    bits = getattr(x, "bits", x)
    X = np.asarray(bits, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != C.shape[1]:
        raise SchemaError(f"vector width {X.shape[1]} vs centroid width {C.shape[1]}")
    out = _exact_sq_dists(X, C).argmin(axis=1)
    return int(out[0]) if single else out


def _lloyd(X: np.ndarray, cfg: KMeansConfig, rng: np.random.Generator) -> KMeansResult:
    n = X.shape[0]
    C = _kmeanspp(X, cfg.k, rng)
    history: list[float] = []
    prev = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        d = _sq_dists(X, C)
        a = d.argmin(axis=1)
        inertia = float(d[np.arange(n), a].sum())
        history.append(inertia)
        if prev - inertia < cfg.tol:
            break
        prev = inertia
        counts = np.bincount(a, minlength=cfg.k)
        newC = np.zeros_like(C)
        np.add.at(newC, a, X)
        nonempty = counts > 0
        newC[nonempty] /= counts[nonempty, None]
        point_d = d[np.arange(n), a].copy()
        for j in np.flatnonzero(~nonempty):
            far = int(point_d.argmax())
            newC[j] = X[far]
            point_d[far] = -1.0
        C = newC

    d = _exact_sq_dists(X, C)
    a = d.argmin(axis=1)
    return KMeansResult(C, a, float(d[np.arange(n), a].sum()), history, it)


def kmeans_label(D: Dataset, cfg: KMeansConfig) -> KMeansResult:
    """Cluster ``D`` and return centroids, assignments and the inertia trace.

    Each of ``cfg.n_init`` seeded restarts iterates assign/update until the
    inertia improvement drops below ``cfg.tol`` or ``cfg.max_iters`` is
    reached; the restart with the lowest final inertia wins (earliest on ties).
    A cluster left empty after an assignment step is re-seeded with the point
    farthest from its centroid.
    """
    if cfg.k > len(D):
        raise DomainError(f"k={cfg.k} exceeds record count {len(D)}")
    rng = np.random.default_rng(cfg.seed)
    X = D.bits.astype(np.float64)
    best = None
    for _ in range(cfg.n_init):
        res = _lloyd(X, cfg, rng)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def label_dataset(D: Dataset, cfg: KMeansConfig) -> tuple[Dataset, KMeansResult]:
    res = kmeans_label(D, cfg)
    return D.with_labels(res.assignments, cfg.k), res
