"""Distance-stratified membership analysis.

Non-member confidences are grouped by their Hamming distance to the training
set and each group is scored against the member confidences with a rank AUC.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import Dataset, distances_to_dataset, pack_bits
from .errors import DomainError, SchemaError

logger = logging.getLogger(__name__)

DEFAULT_DISTANCE_GRID = tuple(range(1, 31)) + (40, 50, 75, 100, 150, 200, 250, 300)
PROFILE_EXHAUSTIVE_LIMIT = 1024


def auc(pos: Sequence[float], neg: Sequence[float]) -> float:
    """Probability that a random positive outscores a random negative, ties counting one half.

    Computed from average ranks (the Mann-Whitney U statistic).
    """
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise DomainError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


@dataclass
class DistanceBucket:
    distance: int
    confidences: list[float]

    @property
    def count(self) -> int:
        return len(self.confidences)


@dataclass
class StratifiedAucReport:
    member_confidences: list[float]
    buckets: list[DistanceBucket]
    min_bucket: int = 20
    iterations: int = 1
    name: str = ""

    @property
    def rows(self) -> list[dict]:
        """One ``{distance, n, auc}`` row per bucket; ``auc`` is None below ``min_bucket``."""
        out = []
        for b in self.buckets:
            score = auc(self.member_confidences, b.confidences) if b.count >= self.min_bucket else None
            out.append({"distance": b.distance, "n": b.count, "auc": score})
        return out

    def auc_by_distance(self) -> dict[int, float]:
        return {r["distance"]: r["auc"] for r in self.rows if r["auc"] is not None}

    def overall_auc(self) -> float:
        neg = [c for b in self.buckets for c in b.confidences]
        return auc(self.member_confidences, neg)

    @classmethod
    def pooled(cls, reports: Sequence["StratifiedAucReport"]) -> "StratifiedAucReport":
        """Pool confidence values across repeated runs before scoring, one AUC per distance."""
        if not reports:
            raise DomainError("nothing to pool")
        members: list[float] = []
        by_dist: dict[int, list[float]] = {}
        for rep in reports:
            members += rep.member_confidences
            for b in rep.buckets:
                by_dist.setdefault(b.distance, []).extend(b.confidences)
        buckets = [DistanceBucket(d, by_dist[d]) for d in sorted(by_dist)]
        return cls(members, buckets, reports[0].min_bucket, sum(r.iterations for r in reports), reports[0].name)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["distance", "n", "auc"])
            for r in self.rows:
                w.writerow([r["distance"], r["n"], "" if r["auc"] is None else repr(r["auc"])])

    def to_dict(self, full: bool = False) -> dict:
        doc = {
            "name": self.name,
            "iterations": self.iterations,
            "min_bucket": self.min_bucket,
            "n_members": len(self.member_confidences),
            "buckets": self.rows,
        }
        if full:
            doc["member_confidences"] = self.member_confidences
            doc["bucket_confidences"] = {str(b.distance): b.confidences for b in self.buckets}
        return doc

    def to_json(self, path: str | Path, full: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(full), indent=2))


def distance_histogram(nonmembers: Dataset, D: Dataset) -> dict[int, int]:
    """Count of non-members at each distance from the training set."""
    if nonmembers.m != D.m:
        raise SchemaError(f"width mismatch: {nonmembers.m} vs {D.m}")
    dist = distances_to_dataset(nonmembers, D)
    values, counts = np.unique(dist, return_counts=True)
    hist = {int(v): int(c) for v, c in zip(values, counts)}
    if hist.get(0):
        warnings.warn(f"{hist[0]} non-member(s) coincide with training records (distance 0)", stacklevel=2)
    return hist


def _bucketize(distances: np.ndarray, confidences: np.ndarray) -> list[DistanceBucket]:
    order = np.argsort(distances, kind="stable")
    d_sorted = distances[order]
    c_sorted = confidences[order]
    values, starts = np.unique(d_sorted, return_index=True)
    ends = list(starts[1:]) + [len(d_sorted)]
    return [DistanceBucket(int(v), c_sorted[s:e].tolist()) for v, s, e in zip(values, starts, ends)]


def distance_stratified_auc(
    model,
    members: Dataset,
    nonmembers: Dataset,
    D: Dataset,
    min_bucket: int = 20,
    name: str = "",
) -> StratifiedAucReport:
    """Member confidences against each distance group of non-member confidences.

    Buckets smaller than ``min_bucket`` are kept with their counts but get no AUC.
    """
    if members.m != D.m or nonmembers.m != D.m:
        raise SchemaError("members, non-members and training set must share a width")
    dist = distances_to_dataset(nonmembers, D)
    if len(members) and distances_to_dataset(members, D).max() > 0:
        raise DomainError("members must be drawn from the training set")
    report = StratifiedAucReport(
        np.asarray(model.max_confidence(members.bits)).tolist(),
        _bucketize(dist, np.asarray(model.max_confidence(nonmembers.bits))),
        min_bucket,
        1,
        name,
    )
    if not any(b.count >= min_bucket for b in report.buckets):
        warnings.warn(f"no distance bucket reaches min_bucket={min_bucket}; report has no AUC values", stacklevel=2)
    return report


def _random_flips(rows: np.ndarray, d: int, rng: np.random.Generator) -> np.ndarray:
    """Flip a uniformly random ``d``-subset of positions in every row."""
    n, m = rows.shape
    out = rows.copy()
    if d == m:
        out ^= 1
        return out
    pick = rng.random((n, m)).argpartition(d, axis=1)[:, :d]
    out[np.arange(n)[:, None], pick] ^= 1
    return out


def generate_synthetic_neighbors(
    D: Dataset,
    member_sample: int,
    distances: Iterable[int],
    variants_per_distance: int,
    rng: np.random.Generator,
    max_attempts: int = 1000,
) -> dict[int, Dataset]:
    """Manufacture non-members by flipping bits of randomly chosen training members.

    For every chosen member and nominal flip count, ``variants_per_distance``
    vectors outside ``D`` are drawn (colliding draws are redrawn up to
    ``max_attempts`` times).  The result is keyed by each vector's recomputed
    distance to ``D``, which can be smaller than the nominal flip count.
    """
    distances = sorted({int(d) for d in distances})
    if not distances or distances[0] < 1 or distances[-1] > D.m:
        raise DomainError(f"distances must lie in [1, {D.m}]")
    if not 1 <= member_sample <= len(D):
        raise DomainError(f"member_sample must lie in [1, {len(D)}]")
    chosen = D.bits[np.sort(rng.choice(len(D), size=member_sample, replace=False))]
    seeds = np.repeat(chosen, variants_per_distance, axis=0)

    produced: list[np.ndarray] = []
    for d in distances:
        cand = _random_flips(seeds, d, rng)
        bad = D.contains_rows(pack_bits(cand))
        attempts = 1
        while bad.any() and attempts < max_attempts:
            idx = np.flatnonzero(bad)
            cand[idx] = _random_flips(seeds[idx], d, rng)
            bad[idx] = D.contains_rows(pack_bits(cand[idx]))
            attempts += 1
        if bad.any():
            owners = np.unique(np.flatnonzero(bad) // variants_per_distance)
            warnings.warn(
                f"distance {d}: {owners.size} member(s) exhausted {max_attempts} attempts; buckets underfilled",
                stacklevel=2,
            )
            cand = cand[~bad]
        produced.append(cand)

    allv = np.concatenate(produced) if produced else np.zeros((0, D.m), np.uint8)
    if len(allv) == 0:
        return {}
    actual = distances_to_dataset(pack_bits(allv), D)
    return {
        int(v): Dataset(allv[actual == v], name=f"{D.name}/synthetic-d{int(v)}")
        for v in np.unique(actual)
    }


def merge(datasets: Iterable[Dataset], name: str = "merged") -> Dataset:
    parts = [d.bits for d in datasets]
    if not parts:
        raise DomainError("nothing to merge")
    return Dataset(np.concatenate(parts), name=name)


def _flip_subsets(k: int, d: int, limit: int, rng: np.random.Generator) -> np.ndarray:
    """Index subsets (positions into the unknown set) of size ``d``: all, or ``limit`` uniform draws."""
    if comb(k, d) <= limit:
        return np.array(list(combinations(range(k), d)), dtype=np.int64).reshape(-1, d)
    return rng.random((limit, k)).argpartition(d - 1, axis=1)[:, :d] if d < k else np.tile(np.arange(k), (limit, 1))


def confidence_vs_distance_profile(
    model,
    targets: Dataset,
    unknown: Sequence[int],
    rng: np.random.Generator,
    samples_per_distance: int | None = None,
) -> list[dict]:
    """Share of same-portion vectors at each distance whose confidence beats the original.

    For each target and each ``d`` in ``1..m'``, completions differing from
    the target in exactly ``d`` unknown positions are compared with the
    target's own max confidence (strict ``>``).  Subsets are enumerated when
    there are at most ``samples_per_distance`` of them (default 1024) and
    sampled uniformly otherwise.  Counts are pooled over targets.
    """
    unknown = np.array(sorted({int(i) for i in unknown}), dtype=np.int64)
    k = unknown.size
    if k < 1:
        raise DomainError("need at least one unknown feature")
    if unknown[0] < 0 or unknown[-1] >= targets.m:
        raise DomainError(f"unknown indices must lie in [0, {targets.m})")
    limit = samples_per_distance or PROFILE_EXHAUSTIVE_LIMIT

    higher = np.zeros(k + 1, dtype=np.int64)
    total = np.zeros(k + 1, dtype=np.int64)
    base_conf = np.asarray(model.max_confidence(targets.bits))
    for t in range(len(targets)):
        x = targets.bits[t]
        for d in range(1, k + 1):
            subsets = _flip_subsets(k, d, limit, rng)
            cand = np.repeat(x[None, :], len(subsets), axis=0)
            rows = np.arange(len(subsets))[:, None]
            cand[rows, unknown[subsets]] ^= 1
            c = np.asarray(model.max_confidence(cand))
            higher[d] += int((c > base_conf[t]).sum())
            total[d] += len(subsets)
    return [
        {"distance": d, "fraction_higher": higher[d] / total[d], "n": int(total[d])}
        for d in range(1, k + 1)
    ]


def bootstrap_mean_ci(values, rng: np.random.Generator, n_boot: int = 2000, level: float = 0.95):
    """Percentile bootstrap interval for the mean."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("bootstrap of an empty sample")
    means = v[rng.integers(0, v.size, size=(n_boot, v.size))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)
