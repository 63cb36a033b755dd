"""Membership and attribute inference games played by a max-confidence adversary.

Every attack talks to the model only through ``model.max_confidence(X)``,
which maps a ``(n, m)`` 0/1 matrix to ``n`` confidences.  Class labels are
never consulted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import BitVector, Dataset, PartialVector, all_completions, sample_neighbor
from .errors import BudgetError, DomainError, SchemaError

MAX_UNKNOWN = 20
_ENUM_CHUNK = 4096

# (model, candidate_a, candidate_b, rng) -> index (0 or 1) of the vector announced as the member
Adversary = Callable[[object, np.ndarray, np.ndarray, np.random.Generator], int]


@dataclass
class GameOutcome:
    game: str
    trials: int
    successes: int
    advantage: float | None
    log: list[dict] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    def to_dict(self, with_log: bool = False) -> dict:
        doc = {k: v for k, v in asdict(self).items() if k != "log"}
        doc["success_rate"] = self.success_rate
        if with_log:
            doc["log"] = self.log
        return doc

    def to_json(self, path: str | Path, with_log: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(with_log), indent=2))


@dataclass
class AiaTarget:
    target_id: int
    n_unknown: int
    best_confidence: float
    tie_count: int
    avg_hamming_to_truth: float
    guess: str


@dataclass
class AiaResult:
    targets: list[AiaTarget]
    alpha: float | None = None

    @property
    def distances(self) -> np.ndarray:
        return np.array([t.avg_hamming_to_truth for t in self.targets])

    @property
    def mean_avg_hamming(self) -> float:
        return float(self.distances.mean()) if self.targets else float("nan")

    @property
    def baseline(self) -> float:
        """Expected distance of a uniformly random guess of the unknown bits."""
        return self.targets[0].n_unknown / 2.0 if self.targets else float("nan")

    def summary(self) -> dict:
        return {
            "n_targets": len(self.targets),
            "mean_avg_hamming": self.mean_avg_hamming,
            "random_baseline": self.baseline,
            "alpha": self.alpha,
        }

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target_id", "n_unknown", "best_confidence", "tie_count", "avg_hamming_to_truth"])
            for t in self.targets:
                w.writerow([t.target_id, t.n_unknown, repr(t.best_confidence), t.tie_count,
                            repr(t.avg_hamming_to_truth)])


def best_threshold(member_conf, nonmember_conf) -> float:
    """Threshold maximising TPR - FPR for the rule ``confidence >= threshold``."""
    pos = np.asarray(member_conf, dtype=np.float64)
    neg = np.asarray(nonmember_conf, dtype=np.float64)
    cands = np.unique(np.concatenate([pos, neg]))
    tpr = (pos[None, :] >= cands[:, None]).mean(axis=1)
    fpr = (neg[None, :] >= cands[:, None]).mean(axis=1)
    return float(cands[int(np.argmax(tpr - fpr))])


def run_mia_game(model, members: Dataset, nonmembers: Dataset, threshold: float) -> GameOutcome:
    """Threshold adversary: announce "member" iff max confidence >= threshold.

    Each record of either population is one challenge; the advantage is
    TPR - FPR at the threshold.
    """
    if len(members) == 0 or len(nonmembers) == 0:
        raise DomainError("both member and non-member sets must be non-empty")
    if members.m != nonmembers.m:
        raise SchemaError(f"width mismatch: {members.m} vs {nonmembers.m}")
    cm = np.asarray(model.max_confidence(members.bits))
    cn = np.asarray(model.max_confidence(nonmembers.bits))
    log = []
    # b = 0 marks a member challenge, matching the game's convention
    for b, confs in ((0, cm), (1, cn)):
        for i, c in enumerate(confs):
            guess = 0 if c >= threshold else 1
            log.append({"b": b, "index": i, "confidence": float(c), "guess": guess, "correct": guess == b})
    tpr = float((cm >= threshold).mean())
    fpr = float((cn >= threshold).mean())
    return GameOutcome(
        "mia",
        len(log),
        sum(e["correct"] for e in log),
        tpr - fpr,
        log,
        {"threshold": threshold, "tpr": tpr, "fpr": fpr},
    )


def max_confidence_adversary(model, a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> int:
    ca, cb = np.asarray(model.max_confidence(np.stack([a, b])))
    if ca == cb:
        return int(rng.integers(2))
    return 0 if ca > cb else 1


def run_strong_mia_game(
    model,
    D: Dataset,
    r: int,
    trials: int,
    rng: np.random.Generator,
    adversary: Adversary | None = None,
) -> GameOutcome:
    """Distinguish a training member from a non-member at distance exactly ``r`` from it.

    The pair is shown in random order; the default adversary announces the
    vector with the higher max confidence, flipping a fair coin on a tie.
    """
    if trials < 1:
        raise DomainError("trials must be positive")
    if not 1 <= r <= D.m:
        raise DomainError(f"r must lie in [1, {D.m}], got {r}")
    if len(D) == 0:
        raise DomainError("empty training set")
    log = []
    for t in range(trials):
        i = int(rng.integers(len(D)))
        x0 = D[i]
        x1 = sample_neighbor(x0, r, D, rng)
        member_first = bool(rng.integers(2))
        pair = (x0.bits, x1.bits) if member_first else (x1.bits, x0.bits)
        if adversary is None:
            pick = max_confidence_adversary(model, pair[0], pair[1], rng)
        else:
            pick = int(adversary(model, pair[0], pair[1], rng))
        correct = (pick == 0) == member_first
        log.append({"trial": t, "member_index": i, "neighbor": str(x1), "member_shown_first": member_first,
                    "pick": pick, "correct": correct})
    successes = sum(e["correct"] for e in log)
    acc = successes / trials
    return GameOutcome("strong-mia", trials, successes, 2 * acc - 1, log, {"r": r})


def _check_unknown(unknown: Sequence[int], m: int) -> tuple[int, ...]:
    idx = tuple(sorted({int(i) for i in unknown}))
    if not idx:
        raise DomainError("need at least one unknown feature")
    if len(idx) > MAX_UNKNOWN:
        raise BudgetError(f"{len(idx)} unknown features exceed the enumeration cap of {MAX_UNKNOWN}")
    if idx[0] < 0 or idx[-1] >= m:
        raise DomainError(f"unknown indices must lie in [0, {m})")
    return idx


def enumerate_completions(model, portion: PartialVector) -> tuple[np.ndarray, np.ndarray]:
    """Max confidence of every completion of ``portion``.

    Returns ``(completions, confidences)`` with completions as a dense 0/1
    matrix ordered by the assignment read as a binary number.
    """
    comps = all_completions(portion)
    confs = np.empty(len(comps))
    for s in range(0, len(comps), _ENUM_CHUNK):
        confs[s:s + _ENUM_CHUNK] = model.max_confidence(comps[s:s + _ENUM_CHUNK])
    return comps, confs


def _attack_target(model, x: BitVector, unknown: tuple[int, ...], target_id: int) -> tuple[AiaTarget, bool]:
    comps, confs = enumerate_completions(model, PartialVector(x, unknown))
    best = confs.max()
    tied = np.flatnonzero(confs == best)
    truth = x.bits[list(unknown)]
    dists = (comps[tied][:, list(unknown)] != truth).sum(axis=1)
    guess = comps[tied[0]]
    exact = bool(np.array_equal(guess, x.bits))
    rec = AiaTarget(target_id, len(unknown), float(best), int(tied.size), float(dists.mean()),
                    "".join(map(str, guess[list(unknown)])))
    return rec, exact


def _aia_targets(D: Dataset, targets: Dataset, unknown) -> tuple[int, ...]:
    if targets.m != D.m:
        raise SchemaError(f"width mismatch: {targets.m} vs {D.m}")
    if len(targets) == 0:
        raise DomainError("no targets")
    idx = _check_unknown(unknown, D.m)
    missing = ~D.contains_rows(targets.packed)
    if missing.any():
        raise DomainError(f"{int(missing.sum())} target(s) are not training members")
    return idx


def _reference_rate(model, population: Dataset | None, idx, alpha: float | None) -> float | None:
    if population is None:
        return None
    hits = 0
    for i in range(len(population)):
        rec, exact = _attack_target(model, population[i], idx, i)
        hits += exact if alpha is None else rec.avg_hamming_to_truth <= alpha
    return hits / len(population)


def run_exact_aia(
    model,
    D: Dataset,
    targets: Dataset,
    unknown: Sequence[int],
    population: Dataset | None = None,
) -> GameOutcome:
    """Enumerate all ``2**m'`` completions per target and announce the most confident.

    Ties go to the lowest assignment.  Success requires the announced vector to
    equal the target.  If a reference ``population`` of non-members is given,
    the advantage is the member success rate minus the population's; otherwise
    it is left as None.
    """
    idx = _aia_targets(D, targets, unknown)
    log = []
    for t in range(len(targets)):
        rec, exact = _attack_target(model, targets[t], idx, t)
        log.append({"target": t, "guess": rec.guess, "tie_count": rec.tie_count, "correct": exact})
    successes = sum(e["correct"] for e in log)
    ref = _reference_rate(model, population, idx, None)
    adv = None if ref is None else successes / len(targets) - ref
    return GameOutcome("exact-aia", len(targets), successes, adv, log, {"unknown": list(idx)})


def run_approx_aia(
    model,
    D: Dataset,
    targets: Dataset,
    unknown: Sequence[int],
    alpha: float,
    population: Dataset | None = None,
) -> tuple[GameOutcome, AiaResult]:
    """Same enumeration as :func:`run_exact_aia`, scored by distance to the truth.

    When several completions share the top confidence, the reported distance
    is the mean over all of them; the target counts as a success when that
    mean is at most ``alpha``.
    """
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    idx = _aia_targets(D, targets, unknown)
    recs = []
    log = []
    for t in range(len(targets)):
        rec, _ = _attack_target(model, targets[t], idx, t)
        recs.append(rec)
        log.append({"target": t, "guess": rec.guess, "tie_count": rec.tie_count,
                    "avg_hamming": rec.avg_hamming_to_truth, "correct": rec.avg_hamming_to_truth <= alpha})
    successes = sum(e["correct"] for e in log)
    ref = _reference_rate(model, population, idx, alpha)
    adv = None if ref is None else successes / len(targets) - ref
    outcome = GameOutcome("approx-aia", len(targets), successes, adv, log, {"unknown": list(idx), "alpha": alpha})
    return outcome, AiaResult(recs, alpha)
