"""Binary feature vectors, datasets and Hamming geometry.

Vectors are stored bit-packed into little-endian ``uint64`` words so that the
Hamming distance is an XOR followed by a popcount.  A :class:`Dataset` keeps
both the dense 0/1 matrix (what the model consumes) and the packed words (what
the distance kernels consume).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ExhaustionError, FormatError, SchemaError

WORD_BITS = 64
NEIGHBOR_MAX_ATTEMPTS = 1000
# caps the (queries x records x words) temporary in the batched kernels
_CHUNK_ELEMS = 1 << 22


def n_words(m: int) -> int:
    return (m + WORD_BITS - 1) // WORD_BITS


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a ``(..., m)`` array of 0/1 values into ``(..., ceil(m/64))`` uint64 words."""
    bits = np.asarray(bits, dtype=np.uint8)
    m = bits.shape[-1]
    w = n_words(m)
    as_bytes = np.packbits(bits, axis=-1, bitorder="little")
    pad = w * 8 - as_bytes.shape[-1]
    if pad:
        widths = [(0, 0)] * (as_bytes.ndim - 1) + [(0, pad)]
        as_bytes = np.pad(as_bytes, widths)
    return np.ascontiguousarray(as_bytes).view("<u8").astype(np.uint64, copy=False)


def unpack_bits(words: np.ndarray, m: int) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words.astype("<u8", copy=False)).view(np.uint8)
    return np.unpackbits(as_bytes, axis=-1, count=m, bitorder="little")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _as_01_matrix(bits) -> np.ndarray:
    a = np.asarray(bits)
    if a.dtype == np.bool_:
        return a.astype(np.uint8)
    if a.size and not np.isin(a, (0, 1)).all():
        raise DomainError("feature values must be 0 or 1")
    return a.astype(np.uint8)


class BitVector:
    """Immutable fixed-width binary vector."""

    __slots__ = ("_words", "_m")

    def __init__(self, words: np.ndarray, m: int):
        if m < 1:
            raise DomainError(f"width must be positive, got {m}")
        words = np.asarray(words, dtype=np.uint64)
        if words.shape != (n_words(m),):
            raise SchemaError(f"expected {n_words(m)} words for width {m}, got shape {words.shape}")
        self._words = _readonly(words.copy())
        self._m = m

    @classmethod
    def from_bits(cls, bits: Sequence[int] | np.ndarray) -> "BitVector":
        a = _as_01_matrix(bits)
        if a.ndim != 1:
            raise SchemaError("a BitVector is built from a 1-d bit sequence")
        return cls(pack_bits(a), a.shape[0])

    @classmethod
    def from_string(cls, s: str) -> "BitVector":
        if not s or set(s) - {"0", "1"}:
            raise DomainError(f"not a bit string: {s!r}")
        return cls.from_bits([int(c) for c in s])

    @property
    def m(self) -> int:
        return self._m

    @property
    def words(self) -> np.ndarray:
        return self._words

    @property
    def bits(self) -> np.ndarray:
        return _readonly(unpack_bits(self._words, self._m))

    def flip(self, indices: Iterable[int]) -> "BitVector":
        bits = self.bits.copy()
        idx = np.asarray(list(indices), dtype=np.int64)
        bits[idx] ^= 1
        return BitVector.from_bits(bits)

    def __len__(self) -> int:
        return self._m

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self._m == other._m and np.array_equal(self._words, other._words)

    def __hash__(self) -> int:
        return hash((self._m, self._words.tobytes()))

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    def __repr__(self) -> str:
        s = str(self)
        if len(s) > 32:
            s = s[:29] + "..."
        return f"BitVector({s!r}, m={self._m})"


class Dataset:
    """Ordered multiset of equal-width binary records with optional labels.

    Parameters
    ----------
    bits : array-like, shape (n, m)
        0/1 feature matrix.
    labels : array-like of int, optional
        Class index per record, each in ``[0, n_classes)``.
    n_classes : int, optional
        Class count C.  Inferred as ``max(labels) + 1`` when omitted.
    name : str
        Free-form dataset name carried into reports.
    """

    def __init__(self, bits, labels=None, n_classes: int | None = None, name: str = "dataset"):
        a = _as_01_matrix(bits)
        if a.ndim != 2:
            raise SchemaError(f"dataset matrix must be 2-d, got shape {a.shape}")
        if a.shape[1] < 1:
            raise SchemaError("dataset width must be positive")
        self._bits = _readonly(np.ascontiguousarray(a))
        self._packed = _readonly(pack_bits(self._bits))
        self.name = name
        self._keys: frozenset[bytes] | None = None

        if labels is None:
            self._labels = None
            self.n_classes = n_classes
        else:
            lab = np.asarray(labels, dtype=np.int64)
            if lab.shape != (a.shape[0],):
                raise SchemaError(f"{lab.shape[0] if lab.ndim else 0} labels for {a.shape[0]} records")
            if n_classes is None:
                n_classes = int(lab.max()) + 1 if lab.size else 0
            if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
                raise DomainError(f"labels must lie in [0, {n_classes})")
            self._labels = _readonly(lab.copy())
            self.n_classes = n_classes

    @classmethod
    def from_vectors(cls, vectors: Sequence[BitVector], labels=None, n_classes=None, name="dataset"):
        if not vectors:
            raise DomainError("cannot infer width from an empty vector list")
        widths = {v.m for v in vectors}
        if len(widths) != 1:
            raise SchemaError(f"mixed widths {sorted(widths)}")
        return cls(np.stack([v.bits for v in vectors]), labels, n_classes, name)

    @classmethod
    def empty(cls, m: int, name: str = "dataset") -> "Dataset":
        return cls(np.zeros((0, m), dtype=np.uint8), name=name)

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @property
    def labels(self) -> np.ndarray | None:
        return self._labels

    @property
    def m(self) -> int:
        return self._bits.shape[1]

    def __len__(self) -> int:
        return self._bits.shape[0]

    def __getitem__(self, i: int) -> BitVector:
        return BitVector(self._packed[i], self.m)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __contains__(self, x: BitVector) -> bool:
        if x.m != self.m:
            raise SchemaError(f"width {x.m} vs dataset width {self.m}")
        if self._keys is None:
            self._keys = frozenset(row.tobytes() for row in self._packed)
        return x.words.tobytes() in self._keys

    def contains_rows(self, packed: np.ndarray) -> np.ndarray:
        """Vectorised membership test for packed rows."""
        if self._keys is None:
            self._keys = frozenset(row.tobytes() for row in self._packed)
        return np.fromiter((row.tobytes() in self._keys for row in packed), bool, len(packed))

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self._labels is None else self._labels[idx]
        return Dataset(self._bits[idx], labels, self.n_classes, name or self.name)

    def with_labels(self, labels, n_classes: int | None = None) -> "Dataset":
        return Dataset(self._bits, labels, n_classes, self.name)

    def without_labels(self) -> "Dataset":
        return Dataset(self._bits, name=self.name)

    def __repr__(self) -> str:
        lab = "unlabeled" if self._labels is None else f"C={self.n_classes}"
        return f"Dataset({self.name!r}, n={len(self)}, m={self.m}, {lab})"


@dataclass(frozen=True)
class PartialVector:
    """A portion of a vector: ``base`` with the bits at ``unknown`` hidden."""

    base: BitVector
    unknown: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.unknown))
        if not idx:
            raise DomainError("a portion needs at least one unknown feature")
        if len(set(idx)) != len(idx):
            raise DomainError("unknown feature indices must be distinct")
        if idx[0] < 0 or idx[-1] >= self.base.m:
            raise DomainError(f"unknown indices must lie in [0, {self.base.m})")
        object.__setattr__(self, "unknown", idx)

    @property
    def n_unknown(self) -> int:
        return len(self.unknown)

    def __str__(self) -> str:
        chars = list(str(self.base))
        for i in self.unknown:
            chars[i] = "*"
        return "".join(chars)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.2
    cap: int | None = 10_000
    member_sample: int = 1000
    nonmember_sample: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DomainError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.cap is not None and self.cap < 2:
            raise DomainError("cap must be at least 2")
        if self.member_sample < 1 or self.nonmember_sample < 1:
            raise DomainError("member and non-member sample sizes must be positive")


class Split(NamedTuple):
    train: Dataset
    test: Dataset
    members: Dataset
    nonmembers: Dataset


def _check_width(a: int, b: int) -> None:
    if a != b:
        raise SchemaError(f"width mismatch: {a} vs {b}")


def hamming(a: BitVector, b: BitVector) -> int:
    _check_width(a.m, b.m)
    return int(np.bitwise_count(a.words ^ b.words).sum())


def pairwise_hamming(a_packed: np.ndarray, b_packed: np.ndarray) -> np.ndarray:
    """All Hamming distances between two packed row sets, shape ``(len(a), len(b))``."""
    a_packed = np.atleast_2d(a_packed)
    b_packed = np.atleast_2d(b_packed)
    if a_packed.shape[1] != b_packed.shape[1]:
        raise SchemaError(f"word count mismatch: {a_packed.shape[1]} vs {b_packed.shape[1]}")
    out = np.empty((a_packed.shape[0], b_packed.shape[0]), dtype=np.int32)
    step = max(1, _CHUNK_ELEMS // max(1, b_packed.size))
    for s in range(0, a_packed.shape[0], step):
        x = a_packed[s:s + step, None, :] ^ b_packed[None, :, :]
        out[s:s + step] = np.bitwise_count(x).sum(axis=2, dtype=np.int32)
    return out


def distances_to_dataset(queries: np.ndarray | Dataset, D: Dataset) -> np.ndarray:
    """Minimum Hamming distance from each query row to ``D``."""
    if len(D) == 0:
        raise DomainError("distance to an empty dataset is undefined")
    if isinstance(queries, Dataset):
        _check_width(queries.m, D.m)
        queries = queries.packed
    queries = np.atleast_2d(queries)
    if queries.shape[0] == 0:
        return np.zeros(0, dtype=np.int32)
    out = np.empty(queries.shape[0], dtype=np.int32)
    step = max(1, _CHUNK_ELEMS // max(1, D.packed.size))
    for s in range(0, queries.shape[0], step):
        out[s:s + step] = pairwise_hamming(queries[s:s + step], D.packed).min(axis=1)
    return out


def distance_to_dataset(x: BitVector, D: Dataset) -> int:
    _check_width(x.m, D.m)
    return int(distances_to_dataset(x.words[None, :], D)[0])


def sample_neighbor(
    x: BitVector,
    r: int,
    exclude: Dataset | None,
    rng: np.random.Generator,
    max_attempts: int = NEIGHBOR_MAX_ATTEMPTS,
) -> BitVector:
    """Draw uniformly from the vectors at distance exactly ``r`` from ``x`` that are not in ``exclude``.

    A uniformly random ``r``-subset of positions is flipped; draws landing in
    ``exclude`` are rejected and redrawn, up to ``max_attempts`` times.
    """
    if not 1 <= r <= x.m:
        raise DomainError(f"r must lie in [1, {x.m}], got {r}")
    if exclude is not None:
        _check_width(x.m, exclude.m)
    bits = x.bits
    for _ in range(max_attempts):
        flip = rng.choice(x.m, size=r, replace=False)
        cand = bits.copy()
        cand[flip] ^= 1
        v = BitVector.from_bits(cand)
        if exclude is None or v not in exclude:
            return v
    raise ExhaustionError(f"no {r}-neighbor outside the excluded set after {max_attempts} attempts")


def split_and_sample(D: Dataset, spec: SplitSpec, rng: np.random.Generator | None = None) -> Split:
    """Cap, partition into train/test, then draw member and non-member samples.

    Positions are sampled, not values, so duplicate records keep their
    multiplicity.  With ``rng=None`` a generator seeded from ``spec.seed`` is used.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = len(D) if spec.cap is None else min(len(D), spec.cap)
    pool = rng.permutation(len(D))[:n]
    n_train = int(round(spec.train_fraction * n))
    if n_train < spec.member_sample or n - n_train < spec.nonmember_sample:
        raise DomainError(
            f"{len(D)} records give a {n_train}/{n - n_train} split, too small for "
            f"{spec.member_sample} members and {spec.nonmember_sample} non-members"
        )
    train_idx = np.sort(pool[:n_train])
    test_idx = np.sort(pool[n_train:])
    mem = np.sort(rng.choice(train_idx, size=spec.member_sample, replace=False))
    non = np.sort(rng.choice(test_idx, size=spec.nonmember_sample, replace=False))
    return Split(
        D.subset(train_idx, f"{D.name}/train"),
        D.subset(test_idx, f"{D.name}/test"),
        D.subset(mem, f"{D.name}/members"),
        D.subset(non, f"{D.name}/nonmembers"),
    )


def complete(p: PartialVector, assignment: Sequence[int] | str) -> BitVector:
    """Fill the unknown positions of ``p`` with ``assignment`` (in index order)."""
    if isinstance(assignment, str):
        assignment = [int(c) for c in assignment]
    vals = _as_01_matrix(assignment)
    if vals.shape != (p.n_unknown,):
        raise DomainError(f"assignment has {vals.size} bits, portion has {p.n_unknown} unknowns")
    bits = p.base.bits.copy()
    bits[list(p.unknown)] = vals
    return BitVector.from_bits(bits)


def all_completions(p: PartialVector) -> np.ndarray:
    """Dense ``(2**m', m)`` matrix of every completion of ``p``.

    Row ``j`` sets unknown feature ``p.unknown[i]`` to bit ``m'-1-i`` of ``j``,
    so rows are ordered by the assignment read as a binary number.
    """
    k = p.n_unknown
    j = np.arange(1 << k, dtype=np.int64)
    assign = ((j[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    out = np.repeat(p.base.bits[None, :], 1 << k, axis=0)
    out[:, list(p.unknown)] = assign
    return out


def read_csv(path: str | Path, labeled: bool = False, name: str | None = None) -> Dataset:
    """Load a headerless 0/1 CSV; with ``labeled`` the last column is the class index."""
    path = Path(path)
    rows: list[list[int]] = []
    labels: list[int] = []
    width = None
    with path.open(newline="", encoding="ascii") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [int(v) for v in row]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-integer value ({exc})") from None
            if labeled:
                if len(vals) < 2:
                    raise FormatError(f"{path}:{lineno}: need features plus a label column")
                labels.append(vals.pop())
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise FormatError(f"{path}:{lineno}: {len(vals)} features, expected {width}")
            if any(v not in (0, 1) for v in vals):
                raise FormatError(f"{path}:{lineno}: feature values must be 0 or 1")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no records")
    return Dataset(np.array(rows, dtype=np.uint8), labels if labeled else None, name=name or path.stem)


def write_csv(D: Dataset, path: str | Path, with_labels: bool | None = None) -> None:
    """Write ``D`` in the headerless CSV format; labels are appended when present."""
    if with_labels is None:
        with_labels = D.labels is not None
    if with_labels and D.labels is None:
        raise SchemaError("dataset has no labels to write")
    path = Path(path)
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i in range(len(D)):
            row = D.bits[i].tolist()
            if with_labels:
                row.append(int(D.labels[i]))
            w.writerow(row)
