"""Seeded generator of clustered binary datasets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import Dataset
from .errors import DomainError


@dataclass(frozen=True)
class SynthSpec:
    """Prototype-plus-noise model: ``k`` random prototypes, bits flipped i.i.d. at ``flip_prob``."""

    m: int = 100
    k: int = 10
    n: int = 5000
    flip_prob: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise DomainError(f"m must be positive, got {self.m}")
        if self.k < 1 or self.k > self.n:
            raise DomainError(f"k must lie in [1, n={self.n}], got {self.k}")
        if not 0.0 <= self.flip_prob < 0.5:
            raise DomainError(f"flip_prob must lie in [0, 0.5), got {self.flip_prob}")


@dataclass
class SynthMetadata:
    prototypes: np.ndarray
    assignment: np.ndarray
    spec: SynthSpec

    def to_json(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "prototypes": ["".join(map(str, p)) for p in self.prototypes.tolist()],
            "assignment": self.assignment.tolist(),
        }


def generate(spec: SynthSpec, name: str = "synth") -> tuple[Dataset, SynthMetadata]:
    """Draw an unlabeled dataset and the ground-truth prototype assignment.

    The assignment is returned separately on purpose; class labels for the
    pipeline come from clustering the records.
    """
    rng = np.random.default_rng(spec.seed)
    prototypes = rng.integers(0, 2, size=(spec.k, spec.m), dtype=np.uint8)
    assignment = rng.integers(0, spec.k, size=spec.n)
    noise = (rng.random((spec.n, spec.m)) < spec.flip_prob).astype(np.uint8)
    bits = prototypes[assignment] ^ noise
    return Dataset(bits, name=name), SynthMetadata(prototypes, assignment, spec)
