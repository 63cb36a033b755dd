import numpy as np
import pytest

from attrinf.errors import DomainError
from attrinf.synthetic import SynthSpec, generate


def test_noiseless_gives_k_distinct_records():
    D, meta = generate(SynthSpec(m=64, k=7, n=500, flip_prob=0.0, seed=2))
    assert len(np.unique(D.bits, axis=0)) == len({*meta.assignment.tolist()})
    assert np.array_equal(D.bits, meta.prototypes[meta.assignment])


def test_noise_level_within_three_sigma():
    spec = SynthSpec(m=100, k=10, n=5000, flip_prob=0.05, seed=1)
    D, meta = generate(spec)
    d = (D.bits != meta.prototypes[meta.assignment]).sum(1)
    mean, var = spec.m * spec.flip_prob, spec.m * spec.flip_prob * (1 - spec.flip_prob)
    assert abs(d.mean() - mean) < 3 * np.sqrt(var / spec.n)


def test_no_prototype_collisions():
    for seed in range(100):
        _, meta = generate(SynthSpec(seed=seed, n=50))
        assert len(np.unique(meta.prototypes, axis=0)) == 10


def test_deterministic_and_unlabeled():
    a, _ = generate(SynthSpec(seed=5, n=100))
    b, _ = generate(SynthSpec(seed=5, n=100))
    c, _ = generate(SynthSpec(seed=6, n=100))
    assert np.array_equal(a.bits, b.bits)
    assert not np.array_equal(a.bits, c.bits)
    assert a.labels is None


def test_metadata_json():
    _, meta = generate(SynthSpec(m=8, k=2, n=5, seed=0))
    doc = meta.to_json()
    assert len(doc["prototypes"]) == 2 and len(doc["prototypes"][0]) == 8
    assert doc["spec"]["flip_prob"] == 0.05


@pytest.mark.parametrize("kw", [{"flip_prob": 0.7}, {"flip_prob": -0.1}, {"k": 0}, {"m": 0}, {"k": 20, "n": 10}])
def test_validation(kw):
    with pytest.raises(DomainError):
        SynthSpec(**kw)
