import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attrinf.core import BitVector, Dataset
from attrinf.errors import DomainError, FormatError, SchemaError, TrainingDivergedError
from attrinf.model import (
    MlpArchitecture,
    MlpModel,
    TrainConfig,
    forward,
    load,
    max_confidence,
    model_from_dict,
    model_to_dict,
    save,
    train,
)


def numeric_grads(model, X, y, h=1e-5):
    out = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up, _ = model.loss_and_grads(X, y)
            p[idx] = old - h
            down, _ = model.loss_and_grads(X, y)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def kink_free_instance(arch, g, n=5, margin=1e-3):
    """Random parameters and inputs with every ReLU pre-activation at least ``margin`` from zero.

    A central difference straddling a kink does not estimate a derivative, so such
    draws are rejected rather than compared.
    """
    while True:
        model = MlpModel.initialize(arch, g)
        for b in model.biases:
            b[:] = g.uniform(-0.1, 0.1, b.shape)
        X = g.normal(size=(n, arch.input_dim))
        if arch.activation != "relu":
            return model, X
        h, ok = X, True
        for w, b in zip(model.weights[:-1], model.biases[:-1]):
            z = h @ w + b
            ok &= bool((np.abs(z) > margin).all())
            h = np.maximum(z, 0.0)
        if ok:
            return model, X


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a), np.abs(n))
        err = np.where(denom > 0, np.abs(a - n) / np.where(denom > 0, denom, 1.0), 0.0)
        worst = max(worst, float(err.max()))
    return worst


def test_zero_network_is_uniform():
    model = MlpModel.zeros(MlpArchitecture(6, (4, 4), 10))
    x = BitVector.from_string("101100")
    assert np.allclose(forward(model, x), 0.1)
    assert max_confidence(model, x) == pytest.approx(0.1)


def test_hand_computed_network():
    # 2 -> 2 (relu) -> 2
    arch = MlpArchitecture(2, (2,), 2)
    W0 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b0 = np.array([0.0, 0.25])
    W1 = np.array([[1.0, 0.0], [0.0, 3.0]])
    b1 = np.array([0.5, -0.5])
    model = MlpModel(arch, [W0, W1], [b0, b1])
    h = np.maximum(np.array([1.0, 1.0]) @ W0 + b0, 0)   # [3, 0]
    z = h @ W1 + b1                                      # [3.5, -0.5]
    p = np.exp(z) / np.exp(z).sum()
    assert np.allclose(forward(model, BitVector.from_string("11")), p)
    assert max_confidence(model, BitVector.from_string("11")) == pytest.approx(1 / (1 + math.exp(-4.0)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_confidence_is_distribution(seed):
    g = np.random.default_rng(seed)
    model = MlpModel.initialize(MlpArchitecture(12, (8, 8), 5), g)
    X = g.integers(0, 2, (20, 12))
    P = model.predict_proba(X)
    assert np.allclose(P.sum(1), 1.0)
    assert (P >= 0).all()
    c = model.max_confidence(X)
    assert (c >= 1 / 5 - 1e-12).all() and (c <= 1).all()
    assert np.allclose(c, P.max(1))


def test_max_confidence_numerically_stable():
    arch = MlpArchitecture(2, (2,), 3)
    model = MlpModel(arch, [np.eye(2) * 1e4, np.array([[1.0, 0, 0], [0, 1.0, 0]])], [np.zeros(2), np.zeros(3)])
    c = model.max_confidence(np.array([[1, 0]]))
    assert np.isfinite(c).all() and c[0] == pytest.approx(1.0)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(activation, rng):
    model, X = kink_free_instance(MlpArchitecture(2, (8, 8), 3, activation), rng, n=6)
    y = rng.integers(0, 3, 6)
    _, g = model.loss_and_grads(X, y)
    assert max_rel_error(g, numeric_grads(model, X, y)) < 1e-4


def test_initial_loss_near_log_c(rng):
    C = 10
    model = MlpModel.initialize(MlpArchitecture(100, (64, 64), C), rng)
    X = rng.integers(0, 2, (500, 100))
    y = rng.integers(0, C, 500)
    loss, _ = model.loss_and_grads(X, y)
    assert abs(loss - math.log(C)) < 0.15 * math.log(C)


def _separable(rng, n=200, m=10):
    X = rng.integers(0, 2, (n, m))
    y = X[:, 0] * 2 + X[:, 3]
    return Dataset(X, y, n_classes=4)


@pytest.mark.parametrize("optimizer,lr", [("adam", 1e-2), ("sgd", 0.5)])
def test_training_fits_separable_data(optimizer, lr, rng):
    D = _separable(rng)
    model = train(D, MlpArchitecture(10, (16,), 4), TrainConfig(optimizer, lr, 32, 300, 1.0, seed=1))
    assert model.accuracy(D) == 1.0
    meta = model.train_meta
    assert meta["train_accuracy"] == 1.0
    assert len(meta["loss_history"]) == meta["epochs"]
    assert meta["loss_history"][-1] < meta["loss_history"][0]


def test_training_deterministic(rng):
    D = _separable(rng)
    cfg = TrainConfig("adam", 1e-2, 16, 5, seed=7)
    a = train(D, MlpArchitecture(10, (8,), 4), cfg)
    b = train(D, MlpArchitecture(10, (8,), 4), cfg)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)


def test_min_epochs_respected(rng):
    D = _separable(rng)
    model = train(D, MlpArchitecture(10, (16,), 4), TrainConfig("adam", 1e-2, 32, 50, 0.01, min_epochs=7))
    assert model.train_meta["epochs"] == 7


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(rng):
    D = _separable(rng)
    with pytest.raises(TrainingDivergedError) as info:
        train(D, MlpArchitecture(10, (16,), 4), TrainConfig("sgd", 1e300, 32, 5, 1.0))
    assert info.value.epoch >= 1


def test_train_validation(rng):
    D = _separable(rng)
    with pytest.raises(DomainError):
        train(D.without_labels(), MlpArchitecture(10, (4,), 4), TrainConfig())
    with pytest.raises(SchemaError):
        train(D, MlpArchitecture(9, (4,), 4), TrainConfig())
    with pytest.raises(DomainError):
        train(D, MlpArchitecture(10, (4,), 4), TrainConfig(batch_size=1000))
    with pytest.raises(DomainError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(DomainError):
        MlpArchitecture(3, (), 2)


def test_save_load_round_trip(tmp_path, rng):
    D = _separable(rng)
    model = train(D, MlpArchitecture(10, (8, 8), 4, "tanh"), TrainConfig("adam", 1e-2, 32, 3))
    save(model, tmp_path / "m.json")
    back = load(tmp_path / "m.json")
    X = rng.integers(0, 2, (100, 10))
    assert np.array_equal(model.predict_proba(X), back.predict_proba(X))
    assert back.architecture == model.architecture
    assert back.train_meta == model.train_meta


def test_load_truncated(tmp_path, rng):
    model = MlpModel.initialize(MlpArchitecture(4, (3,), 2), rng)
    p = tmp_path / "m.json"
    save(model, p)
    p.write_text(p.read_text()[:40])
    with pytest.raises(FormatError):
        load(p)


def test_load_version_mismatch(rng):
    doc = model_to_dict(MlpModel.initialize(MlpArchitecture(4, (3,), 2), rng))
    doc["format_version"] = 99
    with pytest.raises(FormatError, match="99") as info:
        model_from_dict(json.loads(json.dumps(doc)))
    assert "1" in str(info.value)


def test_load_missing_field(rng):
    doc = model_to_dict(MlpModel.initialize(MlpArchitecture(4, (3,), 2), rng))
    del doc["weights"]
    with pytest.raises(FormatError, match="weights"):
        model_from_dict(doc)


def test_single_hidden_unit_by_hand():
    arch = MlpArchitecture(3, (1,), 2, "tanh")
    model = MlpModel(arch, [np.array([[0.5], [-1.0], [2.0]]), np.array([[1.0, -1.0]])],
                     [np.array([0.1]), np.array([0.0, 0.3])])
    h = math.tanh(0.5 + 2.0 + 0.1)
    z0, z1 = h, -h + 0.3
    p0 = math.exp(z0) / (math.exp(z0) + math.exp(z1))
    out = forward(model, BitVector.from_string("101"))
    assert out[0] == pytest.approx(p0, abs=1e-12)
    assert out.sum() == pytest.approx(1.0, abs=1e-9)


def test_forward_width_mismatch(rng):
    model = MlpModel.initialize(MlpArchitecture(4, (3,), 2), rng)
    with pytest.raises(SchemaError):
        forward(model, BitVector.from_string("101"))
