"""Fully connected softmax classifier written directly in numpy (float64).

The network is the target model: it is trained on the member set and then
queried for its per-class confidence vector.  Only the largest confidence is
used by the attacks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import BitVector, Dataset
from .errors import DomainError, FormatError, SchemaError, TrainingDivergedError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "tanh")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise DomainError("at least one hidden layer is required")
        if min((self.input_dim, self.output_dim) + self.hidden) < 1:
            raise DomainError("all layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch training settings.

    Training stops after ``max_epochs`` or at the end of the first epoch at or
    beyond ``min_epochs`` whose train accuracy reaches ``target_train_accuracy``.
    """

    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    target_train_accuracy: float = 0.99
    seed: int = 0
    min_epochs: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DomainError("batch_size and max_epochs must be positive")
        if not 0.0 < self.target_train_accuracy <= 1.0:
            raise DomainError("target_train_accuracy must lie in (0, 1]")
        if self.min_epochs < 0 or self.weight_decay < 0:
            raise DomainError("min_epochs and weight_decay must be nonnegative")


def _as_matrix(x, m: int) -> np.ndarray:
    if isinstance(x, BitVector):
        X = x.bits[None, :]
    elif isinstance(x, Dataset):
        X = x.bits
    else:
        X = np.atleast_2d(np.asarray(x))
    if X.shape[1] != m:
        raise SchemaError(f"input width {X.shape[1]} vs model input_dim {m}")
    return X.astype(np.float64, copy=False)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class MlpModel:
    """Trained (or hand-built) network: weights, biases and training metadata.

    ``weights[i]`` has shape ``(widths[i], widths[i+1])`` so a batch is
    propagated as ``h @ W + b``.
    """

    def __init__(self, architecture: MlpArchitecture, weights, biases, train_meta: dict | None = None):
        self.architecture = architecture
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.train_meta = dict(train_meta or {})
        widths = architecture.widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise SchemaError(f"expected {len(widths) - 1} layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise SchemaError(
                    f"layer {i}: weight {w.shape}/bias {b.shape}, "
                    f"expected {(widths[i], widths[i + 1])}/{(widths[i + 1],)}"
                )

    @classmethod
    def initialize(cls, arch: MlpArchitecture, rng: np.random.Generator) -> "MlpModel":
        """Uniform fan-in scaled init: ``U(-a, a)`` with ``a = sqrt(6/fan_in)`` (relu) or ``sqrt(3/fan_in)``."""
        gain = 6.0 if arch.activation == "relu" else 3.0
        ws, bs = [], []
        widths = arch.widths
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            # output layer gets the plain LeCun scale so initial logits stay small
            a = np.sqrt((gain if i < len(widths) - 2 else 3.0) / fan_in)
            ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(arch, ws, bs)

    @classmethod
    def zeros(cls, arch: MlpArchitecture) -> "MlpModel":
        w = arch.widths
        return cls(arch, [np.zeros((w[i], w[i + 1])) for i in range(len(w) - 1)],
                   [np.zeros(w[i + 1]) for i in range(len(w) - 1)])

    @property
    def n_classes(self) -> int:
        return self.architecture.output_dim

    def _act(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(z, 0.0) if self.architecture.activation == "relu" else np.tanh(z)

    def logits(self, x) -> np.ndarray:
        h = _as_matrix(x, self.architecture.input_dim)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = self._act(h)
        return h

    def predict_proba(self, x) -> np.ndarray:
        return _softmax(self.logits(x))

    def max_confidence(self, x) -> np.ndarray:
        """Largest softmax probability per input row."""
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        return 1.0 / np.exp(z).sum(axis=1)

    def predict(self, x) -> np.ndarray:
        return self.logits(x).argmax(axis=1)

    def accuracy(self, D: Dataset) -> float:
        if D.labels is None:
            raise DomainError("accuracy needs a labeled dataset")
        return float((self.predict(D) == D.labels).mean())

    def copy(self) -> "MlpModel":
        return MlpModel(self.architecture, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], dict(self.train_meta))

    # parameters flattened in (W0, b0, W1, b1, ...) order
    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean cross-entropy over the batch and its gradient for each parameter."""
        X = _as_matrix(X, self.architecture.input_dim)
        relu = self.architecture.activation == "relu"
        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if i == last else (np.maximum(z, 0.0) if relu else np.tanh(z))
            acts.append(h)
        z = h - h.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        n = X.shape[0]
        rows = np.arange(n)
        loss = float((logsum - z[rows, y]).mean())

        delta = np.exp(z - logsum[:, None])
        delta[rows, y] -= 1.0
        delta /= n
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(last, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
                if relu:
                    delta = delta * (pre[i - 1] > 0)
                else:
                    delta = delta * (1.0 - acts[i] ** 2)
        return loss, grads


def forward(model: MlpModel, x) -> np.ndarray:
    """Confidence vector for one vector, or one row per input for a batch."""
    p = model.predict_proba(x)
    return p[0] if isinstance(x, BitVector) else p


def max_confidence(model, x) -> float | np.ndarray:
    c = model.max_confidence(x)
    return float(c[0]) if isinstance(x, BitVector) else c


@dataclass
class _Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(
    train_set: Dataset,
    arch: MlpArchitecture,
    cfg: TrainConfig,
    test_set: Dataset | None = None,
) -> MlpModel:
    """Fit a fresh network to ``train_set`` by mini-batch cross-entropy minimisation."""
    if train_set.labels is None:
        raise DomainError("training needs a labeled dataset")
    if train_set.m != arch.input_dim:
        raise SchemaError(f"dataset width {train_set.m} vs input_dim {arch.input_dim}")
    if train_set.n_classes is not None and train_set.n_classes > arch.output_dim:
        raise SchemaError(f"{train_set.n_classes} classes but output_dim {arch.output_dim}")
    n = len(train_set)
    if cfg.batch_size > n:
        raise DomainError(f"batch_size {cfg.batch_size} exceeds training set size {n}")

    rng = np.random.default_rng(cfg.seed)
    model = MlpModel.initialize(arch, rng)
    X = train_set.bits.astype(np.float64)
    y = train_set.labels
    params = model.parameters()
    adam = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None

    losses: list[float] = []
    acc = 0.0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = model.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            if cfg.weight_decay:
                for k in range(0, len(grads), 2):
                    grads[k] = grads[k] + cfg.weight_decay * params[k]
            if adam is not None:
                adam.step(params, grads)
            else:
                for p, g in zip(params, grads):
                    p -= cfg.learning_rate * g
            total += loss * len(idx)
        losses.append(total / n)
        acc = model.accuracy(train_set)
        logger.debug("epoch %d loss %.6f train acc %.4f", epoch, losses[-1], acc)
        if epoch >= cfg.min_epochs and acc >= cfg.target_train_accuracy:
            break

    model.train_meta = {
        "epochs": epoch,
        "train_accuracy": acc,
        "test_accuracy": model.accuracy(test_set) if test_set is not None else None,
        "seed": cfg.seed,
        "loss_history": losses,
    }
    return model


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "architecture": asdict(model.architecture),
        # repr() of a float64 round-trips exactly through json
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "train_meta": model.train_meta,
    }


def model_from_dict(doc: dict) -> MlpModel:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    for key in ("format_version", "architecture", "weights", "biases"):
        if key not in doc:
            raise FormatError(f"missing field {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"format_version: expected {FORMAT_VERSION}, got {doc['format_version']!r}")
    try:
        arch = MlpArchitecture(**doc["architecture"])
    except (TypeError, DomainError) as exc:
        raise FormatError(f"architecture: {exc}") from None
    try:
        return MlpModel(arch, [np.array(w, dtype=np.float64) for w in doc["weights"]],
                        [np.array(b, dtype=np.float64) for b in doc["biases"]], doc.get("train_meta"))
    except (SchemaError, ValueError) as exc:
        raise FormatError(f"weights: {exc}") from None


def save(model: MlpModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)), encoding="utf-8")


def load(path: str | Path) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc.msg} at char {exc.pos})") from None
    return model_from_dict(doc)
