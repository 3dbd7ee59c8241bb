from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from otsing.errors import ConfigError, DimensionError, FormatError, NumericError
from otsing.sdot.measure import SeededRng

log = logging.getLogger(__name__)

# ── Constants ────────────────────────────────────────────────────────────────

PROB_FLOOR = 1e-30
ACTIVATION = "relu"
SHUFFLE_TAG = 0x7A11


# ── Errors ───────────────────────────────────────────────────────────────────


class TrainConfigError(ConfigError):
    pass


class TrainingDataError(ConfigError):
    pass


class LossError(NumericError):
    pass


class TrainingAbortedError(NumericError):
    def __init__(self, epoch: int | None, ce: float, sup: float):
        self.epoch = epoch
        where = f" in epoch {epoch}" if epoch is not None else ""
        super().__init__(f"non-finite loss{where} (ce={ce!r}, sup={sup!r}); training aborted")


# ── Configuration ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    ood_weight: float = 1.0
    hidden: tuple[int, ...] = (64, 64)
    regenerate_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.epochs < 0:
            raise TrainConfigError(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise TrainConfigError(f"train.batch_size must be a positive even number, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise TrainConfigError(f"train.learning_rate must be > 0, got {self.learning_rate}")
        if not self.ood_weight >= 0:
            raise TrainConfigError(f"train.ood_weight must be >= 0, got {self.ood_weight}")
        if any(width < 1 for width in self.hidden):
            raise TrainConfigError(f"train.hidden widths must be positive, got {list(self.hidden)}")
        if self.regenerate_every < 0:
            raise TrainConfigError(f"train.regenerate_every must be >= 0, got {self.regenerate_every}")

    @property
    def half_batch(self) -> int:
        return self.batch_size // 2


# ── Model ────────────────────────────────────────────────────────────────────


@dataclass(eq=False)
class ToyClassifier:
    """Fully connected ReLU network with a softmax head.

    Layer l maps rows by ``x @ weights[l] + biases[l]``; every layer but the
    last is followed by ReLU.
    """

    sizes: tuple[int, ...]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise TrainConfigError(f"layer sizes must be >= 2 positive widths, got {list(self.sizes)}")
        if self.sizes[-1] < 2:
            raise TrainConfigError(f"need at least 2 classes, got {self.sizes[-1]}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise TrainConfigError("one weight matrix and bias vector per layer required")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise TrainConfigError(
                    f"layer {k} expects weights {(self.sizes[k], self.sizes[k + 1])}, "
                    f"got {w.shape} and bias {b.shape}"
                )

    @classmethod
    def zeros(cls, sizes) -> ToyClassifier:
        sizes = tuple(sizes)
        return cls(
            sizes,
            [np.zeros((sizes[k], sizes[k + 1])) for k in range(len(sizes) - 1)],
            [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)],
        )

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """Weights and biases interleaved by layer: [W0, b0, W1, b1, ...]."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> ToyClassifier:
        return ToyClassifier(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def stepped(self, grads: list[np.ndarray], lr: float) -> ToyClassifier:
        new = [p - lr * g for p, g in zip(self.parameters(), grads)]
        return ToyClassifier(self.sizes, new[0::2], new[1::2])


def init_classifier(input_dim: int, n_classes: int, hidden=(64, 64), seed: int = 0) -> ToyClassifier:
    """He-normal weights, zero biases."""
    sizes = (input_dim, *hidden, n_classes)
    gen = SeededRng(seed).generator()
    weights = [
        gen.standard_normal((sizes[k], sizes[k + 1])) * np.sqrt(2.0 / sizes[k])
        for k in range(len(sizes) - 1)
    ]
    biases = [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)]
    return ToyClassifier(sizes, weights, biases)


# ── Forward pass ─────────────────────────────────────────────────────────────


def _as_inputs(model: ToyClassifier, x) -> np.ndarray:
    xv = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if xv.ndim != 2 or xv.shape[1] != model.input_dim:
        raise DimensionError(model.input_dim, xv.shape[-1], "classifier input")
    if not np.all(np.isfinite(xv)):
        raise TrainingDataError("classifier input contains non-finite values")
    return xv


def _trace(model: ToyClassifier, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Layer inputs and pre-activations; the last pre-activation is the logits."""
    inputs, pre = [x], []
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = inputs[-1] @ w + b
        pre.append(z)
        if k < len(model.weights) - 1:
            inputs.append(np.maximum(z, 0.0))
    return inputs, pre


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    top = logits.max(axis=1)
    return top + np.log(np.exp(logits - top[:, None]).sum(axis=1))


def logits(model: ToyClassifier, x) -> np.ndarray:
    return _trace(model, _as_inputs(model, x))[1][-1]


def forward(model: ToyClassifier, x) -> np.ndarray:
    """Softmax probabilities for one input vector, or one row per input row."""
    single = np.ndim(x) == 1
    probs = softmax(logits(model, x))
    return probs[0] if single else probs


def predict(model: ToyClassifier, x) -> np.ndarray:
    return np.argmax(logits(model, x), axis=1)


# ── Losses ───────────────────────────────────────────────────────────────────


def suppression_loss(probs) -> float:
    """Cross-entropy from probs to the uniform distribution: -(1/K) sum log V_i.

    Entries are clamped at PROB_FLOOR; the minimum is log K, reached at V uniform.
    """
    v = np.asarray(probs, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise LossError(f"expected a probability vector with K >= 2 entries, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise LossError("probabilities must be finite and non-negative")
    clamped = np.maximum(v, PROB_FLOOR)
    if np.any(clamped <= 0):
        raise LossError("zero probability after clamping")
    return float(-np.mean(np.log(clamped)))


def _backward(model: ToyClassifier, inputs: list[np.ndarray], pre: list[np.ndarray], delta: np.ndarray):
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(model.weights))
    for k in reversed(range(len(model.weights))):
        grads[2 * k] = inputs[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)
    return grads


def loss_and_gradients(
    model: ToyClassifier,
    id_x,
    id_y,
    otis_x=None,
    ood_weight: float = 1.0,
) -> tuple[float, float, list[np.ndarray]]:
    """Mean CE on the ID rows plus ood_weight times mean suppression on the OTIS rows.

    The suppression term is evaluated from logits as logsumexp(z) - mean(z),
    which equals -(1/K) sum log softmax(z). Gradients follow ``parameters()``
    order. ``sup`` is NaN when no OTIS rows are given.
    """
    x = _as_inputs(model, id_x)
    y = np.asarray(id_y, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise TrainingDataError(f"expected {x.shape[0]} labels, got shape {y.shape}")
    if np.any((y < 0) | (y >= model.n_classes)):
        raise TrainingDataError(f"labels must lie in [0, {model.n_classes})")

    inputs, pre = _trace(model, x)
    z = pre[-1]
    rows = np.arange(x.shape[0])
    ce = float(np.mean(_logsumexp(z) - z[rows, y]))
    delta = softmax(z)
    delta[rows, y] -= 1.0
    grads = _backward(model, inputs, pre, delta / x.shape[0])

    sup = float("nan")
    if otis_x is not None:
        xo = _as_inputs(model, otis_x)
        inputs_o, pre_o = _trace(model, xo)
        zo = pre_o[-1]
        sup = float(np.mean(_logsumexp(zo) - zo.mean(axis=1)))
        if ood_weight != 0:
            delta_o = (softmax(zo) - 1.0 / model.n_classes) * (ood_weight / xo.shape[0])
            grads = [g + go for g, go in zip(grads, _backward(model, inputs_o, pre_o, delta_o))]
    return ce, sup, grads


def total_loss(model: ToyClassifier, id_x, id_y, otis_x=None, ood_weight: float = 1.0) -> float:
    ce, sup, _ = loss_and_gradients(model, id_x, id_y, otis_x, ood_weight)
    return ce if otis_x is None or ood_weight == 0 else ce + ood_weight * sup


# ── Training ─────────────────────────────────────────────────────────────────


def mixed_batch_step(
    model: ToyClassifier,
    id_x,
    id_y,
    otis_x,
    config: TrainConfig,
    *,
    epoch: int | None = None,
) -> tuple[ToyClassifier, float, float]:
    """One SGD step on a half-ID, half-OTIS batch. Returns (new model, ce, sup)."""
    if otis_x is not None and config.ood_weight != 0:
        if np.shape(otis_x)[0] != np.shape(id_x)[0]:
            raise TrainingDataError(
                f"ID and OTIS halves must be the same size, got {np.shape(id_x)[0]} and {np.shape(otis_x)[0]}"
            )
    else:
        otis_x = None
    ce, sup, grads = loss_and_gradients(model, id_x, id_y, otis_x, config.ood_weight)
    if not np.isfinite(ce) or (otis_x is not None and not np.isfinite(sup)):
        raise TrainingAbortedError(epoch, ce, sup)
    return model.stepped(grads, config.learning_rate), ce, sup


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    ce_loss: float
    sup_loss: float
    id_train_acc: float
    id_test_acc: float


HISTORY_HEADER = ["epoch", "ce_loss", "sup_loss", "id_train_acc", "id_test_acc"]


def accuracy(model: ToyClassifier, x, y) -> float:
    return float(np.mean(predict(model, x) == np.asarray(y)))


def train(
    model: ToyClassifier,
    id_x,
    id_y,
    otis_x,
    config: TrainConfig,
    *,
    test: tuple[np.ndarray, np.ndarray] | None = None,
    otis_source: Callable[[int], np.ndarray] | None = None,
) -> tuple[ToyClassifier, list[EpochRecord]]:
    """Shuffled 50/50 epochs; the OTIS pool is cycled when smaller than the ID set.

    When ``config.regenerate_every`` is positive, ``otis_source(epoch)``
    replaces the pool at the start of every k-th epoch after the first.
    """
    x = _as_inputs(model, id_x)
    y = np.asarray(id_y, dtype=np.int64)
    if x.shape[0] == 0:
        raise TrainingDataError("ID training set is empty")
    pool = None if otis_x is None else np.asarray(otis_x, dtype=np.float64)
    use_otis = config.ood_weight != 0 and pool is not None
    if use_otis and pool.shape[0] == 0:
        raise TrainingDataError("OTIS pool is empty")

    gen = SeededRng(config.seed).derive(SHUFFLE_TAG).generator()
    size = min(config.half_batch, x.shape[0])
    n_batches = x.shape[0] // size
    history: list[EpochRecord] = []

    for epoch in range(config.epochs):
        if use_otis and otis_source is not None and config.regenerate_every and epoch:
            if epoch % config.regenerate_every == 0:
                pool = np.asarray(otis_source(epoch), dtype=np.float64)
                log.info("epoch %d: regenerated %d OTIS", epoch, pool.shape[0])
        order = gen.permutation(x.shape[0])
        otis_order = gen.permutation(pool.shape[0]) if use_otis else None
        ce_sum = sup_sum = 0.0
        for b in range(n_batches):
            idx = order[b * size : (b + 1) * size]
            otis_batch = None
            if use_otis:
                otis_batch = pool[otis_order[np.arange(b * size, (b + 1) * size) % pool.shape[0]]]
            model, ce, sup = mixed_batch_step(model, x[idx], y[idx], otis_batch, config, epoch=epoch)
            ce_sum += ce
            sup_sum += sup if use_otis else 0.0
        record = EpochRecord(
            epoch=epoch + 1,
            ce_loss=ce_sum / n_batches,
            sup_loss=sup_sum / n_batches if use_otis else float("nan"),
            id_train_acc=accuracy(model, x, y),
            id_test_acc=accuracy(model, *test) if test is not None else float("nan"),
        )
        history.append(record)
        log.debug(
            "epoch %d  ce=%.4f  sup=%.4f  train_acc=%.3f",
            record.epoch, record.ce_loss, record.sup_loss, record.id_train_acc,
        )
    return model, history


# ── Serialization ────────────────────────────────────────────────────────────


def model_payload(model: ToyClassifier) -> dict:
    return {
        "sizes": list(model.sizes),
        "activation": ACTIVATION,
        "weights": [[float(v) for v in w.ravel()] for w in model.weights],
        "biases": [[float(v) for v in b] for b in model.biases],
    }


def model_from_payload(doc: object, path: str = "<model>") -> ToyClassifier:
    if not isinstance(doc, dict) or not {"sizes", "weights", "biases"} <= doc.keys():
        raise FormatError(path, "model JSON needs 'sizes', 'weights' and 'biases'")
    if doc.get("activation", ACTIVATION) != ACTIVATION:
        raise FormatError(path, f"unsupported activation '{doc['activation']}'")
    sizes = [int(s) for s in doc["sizes"]]
    layers = len(sizes) - 1
    if len(doc["weights"]) != layers or len(doc["biases"]) != layers:
        raise FormatError(path, f"expected {layers} weight and bias arrays")
    try:
        weights = [
            np.asarray(doc["weights"][k], dtype=np.float64).reshape(sizes[k], sizes[k + 1])
            for k in range(layers)
        ]
    except ValueError as e:
        raise FormatError(path, f"weight array has the wrong length: {e}") from None
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    try:
        return ToyClassifier(tuple(sizes), weights, biases)
    except TrainConfigError as e:
        raise FormatError(path, str(e)) from None
