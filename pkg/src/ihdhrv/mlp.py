"""One-hidden-layer sigmoid network trained by full-batch backpropagation.

Output node 0 scores IHD and node 1 scores Normal; targets are one-hot
``(1, 0)`` for IHD and ``(0, 1)`` for Normal. The loss is the plain sum of
squared errors over all samples and both outputs.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .dataset import Standardization
from .feature_ids import validate_subset
from .rr_io import Label, rng_from_seed

MODEL_KEYS = ("layer_sizes", "weights", "biases", "feature_subset", "standardization",
              "train_config", "outcome")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        super().__init__(f"non-finite SSE ({value}) at epoch {epoch}")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MLPModel:
    layer_sizes: tuple
    weights: tuple           # (W1 of shape (hidden, in), W2 of shape (2, hidden))
    biases: tuple            # (b1 of shape (hidden,), b2 of shape (2,))
    feature_subset: tuple
    standardization: Standardization | None = None

    def __post_init__(self):
        n_in, n_hid, n_out = self.layer_sizes
        if n_out != 2 or n_in < 1 or n_hid < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        if len(self.feature_subset) != n_in:
            raise ValueError("feature_subset length must equal n_in")
        expected_w = [(n_hid, n_in), (2, n_hid)]
        expected_b = [(n_hid,), (2,)]
        if [w.shape for w in self.weights] != expected_w or [b.shape for b in self.biases] != expected_b:
            raise ValueError("parameter shapes inconsistent with layer sizes")
        for p in self.weights + self.biases:
            if not np.all(np.isfinite(p)):
                raise ValueError("model parameters must be finite")
        if self.standardization is not None and tuple(self.standardization.features) != tuple(self.feature_subset):
            raise ValueError("standardization must cover exactly the model inputs")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_hidden(self) -> int:
        return self.layer_sizes[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in (self.weights[0], self.biases[0],
                                                   self.weights[1], self.biases[1])])

    def with_flat(self, theta: np.ndarray) -> "MLPModel":
        n_in, n_hid, _ = self.layer_sizes
        cuts = np.cumsum([n_hid * n_in, n_hid, 2 * n_hid])
        w1, b1, w2, b2 = np.split(theta, cuts)
        return MLPModel(self.layer_sizes, (w1.reshape(n_hid, n_in), w2.reshape(2, n_hid)),
                        (b1.copy(), b2.copy()), self.feature_subset, self.standardization)

    def with_standardization(self, st: Standardization | None) -> "MLPModel":
        return MLPModel(self.layer_sizes, self.weights, self.biases, self.feature_subset, st)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    max_epochs: int = 1000
    sse_threshold: float = 0.05
    init_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not self.sse_threshold > 0:
            raise ValueError("sse_threshold must be positive")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


@dataclass(frozen=True, eq=False)
class TrainOutcome:
    model: MLPModel
    epochs_run: int
    final_sse: float
    converged: bool
    sse_history: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"epochs_run": self.epochs_run, "final_sse": self.final_sse,
                "converged": self.converged}


def init_model(n_in: int, n_hidden: int, feature_subset=None, seed: int = 0,
               init_scale: float = 0.5) -> MLPModel:
    """Parameters drawn i.i.d. uniform on ``[-init_scale, init_scale]``."""
    if n_in < 1 or n_hidden < 1:
        raise ValueError("n_in and n_hidden must be >= 1")
    if init_scale < 0:
        raise ValueError("init_scale must be >= 0")
    if feature_subset is None:
        feature_subset = tuple(f"x{i}" for i in range(n_in))
    else:
        feature_subset = validate_subset(feature_subset)
    rng = rng_from_seed(seed)
    # draw order: W1, b1, W2, b2
    w1 = rng.uniform(-init_scale, init_scale, (n_hidden, n_in))
    b1 = rng.uniform(-init_scale, init_scale, n_hidden)
    w2 = rng.uniform(-init_scale, init_scale, (2, n_hidden))
    b2 = rng.uniform(-init_scale, init_scale, 2)
    if init_scale == 0:
        w1, b1, w2, b2 = (np.zeros_like(a) for a in (w1, b1, w2, b2))
    return MLPModel((n_in, n_hidden, 2), (w1, w2), (b1, b2), tuple(feature_subset))


def _as_batch(model: MLPModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_in:
        raise ValueError(f"expected inputs of length {model.n_in}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs must be finite")
    return X


def _layers(model: MLPModel, X: np.ndarray):
    h = expit(X @ model.weights[0].T + model.biases[0])
    o = expit(h @ model.weights[1].T + model.biases[1])
    return h, o


def forward_batch(model: MLPModel, X) -> np.ndarray:
    """Outputs of shape ``(n, 2)``: columns are (IHD, Normal)."""
    return _layers(model, _as_batch(model, X))[1]


def forward(model: MLPModel, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single input vector")
    o = forward_batch(model, x)[0]
    return float(o[0]), float(o[1])


def targets(y) -> np.ndarray:
    """One-hot targets from labels (``Label`` members or 1=IHD / 0=Normal)."""
    y = np.array([1 if (v is Label.IHD or v == 1) else 0 for v in y], dtype=np.float64)
    return np.column_stack([y, 1.0 - y])


def sse(model: MLPModel, X, y) -> float:
    X = _as_batch(model, X)
    if X.shape[0] == 0:
        raise ValueError("sse of empty data")
    T = targets(y)
    if T.shape[0] != X.shape[0]:
        raise ValueError("one label per input row required")
    _, o = _layers(model, X)
    return float(np.sum((o - T) ** 2))


def _grad_flat(model: MLPModel, X: np.ndarray, T: np.ndarray) -> tuple[float, np.ndarray]:
    h, o = _layers(model, X)
    err = o - T
    d2 = 2.0 * err * o * (1.0 - o)                      # (n, 2)
    d1 = (d2 @ model.weights[1]) * h * (1.0 - h)        # (n, hidden)
    g = np.concatenate([(d1.T @ X).ravel(), d1.sum(axis=0),
                        (d2.T @ h).ravel(), d2.sum(axis=0)])
    return float(np.sum(err * err)), g


def gradient(model: MLPModel, X, y):
    """Exact gradient of :func:`sse`; returns ``(weight_grads, bias_grads)``."""
    X = _as_batch(model, X)
    if X.shape[0] == 0:
        raise ValueError("gradient of empty data")
    _, g = _grad_flat(model, X, targets(y))
    shaped = model.with_flat(g)
    return shaped.weights, shaped.biases


def train(init: MLPModel, X, y, cfg: TrainConfig = TrainConfig()) -> TrainOutcome:
    """Full-batch gradient descent with classical momentum.

    The SSE is checked before the first update and after every epoch; training
    stops once it drops below ``cfg.sse_threshold`` or after ``cfg.max_epochs``.
    """
    X = _as_batch(init, X)
    if X.shape[0] == 0:
        raise ValueError("cannot train on empty data")
    T = targets(y)
    theta = init.flat()
    velocity = np.zeros_like(theta)
    model = init

    err, g = _grad_flat(model, X, T)
    history = [err]
    epoch = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while err >= cfg.sse_threshold and epoch < cfg.max_epochs:
            epoch += 1
            velocity = cfg.momentum * velocity - cfg.learning_rate * g
            theta = theta + velocity
            if not np.all(np.isfinite(theta)):
                raise TrainingDiverged(epoch, float("nan"))
            model = init.with_flat(theta)
            err, g = _grad_flat(model, X, T)
            if not math.isfinite(err) or not np.all(np.isfinite(g)):
                raise TrainingDiverged(epoch, err)
            history.append(err)
    return TrainOutcome(model, epoch, err, err < cfg.sse_threshold, history)


def predict_batch(model: MLPModel, X) -> tuple[np.ndarray, np.ndarray]:
    """``(is_ihd, score)`` arrays; ties go to Normal."""
    o = forward_batch(model, X)
    return o[:, 0] > o[:, 1], o[:, 0]


def predict(model: MLPModel, x) -> tuple[Label, float]:
    o_ihd, o_normal = forward(model, x)
    return (Label.IHD if o_ihd > o_normal else Label.NORMAL), o_ihd


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(model: MLPModel, train_config: TrainConfig | None = None,
               outcome: TrainOutcome | None = None) -> bytes:
    """JSON document; floats are written with shortest round-trip repr."""
    doc = {
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "feature_subset": list(model.feature_subset),
        "standardization": None if model.standardization is None else model.standardization.to_dict(),
        "train_config": None if train_config is None else asdict(train_config),
        "outcome": None if outcome is None else outcome.summary(),
    }
    return (json.dumps(doc, indent=1, allow_nan=False) + "\n").encode("utf-8")


def load_model(data) -> MLPModel:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"model file is not valid JSON: {e}") from None
    if not isinstance(doc, dict) or set(doc) != set(MODEL_KEYS):
        raise ModelFormatError(f"model document must have exactly the keys {MODEL_KEYS}")
    try:
        sizes = tuple(int(v) for v in doc["layer_sizes"])
        if len(sizes) != 3:
            raise ModelFormatError("layer_sizes must have three entries")
        weights = tuple(np.array(w, dtype=np.float64) for w in doc["weights"])
        biases = tuple(np.array(b, dtype=np.float64) for b in doc["biases"])
        st = doc["standardization"]
        st = None if st is None else Standardization.from_dict(st)
        return MLPModel(sizes, weights, biases, tuple(doc["feature_subset"]), st)
    except ModelFormatError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise ModelFormatError(f"inconsistent model document: {e}") from None
