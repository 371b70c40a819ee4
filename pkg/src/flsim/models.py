"""Small differentiable binary classifiers trained with plain mini-batch SGD.

Parameters live in a single flat float64 vector so that client updates can be
averaged, trimmed and perturbed without knowing the model's structure.

Layouts:
    logistic: [w_0 .. w_{d-1}, b]
    mlp1:     [W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2]
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyDatasetError, FLSimError
from .seeding import rng_for

MODEL_KINDS = ("logistic", "mlp1")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise FLSimError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise FLSimError("input_dim must be positive")
        if self.kind == "mlp1" and self.hidden_dim < 1:
            raise FLSimError("mlp1 needs a positive hidden_dim")

    @property
    def n_params(self):
        if self.kind == "logistic":
            return self.input_dim + 1
        return (self.input_dim + 1) * self.hidden_dim + self.hidden_dim + 1


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    # True when precision was forced to 0 because nothing was predicted positive.
    precision_undefined: bool = False

    @classmethod
    def from_counts(cls, tp, fp, tn, fn):
        total = tp + fp + tn + fn
        accuracy = (tp + tn) / total if total else 0.0
        undefined = tp + fp == 0
        precision = 0.0 if undefined else tp / (tp + fp)
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(accuracy, precision, recall, f1, int(tp), int(fp), int(tn), int(fn), undefined)


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    delta: np.ndarray
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise FLSimError("sample_count must be >= 1")


def as_params(values, dim=None):
    """Validate and return a 1-D float64 copy of ``values``."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"expected {dim} parameters, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise FLSimError("parameter vector contains NaN or Inf")
    return arr


def init_params(spec, seed=0):
    """Seeded initial parameters: zeros for logistic, uniform(-s, s) for mlp1."""
    if spec.kind == "logistic":
        return np.zeros(spec.n_params)
    rng = rng_for(seed, "init", spec.kind)
    d, h = spec.input_dim, spec.hidden_dim
    s1 = 1.0 / np.sqrt(d)
    s2 = 1.0 / np.sqrt(h)
    w1 = rng.uniform(-s1, s1, size=h * d)
    b1 = rng.uniform(-s1, s1, size=h)
    w2 = rng.uniform(-s2, s2, size=h)
    b2 = rng.uniform(-s2, s2, size=1)
    return np.concatenate([w1, b1, w2, b2])


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _unpack_mlp(params, spec):
    d, h = spec.input_dim, spec.hidden_dim
    w1 = params[: h * d].reshape(h, d)
    b1 = params[h * d : h * d + h]
    w2 = params[h * d + h : h * d + 2 * h]
    b2 = params[-1]
    return w1, b1, w2, b2


def _check(params, spec, X):
    if params.shape[0] != spec.n_params:
        raise DimensionError(
            f"{spec.kind} model with input_dim={spec.input_dim} needs "
            f"{spec.n_params} parameters, got {params.shape[0]}"
        )
    if X.shape[1] != spec.input_dim:
        raise DimensionError(f"features have width {X.shape[1]}, model expects {spec.input_dim}")


def logits(params, spec, X):
    params = np.asarray(params, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check(params, spec, X)
    if spec.kind == "logistic":
        return X @ params[:-1] + params[-1]
    w1, b1, w2, b2 = _unpack_mlp(params, spec)
    hidden = np.maximum(X @ w1.T + b1, 0.0)
    return hidden @ w2 + b2


def predict_proba(params, spec, X):
    """Positive-class probabilities for a feature matrix."""
    return _sigmoid(logits(params, spec, X))


def predict(params, spec, features):
    """Positive-class probability for a single feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise DimensionError("predict takes one feature vector; use predict_proba for batches")
    return float(predict_proba(params, spec, features[None, :])[0])


def loss(params, spec, X, y):
    """Mean binary cross-entropy."""
    z = logits(params, spec, X)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_grad(params, spec, X, y):
    """Gradient of the mean binary cross-entropy with respect to ``params``."""
    params = np.asarray(params, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    _check(params, spec, X)
    m = X.shape[0]
    if spec.kind == "logistic":
        dz = (_sigmoid(X @ params[:-1] + params[-1]) - y) / m
        return np.concatenate([X.T @ dz, [dz.sum()]])
    w1, b1, w2, b2 = _unpack_mlp(params, spec)
    pre = X @ w1.T + b1
    hidden = np.maximum(pre, 0.0)
    dz = (_sigmoid(hidden @ w2 + b2) - y) / m
    g_w2 = hidden.T @ dz
    g_b2 = dz.sum()
    dh = np.outer(dz, w2) * (pre > 0)
    g_w1 = dh.T @ X
    g_b1 = dh.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]])


def sgd(params, spec, X, y, epochs, batch_size, lr, rng):
    """Run ``epochs`` passes of shuffled mini-batch SGD and return new params.

    The final partial batch of each epoch is kept.
    """
    if epochs < 0 or batch_size < 1:
        raise FLSimError("epochs must be >= 0 and batch_size >= 1")
    params = np.array(params, dtype=np.float64)
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            params -= lr * loss_grad(params, spec, X[idx], y[idx])
    return params


def local_train(received, spec, data, epochs, batch_size, lr, seed, client_id=0):
    """Train a copy of ``received`` on ``data`` and return the client's delta."""
    if len(data) == 0:
        raise EmptyDatasetError("local_train needs a non-empty dataset")
    if epochs < 1 or batch_size < 1 or lr < 0:
        raise FLSimError("local_train needs epochs >= 1, batch_size >= 1, lr >= 0")
    received = as_params(received, spec.n_params)
    # Seed is already per (round, client) at the call site; no shared stream.
    rng = np.random.default_rng(seed)
    trained = sgd(received, spec, data.X, data.y, epochs, batch_size, lr, rng)
    return ClientUpdate(client_id, trained - received, len(data))


def confusion(y_true, y_pred):
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    return tp, fp, tn, fn


def evaluate(params, spec, data, threshold=0.5):
    if len(data) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    pred = predict_proba(params, spec, data.X) >= threshold
    return Metrics.from_counts(*confusion(data.y, pred))


def train_centralized(spec, data, epochs, batch_size, lr, seed, init=None):
    """Pooled-data SGD baseline; also used for server-side pre-training."""
    if len(data) == 0:
        raise EmptyDatasetError("centralized training needs data")
    params = init_params(spec, seed) if init is None else as_params(init, spec.n_params)
    rng = rng_for(seed, "central")
    return sgd(params, spec, data.X, data.y, epochs, batch_size, lr, rng)
