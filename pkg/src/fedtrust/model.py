"""Small differentiable classifiers over flat float64 parameter vectors.

Two architectures are supported: multinomial logistic regression and a
one-hidden-layer ReLU MLP. Parameters live in one flat vector laid out
layer by layer, weights (row-major, shape ``out x in``) before biases.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError

LOGISTIC = "logistic-regression"
MLP = "mlp-1h"
KINDS = (LOGISTIC, MLP)


@dataclass(frozen=True)
class ArchitectureDescriptor:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise InputError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise InputError("num_classes must be >= 2")
        if self.kind == MLP and self.hidden_dim < 1:
            raise InputError("mlp-1h requires hidden_dim >= 1")
        if self.kind == LOGISTIC and self.hidden_dim != 0:
            raise InputError("logistic-regression requires hidden_dim == 0")
        if self.activation != "relu":
            raise InputError("only relu activation is supported")

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(out, in) shape of each dense layer."""
        if self.kind == LOGISTIC:
            return [(self.num_classes, self.input_dim)]
        return [(self.hidden_dim, self.input_dim), (self.num_classes, self.hidden_dim)]

    @property
    def param_count(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "num_classes": self.num_classes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ArchitectureDescriptor":
        return cls(
            kind=d["kind"],
            input_dim=int(d["input_dim"]),
            num_classes=int(d["num_classes"]),
            hidden_dim=int(d.get("hidden_dim", 0)),
            activation=d.get("activation", "relu"),
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    arch: ArchitectureDescriptor
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != self.arch.param_count:
            raise InputError(
                f"expected {self.arch.param_count} parameters, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("parameters must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.values, other.values)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(self.arch, values)

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.arch, self.values)

    def to_dict(self, encoding: str = "base64") -> Dict[str, Any]:
        if encoding == "base64":
            payload: Any = base64.b64encode(self.values.astype("<f8").tobytes()).decode("ascii")
            enc = "base64-f64le"
        elif encoding == "decimal":
            payload = [float(v) for v in self.values]
            enc = "decimal"
        else:
            raise InputError(f"unknown encoding {encoding!r}")
        return {"arch": self.arch.to_dict(), "encoding": enc, "values": payload}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ModelParams":
        try:
            arch = ArchitectureDescriptor.from_dict(d["arch"])
            enc = d.get("encoding", "decimal")
            if enc == "base64-f64le":
                values = np.frombuffer(base64.b64decode(d["values"]), dtype="<f8")
            elif enc == "decimal":
                values = np.asarray(d["values"], dtype=np.float64)
            else:
                raise InputError(f"unknown parameter encoding {enc!r}")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed model document: {exc}") from exc
        return cls(arch, values)


@dataclass
class GradientResult:
    loss: float
    param_grad: np.ndarray


def flatten(layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts)


def unflatten(arch: ArchitectureDescriptor, values: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    values = np.asarray(values, dtype=np.float64)
    if values.size != arch.param_count:
        raise InputError(f"expected {arch.param_count} parameters, got {values.size}")
    layers = []
    pos = 0
    for out, inp in arch.layer_shapes():
        W = values[pos:pos + out * inp].reshape(out, inp)
        pos += out * inp
        b = values[pos:pos + out]
        pos += out
        layers.append((W, b))
    return layers


def zeros(arch: ArchitectureDescriptor) -> ModelParams:
    return ModelParams(arch, np.zeros(arch.param_count))


def init_params(arch: ArchitectureDescriptor, rng: np.random.Generator) -> ModelParams:
    """Zero init for logistic regression; He-scaled normal weights for the MLP."""
    if arch.kind == LOGISTIC:
        return zeros(arch)
    layers = []
    for out, inp in arch.layer_shapes():
        layers.append((rng.normal(0.0, np.sqrt(2.0 / inp), size=(out, inp)), np.zeros(out)))
    return ModelParams(arch, flatten(layers))


def _as_batch(arch: ArchitectureDescriptor, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise InputError(f"expected features of dimension {arch.input_dim}, got shape {np.shape(features)}")
    return X


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def logits(params: ModelParams, features) -> np.ndarray:
    """Logits for a batch ``(n, d)`` or a single vector (returned as ``(1, k)``)."""
    X = _as_batch(params.arch, features)
    layers = params.layers()
    if params.arch.kind == LOGISTIC:
        W, b = layers[0]
        return X @ W.T + b
    (W1, b1), (W2, b2) = layers
    H = np.maximum(X @ W1.T + b1, 0.0)
    return H @ W2.T + b2


def predict_proba(params: ModelParams, features) -> np.ndarray:
    return _softmax(logits(params, features))


def predict(params: ModelParams, features) -> np.ndarray:
    return np.argmax(logits(params, features), axis=1)


def forward(params: ModelParams, features) -> np.ndarray:
    """Class-probability vector for a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("forward expects a single feature vector")
    return predict_proba(params, x)[0]


def loss_and_grad(params: ModelParams, features, labels, prox_center: Optional[np.ndarray] = None,
                  prox_mu: float = 0.0) -> GradientResult:
    """Mean cross-entropy and its gradient with respect to the flat parameters.

    ``prox_center``/``prox_mu`` add the FedProx term ``mu/2 * ||w - center||^2``.
    """
    arch = params.arch
    X = _as_batch(arch, features)
    y = np.asarray(labels)
    if X.shape[0] == 0 or y.size == 0:
        raise InputError("empty batch")
    if y.shape != (X.shape[0],):
        raise InputError("labels must be a vector matching the batch size")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= arch.num_classes:
        raise InputError("labels out of range")
    n = X.shape[0]
    layers = params.layers()

    if arch.kind == LOGISTIC:
        W, b = layers[0]
        Z = X @ W.T + b
        H = None
    else:
        (W1, b1), (W2, b2) = layers
        A = X @ W1.T + b1
        H = np.maximum(A, 0.0)
        Z = H @ W2.T + b2

    Zs = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Zs).sum(axis=1))
    loss = float(np.mean(logsum - Zs[np.arange(n), y]))
    P = np.exp(Zs - logsum[:, None])
    G = P
    G[np.arange(n), y] -= 1.0
    G /= n

    if arch.kind == LOGISTIC:
        grads = [(G.T @ X, G.sum(axis=0))]
    else:
        dW2 = G.T @ H
        db2 = G.sum(axis=0)
        # relu subgradient at 0 is 0
        dA = (G @ W2) * (A > 0)
        grads = [(dA.T @ X, dA.sum(axis=0)), (dW2, db2)]
    grad = flatten(grads)

    if prox_mu:
        diff = params.values - prox_center
        loss += 0.5 * prox_mu * float(diff @ diff)
        grad = grad + prox_mu * diff
    return GradientResult(loss=loss, param_grad=grad)


def _check_pair(arch: ArchitectureDescriptor, class_pair: Tuple[int, int]) -> Tuple[int, int]:
    c, j = class_pair
    k = arch.num_classes
    if not (0 <= c < k and 0 <= j < k) or c == j:
        raise InputError(f"invalid class pair {class_pair!r} for {k} classes")
    return int(c), int(j)


def margin(params: ModelParams, features, class_pair: Tuple[int, int]) -> np.ndarray:
    """``logit_c - logit_j`` for every row of ``features``."""
    c, j = _check_pair(params.arch, class_pair)
    Z = logits(params, features)
    return Z[:, c] - Z[:, j]


def input_grad_batch(params: ModelParams, features, class_pair: Tuple[int, int]) -> np.ndarray:
    """Gradient of the margin ``logit_c - logit_j`` w.r.t. the input, one row per sample."""
    c, j = _check_pair(params.arch, class_pair)
    X = _as_batch(params.arch, features)
    layers = params.layers()
    if params.arch.kind == LOGISTIC:
        W, _ = layers[0]
        return np.broadcast_to(W[c] - W[j], X.shape).copy()
    (W1, b1), (W2, _) = layers
    active = (X @ W1.T + b1) > 0
    return (active * (W2[c] - W2[j])) @ W1


def input_grad(params: ModelParams, features, class_pair: Tuple[int, int]) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("input_grad expects a single feature vector")
    return input_grad_batch(params, x, class_pair)[0]


def evaluate(params: ModelParams, features, labels) -> Tuple[float, float]:
    """(mean cross-entropy, accuracy) on a labelled set."""
    y = np.asarray(labels)
    P = predict_proba(params, features)
    n = y.size
    loss = float(-np.mean(np.log(np.maximum(P[np.arange(n), y], 1e-300))))
    acc = float(np.mean(np.argmax(P, axis=1) == y))
    return loss, acc
