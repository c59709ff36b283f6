"""Small differentiable predictors with closed-form loss and gradient.

Every model is a flat float64 parameter vector interpreted through a
:class:`ModelSpec`. Dense models store, layer by layer, a row-major
``(fan_in, fan_out)`` weight matrix followed by its bias.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, ModelParams, RngStream


class ModelKind(str, enum.Enum):
    SCALAR_QUADRATIC = "scalar_quadratic"
    LINEAR_REGRESSION = "linear_regression"
    SOFTMAX_REGRESSION = "softmax_regression"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    layer_sizes: tuple[int, ...] = ()
    # constant added to the scalar-quadratic loss
    offset: float = 0.0
    activation: str = field(default="relu", init=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.kind is ModelKind.SCALAR_QUADRATIC:
            return
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"layer_sizes must have >= 2 positive entries, got {self.layer_sizes}")
        if self.kind is ModelKind.LINEAR_REGRESSION and (len(self.layer_sizes) != 2 or self.layer_sizes[1] != 1):
            raise ConfigError("linear_regression expects layer_sizes [n_in, 1]")
        if self.kind is ModelKind.SOFTMAX_REGRESSION and len(self.layer_sizes) != 2:
            raise ConfigError("softmax_regression expects layer_sizes [n_in, n_classes]")

    @classmethod
    def scalar_quadratic(cls, offset: float = 0.0) -> "ModelSpec":
        return cls(ModelKind.SCALAR_QUADRATIC, (), offset)

    @classmethod
    def linear_regression(cls, n_in: int) -> "ModelSpec":
        return cls(ModelKind.LINEAR_REGRESSION, (n_in, 1))

    @classmethod
    def softmax_regression(cls, n_in: int, n_classes: int) -> "ModelSpec":
        return cls(ModelKind.SOFTMAX_REGRESSION, (n_in, n_classes))

    @classmethod
    def mlp(cls, layer_sizes) -> "ModelSpec":
        return cls(ModelKind.MLP, tuple(layer_sizes))

    @property
    def is_classifier(self) -> bool:
        return self.kind in (ModelKind.SOFTMAX_REGRESSION, ModelKind.MLP)

    @property
    def n_inputs(self) -> int:
        return 0 if self.kind is ModelKind.SCALAR_QUADRATIC else self.layer_sizes[0]

    @property
    def dim(self) -> int:
        if self.kind is ModelKind.SCALAR_QUADRATIC:
            return 1
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))


@dataclass(frozen=True)
class Batch:
    """``inputs`` is ``(b, n_in)``; ``targets`` holds int labels or real values."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.targets) < 1:
            raise ConfigError("empty batch")
        if len(self.inputs) != len(self.targets):
            raise ConfigError(f"batch has {len(self.inputs)} inputs but {len(self.targets)} targets")

    @property
    def size(self) -> int:
        return len(self.targets)

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx])


def _layers(spec: ModelSpec, params: ModelParams):
    out = []
    pos = 0
    s = spec.layer_sizes
    for i in range(len(s) - 1):
        n_w = s[i] * s[i + 1]
        W = params[pos:pos + n_w].reshape(s[i], s[i + 1])
        pos += n_w
        b = params[pos:pos + s[i + 1]]
        pos += s[i + 1]
        out.append((W, b))
    return out


def _check(spec: ModelSpec, params: ModelParams, batch: Batch) -> None:
    if params.shape != (spec.dim,):
        raise ConfigError(f"params have shape {params.shape}, spec needs ({spec.dim},)")
    if spec.kind is not ModelKind.SCALAR_QUADRATIC:
        if batch.inputs.ndim != 2 or batch.inputs.shape[1] != spec.n_inputs:
            raise ConfigError(f"batch inputs {batch.inputs.shape} do not match n_in={spec.n_inputs}")


def init_params(spec: ModelSpec, stream: RngStream) -> ModelParams:
    """Zeros for quadratic/regression models; Glorot-uniform weights for MLPs."""
    params = np.zeros(spec.dim)
    if spec.kind is not ModelKind.MLP:
        return params
    rng = stream.generator()
    for W, _b in _layers(spec, params):
        a = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-a, a, size=W.shape)
    return params


def _forward(spec: ModelSpec, params: ModelParams, x: np.ndarray):
    """Return (pre-activations of hidden layers, hidden activations, output)."""
    acts = [x]
    h = x
    layers = _layers(spec, params)
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    return acts, h @ W + b


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_sample_loss(spec: ModelSpec, params: ModelParams, batch: Batch) -> np.ndarray:
    _check(spec, params, batch)
    if spec.kind is ModelKind.SCALAR_QUADRATIC:
        return (params[0] - batch.targets) ** 2 + spec.offset
    _, out = _forward(spec, params, batch.inputs)
    if spec.kind is ModelKind.LINEAR_REGRESSION:
        return (out[:, 0] - batch.targets) ** 2
    logp = _log_softmax(out)
    return -logp[np.arange(batch.size), batch.targets]


def loss(spec: ModelSpec, params: ModelParams, batch: Batch) -> float:
    return float(np.mean(per_sample_loss(spec, params, batch)))


def grad(spec: ModelSpec, params: ModelParams, batch: Batch) -> ModelParams:
    """Gradient of the mean batch loss, by manual backpropagation."""
    _check(spec, params, batch)
    n = batch.size
    if spec.kind is ModelKind.SCALAR_QUADRATIC:
        return np.array([2.0 * (params[0] - np.mean(batch.targets))])

    acts, out = _forward(spec, params, batch.inputs)
    if spec.kind is ModelKind.LINEAR_REGRESSION:
        d_out = (2.0 / n) * (out - batch.targets[:, None])
    else:
        p = np.exp(_log_softmax(out))
        p[np.arange(n), batch.targets] -= 1.0
        d_out = p / n

    g = np.empty_like(params)
    layers = _layers(spec, params)
    gl = _layers(spec, g)
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = gl[i]
        gW[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0.0)
    return g


def predict(spec: ModelSpec, params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Predicted labels; ``argmax`` picks the lowest index on ties."""
    if not spec.is_classifier:
        raise ConfigError(f"predict needs a classifier, got {spec.kind.value}")
    _, out = _forward(spec, params, inputs)
    return np.argmax(out, axis=1)


def accuracy(spec: ModelSpec, params: ModelParams, batch: Batch) -> float:
    if not spec.is_classifier:
        raise ConfigError(f"accuracy is undefined for {spec.kind.value}")
    _check(spec, params, batch)
    return float(np.mean(predict(spec, params, batch.inputs) == batch.targets))


def fd_gradient(f, params: ModelParams, h: float = 1e-5) -> ModelParams:
    """Central finite-difference gradient of a scalar function of params."""
    out = np.empty_like(params)
    p = params.copy()
    for i in range(len(p)):
        orig = p[i]
        p[i] = orig + h
        fp = f(p)
        p[i] = orig - h
        fm = f(p)
        p[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out


def fd_check(spec: ModelSpec, params: ModelParams, batch: Batch, h: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - fd| / max(1, |analytic|)``."""
    if not 0.0 < h <= 1e-2:
        raise ConfigError(f"fd step h={h} outside (0, 1e-2]")
    analytic = grad(spec, params, batch)
    numeric = fd_gradient(lambda p: loss(spec, p, batch), params, h)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
