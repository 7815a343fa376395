"""
Dense numerics for a small fully-connected classifier.

All model weights travel as one flat float64 ParamVector. The canonical
layout is, layer by layer, the weight matrix stored [in x out] row-major
followed by the bias vector of that layer. ``flatten``/``unflatten`` convert
between this layout and per-layer ``LayerWeights``.

Provided here:
  - forward pass with max-shifted log-softmax cross-entropy
  - exact backpropagation
  - central-difference Hessian-vector products on top of any gradient
  - the ``Objective`` protocol used by the flatness diagnostics

Every function is pure: inputs are never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Protocol

import numpy as np

from simulation.shared.errors import ConfigurationError, InvalidArgumentError

ParamVector = np.ndarray
GradFn = Callable[[ParamVector], ParamVector]

HVP_STEP_SCALE = 1e-3


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


@dataclass(frozen=True)
class ModelArch:
    """MLP shape: input -> hidden_dims... -> num_classes logits."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "activation", Activation(self.activation))
        if not self.hidden_dims:
            raise ConfigurationError("ModelArch needs at least one hidden layer")
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"ModelArch dimensions must be >= 1, got {dims}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def param_count(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_shapes)

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """(weight, bias) slices of each layer inside a ParamVector."""
        out: list[tuple[slice, slice]] = []
        offset = 0
        for n_in, n_out in self.layer_shapes:
            w_end = offset + n_in * n_out
            b_end = w_end + n_out
            out.append((slice(offset, w_end), slice(w_end, b_end)))
            offset = b_end
        return out


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ConfigurationError(
                f"Batch shape mismatch: inputs {inputs.shape}, labels {labels.shape}"
            )
        if inputs.shape[0] < 1:
            raise ConfigurationError("Batch must hold at least one sample")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


class LayerWeights(NamedTuple):
    weight: np.ndarray  # [in x out]
    bias: np.ndarray  # [out]


@dataclass(frozen=True)
class LossResult:
    loss: float
    scores: np.ndarray = field(repr=False)  # logits [B x num_classes]


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------


def flatten(layers: list[LayerWeights], arch: ModelArch) -> ParamVector:
    if len(layers) != len(arch.layer_shapes):
        raise ConfigurationError(
            f"expected {len(arch.layer_shapes)} layers, got {len(layers)}"
        )
    parts: list[np.ndarray] = []
    for layer, (n_in, n_out) in zip(layers, arch.layer_shapes):
        weight = np.asarray(layer.weight, dtype=np.float64)
        bias = np.asarray(layer.bias, dtype=np.float64)
        if weight.shape != (n_in, n_out) or bias.shape != (n_out,):
            raise ConfigurationError(
                f"layer shape {weight.shape}/{bias.shape} does not match ({n_in}, {n_out})"
            )
        parts.append(weight.reshape(-1))
        parts.append(bias)
    return np.concatenate(parts)


def unflatten(w: ParamVector, arch: ModelArch) -> list[LayerWeights]:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != arch.param_count:
        raise ConfigurationError(
            f"ParamVector length {w.shape} does not match param_count {arch.param_count}"
        )
    layers: list[LayerWeights] = []
    for (w_sl, b_sl), (n_in, n_out) in zip(arch.layer_slices(), arch.layer_shapes):
        layers.append(LayerWeights(w[w_sl].reshape(n_in, n_out), w[b_sl]))
    return layers


def init_params(arch: ModelArch, seed: int) -> ParamVector:
    """He-scaled weights for ReLU nets, 1/sqrt(fan_in) otherwise; zero biases."""
    rng = np.random.default_rng(seed)
    gain = 2.0 if arch.activation is Activation.RELU else 1.0
    layers = [
        LayerWeights(
            rng.standard_normal((n_in, n_out)) * np.sqrt(gain / n_in),
            np.zeros(n_out),
        )
        for n_in, n_out in arch.layer_shapes
    ]
    return flatten(layers, arch)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, h: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    return 1.0 - h * h


def _check_batch(arch: ModelArch, batch: Batch) -> None:
    if batch.inputs.shape[1] != arch.input_dim:
        raise ConfigurationError(
            f"batch input_dim {batch.inputs.shape[1]} != arch input_dim {arch.input_dim}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= arch.num_classes:
        raise ConfigurationError(f"labels must lie in [0, {arch.num_classes})")


def _forward(
    layers: list[LayerWeights], arch: ModelArch, x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Return (pre-activations, layer inputs, logits)."""
    zs: list[np.ndarray] = []
    hs: list[np.ndarray] = [x]
    h = x
    for layer in layers[:-1]:
        z = h @ layer.weight + layer.bias
        h = _activate(z, arch.activation)
        zs.append(z)
        hs.append(h)
    logits = h @ layers[-1].weight + layers[-1].bias
    return zs, hs, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(w: ParamVector, arch: ModelArch, batch: Batch) -> LossResult:
    """Mean cross-entropy over the batch plus the logits."""
    _check_batch(arch, batch)
    layers = unflatten(w, arch)
    _, _, logits = _forward(layers, arch, batch.inputs)
    log_probs = _log_softmax(logits)
    loss = -float(np.mean(log_probs[np.arange(batch.size), batch.labels]))
    return LossResult(loss=loss, scores=logits)


def loss_and_grad(w: ParamVector, arch: ModelArch, batch: Batch) -> tuple[float, ParamVector]:
    """Loss and exact gradient in one forward/backward pass."""
    _check_batch(arch, batch)
    layers = unflatten(w, arch)
    zs, hs, logits = _forward(layers, arch, batch.inputs)
    log_probs = _log_softmax(logits)
    n = batch.size
    rows = np.arange(n)
    loss = -float(np.mean(log_probs[rows, batch.labels]))

    delta = np.exp(log_probs)
    delta[rows, batch.labels] -= 1.0
    delta /= n

    grads: list[LayerWeights] = [LayerWeights(np.empty(0), np.empty(0))] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        grads[idx] = LayerWeights(hs[idx].T @ delta, delta.sum(axis=0))
        if idx > 0:
            delta = (delta @ layers[idx].weight.T) * _activation_grad(
                zs[idx - 1], hs[idx], arch.activation
            )
    return loss, flatten(grads, arch)


def backward(w: ParamVector, arch: ModelArch, batch: Batch) -> ParamVector:
    """Exact gradient of the mean batch loss, in ParamVector layout."""
    return loss_and_grad(w, arch, batch)[1]


def accuracy(w: ParamVector, arch: ModelArch, batch: Batch) -> float:
    scores = forward_loss(w, arch, batch).scores
    return float(np.mean(np.argmax(scores, axis=1) == batch.labels))


# ---------------------------------------------------------------------------
# Second order
# ---------------------------------------------------------------------------


def default_hvp_step(w: ParamVector) -> float:
    return HVP_STEP_SCALE * (1.0 + float(np.linalg.norm(w)))


def hessian_vector_product(
    grad_fn: GradFn, w: ParamVector, v: ParamVector, h: float | None = None
) -> ParamVector:
    """Central difference of ``grad_fn`` along v/||v||, rescaled by ||v||."""
    norm_v = float(np.linalg.norm(v))
    if not np.isfinite(norm_v) or norm_v == 0.0:
        raise InvalidArgumentError("Hessian-vector product needs a nonzero direction")
    if h is None:
        h = default_hvp_step(w)
    if h <= 0:
        raise InvalidArgumentError(f"finite-difference step must be positive, got {h}")
    v_hat = v / norm_v
    g_plus = grad_fn(w + h * v_hat)
    g_minus = grad_fn(w - h * v_hat)
    return (g_plus - g_minus) / (2.0 * h) * norm_v


def hvp(
    w: ParamVector, arch: ModelArch, batch: Batch, v: ParamVector, h: float | None = None
) -> ParamVector:
    return hessian_vector_product(lambda x: backward(x, arch, batch), w, v, h)


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


class Objective(Protocol):
    """Anything with a scalar loss and its gradient over a ParamVector."""

    def loss(self, w: ParamVector) -> float: ...

    def grad(self, w: ParamVector) -> ParamVector: ...


@dataclass(frozen=True)
class BatchObjective:
    """Cross-entropy of the MLP on a fixed batch."""

    arch: ModelArch
    batch: Batch

    def loss(self, w: ParamVector) -> float:
        return forward_loss(w, self.arch, self.batch).loss

    def grad(self, w: ParamVector) -> ParamVector:
        return backward(w, self.arch, self.batch)

    def accuracy(self, w: ParamVector) -> float:
        return accuracy(w, self.arch, self.batch)


@dataclass(frozen=True)
class QuadraticObjective:
    """f(w) = 0.5 * (w - center)^T A (w - center) with symmetric A."""

    matrix: np.ndarray
    center: np.ndarray | None = None

    def _shift(self, w: ParamVector) -> ParamVector:
        return w if self.center is None else w - self.center

    def loss(self, w: ParamVector) -> float:
        u = self._shift(w)
        return 0.5 * float(u @ self.matrix @ u)

    def grad(self, w: ParamVector) -> ParamVector:
        return self.matrix @ self._shift(w)
