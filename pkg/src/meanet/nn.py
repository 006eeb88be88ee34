"""Small dense-network engine: layers, softmax / entropy / cross-entropy, SGD.

Arrays are plain float64 numpy arrays. A batch is a 2-D array with one
instance per row; 1-D inputs are treated as a batch of one and returned 1-D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, InvalidInputError, ShapeError

ACTIVATIONS = ("relu", "identity")


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"
    frozen: bool = False
    # bumped on every parameter update; traces remember it to detect staleness
    version: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} do not agree"
            )

    @classmethod
    def init(
        cls, n_in: int, n_out: int, rng: np.random.Generator, activation: str = "relu"
    ) -> DenseLayer:
        """He-style uniform initialisation scaled by fan-in; zero bias."""
        limit = math.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(w, np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    @property
    def n_macs(self) -> int:
        return self.weights.size

    def copy(self) -> DenseLayer:
        return DenseLayer(
            self.weights.copy(), self.bias.copy(), self.activation, self.frozen
        )


@dataclass
class Trace:
    """Cached intermediates of one forward pass, enough for backward."""

    layers: list[DenseLayer]
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    output: np.ndarray
    versions: list[int]
    squeeze: bool


@dataclass
class Gradients:
    """Per-layer parameter gradients plus (optionally) the gradient w.r.t. the input."""

    params: list[tuple[DenseLayer, np.ndarray, np.ndarray]]
    input: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.params)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ShapeError(f"expected a 1-D or 2-D input, got shape {x.shape}")
    return x, False


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting the row maximum."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[-1] == 0:
        raise InvalidInputError(f"softmax expects a non-empty 1-D or 2-D array, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input contains non-finite values")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs: np.ndarray) -> np.ndarray | float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0. Works row-wise on 2-D input."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim not in (1, 2):
        raise InvalidInputError(f"entropy expects a 1-D or 2-D array, got {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError("probabilities must be finite and nonnegative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise InvalidInputError("probabilities must sum to 1 within 1e-9")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    # clip the tiny negative values rounding can produce for one-hot rows
    h = np.maximum(h, 0.0)
    return float(h) if p.ndim == 1 else h


def cross_entropy_loss(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss -ln softmax(logits)[label] and its gradient softmax - one_hot."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError("cross_entropy_loss expects a single logit vector")
    if not 0 <= label < z.shape[0]:
        raise IndexError(f"label {label} out of range for {z.shape[0]} classes")
    shifted = z - z.max()
    log_norm = math.log(np.exp(shifted).sum())
    loss = log_norm - shifted[label]
    grad = softmax(z)
    grad[label] -= 1.0
    return float(loss), grad


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch; the gradient is already divided by the batch size."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, k = z.shape
    if y.shape != (n,):
        raise ShapeError(f"{n} logit rows but {y.shape} labels")
    if n == 0:
        raise InvalidInputError("empty batch")
    if y.min() < 0 or y.max() >= k:
        raise IndexError(f"labels must lie in [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, y]))
    grad = softmax(z)
    grad[rows, y] -= 1.0
    return loss, grad / n


def forward(layers: Sequence[DenseLayer], x: np.ndarray) -> Trace:
    h, squeeze = _as_batch(x)
    inputs, preacts = [], []
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.n_in:
            raise ShapeError(f"layer {i} expects width {layer.n_in}, got {h.shape[1]}")
        inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        preacts.append(z)
        h = _activate(z, layer.activation)
    return Trace(
        list(layers), inputs, preacts, h, [l.version for l in layers], squeeze
    )


def predict(layers: Sequence[DenseLayer], x: np.ndarray) -> np.ndarray:
    """Forward pass without keeping a trace."""
    h, squeeze = _as_batch(x)
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.n_in:
            raise ShapeError(f"layer {i} expects width {layer.n_in}, got {h.shape[1]}")
        h = _activate(h @ layer.weights.T + layer.bias, layer.activation)
    return h[0] if squeeze else h


def output_of(trace: Trace) -> np.ndarray:
    return trace.output[0] if trace.squeeze else trace.output


def backward(trace: Trace, output_grad: np.ndarray, need_input_grad: bool = False) -> Gradients:
    """Backpropagate ``output_grad`` through a traced pass.

    Frozen layers get no gradient entry. Propagation stops at the lowest
    trainable layer unless the input gradient is requested.
    """
    for layer, v in zip(trace.layers, trace.versions):
        if layer.version != v:
            raise ContractError("trace is stale: parameters changed after the forward pass")
    g, _ = _as_batch(output_grad)
    if g.shape != trace.output.shape:
        raise ShapeError(f"output grad {g.shape} does not match output {trace.output.shape}")

    trainable = [i for i, l in enumerate(trace.layers) if not l.frozen]
    stop = 0 if need_input_grad else (trainable[0] if trainable else len(trace.layers))
    params = []
    for i in range(len(trace.layers) - 1, stop - 1, -1):
        layer = trace.layers[i]
        if layer.activation == "relu":
            g = g * (trace.preacts[i] > 0)
        if not layer.frozen:
            params.append((layer, g.T @ trace.inputs[i], g.sum(axis=0)))
        if i > stop or need_input_grad:
            g = g @ layer.weights
    params.reverse()
    input_grad = None
    if need_input_grad:
        input_grad = g[0] if trace.squeeze else g
    return Gradients(params, input_grad)


@dataclass
class SgdConfig:
    initial_lr: float = 0.05
    milestones: tuple[int, ...] = (50, 80)
    decay_factor: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self) -> None:
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.initial_lr <= 0:
            raise InvalidInputError("initial_lr must be positive")
        if list(self.milestones) != sorted(self.milestones):
            raise InvalidInputError("milestones must be sorted")
        if not 0 < self.decay_factor < 1:
            raise InvalidInputError("decay_factor must lie in (0, 1)")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for m in self.milestones if m <= epoch)
        return self.initial_lr * self.decay_factor**passed


def sgd_step(
    layers: Iterable[DenseLayer],
    grads: Gradients,
    epoch: int,
    config: SgdConfig,
    velocity: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
) -> None:
    """In-place SGD update (PyTorch-style momentum: v = m*v + g; p -= lr*v).

    ``velocity`` is keyed by ``id(layer)`` and updated in place.
    """
    trainable = {id(l): l for l in layers if not l.frozen}
    seen = set()
    for layer, gw, gb in grads.params:
        key = id(layer)
        if key not in trainable or key in seen:
            raise ContractError("gradient does not align with the trainable parameter set")
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ContractError("gradient shape does not match its parameter")
        seen.add(key)
    lr = config.lr_at(epoch)
    for layer, gw, gb in grads.params:
        if config.momentum > 0 and velocity is not None:
            vw, vb = velocity.get(id(layer), (np.zeros_like(gw), np.zeros_like(gb)))
            vw = config.momentum * vw + gw
            vb = config.momentum * vb + gb
            velocity[id(layer)] = (vw, vb)
            gw, gb = vw, vb
        layer.weights -= lr * gw
        layer.bias -= lr * gb
        layer.version += 1


class Sgd:
    """Stateful wrapper around :func:`sgd_step` that owns the momentum buffers."""

    def __init__(self, layers: Iterable[DenseLayer], config: SgdConfig):
        self.layers = list(layers)
        self.config = config
        self.velocity: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, grads: Gradients, epoch: int) -> None:
        sgd_step(self.layers, grads, epoch, self.config, self.velocity)


def build_mlp(
    n_in: int,
    widths: Sequence[int],
    rng: np.random.Generator,
    activations: Sequence[str] | None = None,
) -> list[DenseLayer]:
    if activations is None:
        activations = ["relu"] * len(widths)
    layers, prev = [], n_in
    for w, act in zip(widths, activations):
        layers.append(DenseLayer.init(prev, w, rng, act))
        prev = w
    return layers


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradients(
    layers: Sequence[DenseLayer],
    loss_fn: Callable[[], float],
    eps: float = 1e-5,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Central finite differences of ``loss_fn`` for every trainable layer's parameters."""
    out = []
    for layer in layers:
        if layer.frozen:
            continue
        grads = []
        for arr in (layer.weights, layer.bias):
            g = np.zeros_like(arr)
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                plus = loss_fn()
                flat[j] = orig - eps
                minus = loss_fn()
                flat[j] = orig
                gflat[j] = (plus - minus) / (2 * eps)
            grads.append(g)
        out.append((grads[0], grads[1]))
    return out


def gradient_check(
    layers: Sequence[DenseLayer], x: np.ndarray, labels: np.ndarray, eps: float = 1e-5
) -> float:
    """Max relative error between backward and central differences for a cross-entropy head."""

    def loss_fn() -> float:
        return cross_entropy_batch(predict(layers, x), labels)[0]

    trace = forward(layers, x)
    _, g = cross_entropy_batch(trace.output, labels)
    analytic = backward(trace, g)
    numeric = numeric_gradients(layers, loss_fn, eps)
    worst = 0.0
    for (_, gw, gb), (nw, nb) in zip(analytic.params, numeric):
        worst = max(worst, max_relative_error(gw, nw), max_relative_error(gb, nb))
    return worst
