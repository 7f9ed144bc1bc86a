"""Minimal feedforward network: forward pass, exact logit gradients, SGD training
and weight re-initialization for randomization tests.

All arrays are float64. Layers operate on batches: an activation of shape
``(N, *layer_input_shape)``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an array does not fit the layer that receives it."""

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class TrainingDivergedError(RuntimeError):
    pass


Shape = Tuple[int, ...]


@dataclass(eq=False)
class Dense:
    """Affine map ``a @ W.T + b`` with ``W`` of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray
    bias_enabled: bool = True

    kind = "dense"
    has_params = True

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"dense weight {self.W.shape} and bias {self.b.shape} disagree")
        if not self.bias_enabled and np.any(self.b != 0):
            raise ValueError("bias_enabled is False but bias has nonzero entries")

    @property
    def fan_in(self):
        return self.W.shape[1]

    def output_shape(self, in_shape: Shape) -> Shape:
        if in_shape != (self.W.shape[1],):
            raise ShapeError(f"dense layer expects input ({self.W.shape[1]},), got {in_shape}")
        return (self.W.shape[0],)

    def forward(self, a):
        return a @ self.W.T + self.b

    def backward(self, a_in, grad_out):
        return grad_out @ self.W

    def param_grads(self, a_in, grad_out):
        return grad_out.T @ a_in, grad_out.sum(axis=0)

    def params(self):
        return [self.W, self.b]


@dataclass(eq=False)
class Conv2D:
    """Valid-padding, stride-1 cross-correlation. Kernels: (out_ch, in_ch, kh, kw)."""

    K: np.ndarray
    b: np.ndarray
    bias_enabled: bool = True

    kind = "conv2d"
    has_params = True

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.K.ndim != 4 or self.b.shape != (self.K.shape[0],):
            raise ShapeError(f"conv kernels {self.K.shape} and bias {self.b.shape} disagree")
        if not self.bias_enabled and np.any(self.b != 0):
            raise ValueError("bias_enabled is False but bias has nonzero entries")

    @property
    def fan_in(self):
        return int(np.prod(self.K.shape[1:]))

    def output_shape(self, in_shape: Shape) -> Shape:
        out_ch, in_ch, kh, kw = self.K.shape
        if len(in_shape) != 3 or in_shape[0] != in_ch:
            raise ShapeError(f"conv layer expects ({in_ch}, H, W) input, got {in_shape}")
        h, w = in_shape[1] - kh + 1, in_shape[2] - kw + 1
        if h < 1 or w < 1:
            raise ShapeError(f"kernel {kh}x{kw} larger than input {in_shape[1:]}")
        return (out_ch, h, w)

    def forward(self, a):
        kh, kw = self.K.shape[2:]
        win = sliding_window_view(a, (kh, kw), axis=(2, 3))
        out = np.einsum("nchwij,ocij->nohw", win, self.K, optimize=True)
        return out + self.b[None, :, None, None]

    def backward(self, a_in, grad_out):
        kh, kw = self.K.shape[2:]
        padded = np.pad(grad_out, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        win = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        flipped = self.K[:, :, ::-1, ::-1]
        return np.einsum("nohwij,ocij->nchw", win, flipped, optimize=True)

    def param_grads(self, a_in, grad_out):
        kh, kw = self.K.shape[2:]
        win = sliding_window_view(a_in, (kh, kw), axis=(2, 3))
        dK = np.einsum("nchwij,nohw->ocij", win, grad_out, optimize=True)
        return dK, grad_out.sum(axis=(0, 2, 3))

    def params(self):
        return [self.K, self.b]


class ReLU:
    """``max(z, 0)``; the derivative at exactly 0 is taken to be 0."""

    kind = "relu"
    has_params = False

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, a):
        return np.maximum(a, 0.0)

    def backward(self, a_in, grad_out):
        return grad_out * (a_in > 0)

    def __repr__(self):
        return "ReLU()"


class Flatten:
    kind = "flatten"
    has_params = False

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, a):
        return a.reshape(a.shape[0], -1)

    def backward(self, a_in, grad_out):
        return grad_out.reshape((grad_out.shape[0],) + a_in.shape[1:])

    def __repr__(self):
        return "Flatten()"


class Network:
    """Ordered layer stack computing logits ``S: R^d -> R^C``.

    No softmax is stored; it only appears inside the training loss.
    """

    def __init__(self, layers: Sequence, input_shape: Sequence[int]):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        if not self.layers:
            raise ValueError("network needs at least one layer")
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(str(exc), layer_index=i) from None
            self.shapes.append(shape)
        if len(shape) != 1:
            raise ShapeError(f"final output must be a vector of logits, got shape {shape}")
        self.num_classes = shape[0]

    @property
    def param_layer_indices(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.has_params]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def _check_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != self.input_shape:
            raise ShapeError(f"input batch shape {X.shape[1:]} != network input {self.input_shape}", 0)
        return X

    def logits(self, X) -> np.ndarray:
        """Batched forward pass, ``X`` of shape (N, *input_shape)."""
        a = self._check_batch(X)
        for layer in self.layers:
            a = layer.forward(a)
        return a

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def accuracy(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def __repr__(self):
        return f"Network(input_shape={self.input_shape}, layers={[l.kind for l in self.layers]})"


@dataclass
class ForwardTrace:
    """Per-layer input and output activations of one forward pass (batch of 1)."""

    inputs: List[np.ndarray]
    outputs: List[np.ndarray]

    def __len__(self):
        return len(self.inputs)


def _single(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        if x.size == int(np.prod(net.input_shape)) and x.ndim == 1:
            raise ShapeError(
                f"input shape {x.shape} != {net.input_shape}; reshape explicitly", 0)
        raise ShapeError(f"input shape {x.shape} != network input {net.input_shape}", 0)
    return x[None]


def trace_forward(net: Network, x) -> ForwardTrace:
    a = _single(net, x)
    inputs, outputs = [], []
    for layer in net.layers:
        inputs.append(a)
        a = layer.forward(a)
        outputs.append(a)
    return ForwardTrace(inputs, outputs)


def forward(net: Network, x) -> np.ndarray:
    """Logits for a single input ``x`` shaped like ``net.input_shape``."""
    return trace_forward(net, x).outputs[-1][0]


def backward_from(net: Network, trace: ForwardTrace, grad_out: np.ndarray) -> np.ndarray:
    """Propagate a batch of output cotangents (K, C) back to the input.

    The K rows share the activation pattern stored in ``trace``.
    """
    g = grad_out
    for layer, a_in in zip(reversed(net.layers), reversed(trace.inputs)):
        g = layer.backward(a_in, g)
    return g


def logit_gradients(net: Network, x) -> np.ndarray:
    """Row ``i`` is dS[i]/dx, shape (C, *input_shape)."""
    trace = trace_forward(net, x)
    return backward_from(net, trace, np.eye(net.num_classes))


# --- construction and initialization -------------------------------------------------

def _layer_rng(seed: int, layer_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(layer_index)])


def init_params(layer, rng: np.random.Generator):
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    bound = 1.0 / math.sqrt(layer.fan_in)
    if isinstance(layer, Dense):
        W = rng.uniform(-bound, bound, size=layer.W.shape)
        return Dense(W, np.zeros_like(layer.b), layer.bias_enabled)
    if isinstance(layer, Conv2D):
        K = rng.uniform(-bound, bound, size=layer.K.shape)
        return Conv2D(K, np.zeros_like(layer.b), layer.bias_enabled)
    raise ValueError(f"layer kind {layer.kind!r} has no parameters")


def parse_arch(arch: str) -> List[tuple]:
    """Parse the layer mini-language.

    Comma-separated tokens: ``dense:<units>``, ``conv:<channels>x<kh>x<kw>``,
    ``relu``, ``flatten``. Example: ``flatten,dense:128,relu,dense:10``.
    """
    specs = []
    for raw in arch.split(","):
        tok = raw.strip().lower()
        if not tok:
            continue
        name, _, arg = tok.partition(":")
        try:
            if name == "dense":
                specs.append(("dense", int(arg)))
            elif name == "conv":
                ch, kh, kw = (int(v) for v in arg.split("x"))
                specs.append(("conv", ch, kh, kw))
            elif name in ("relu", "flatten") and not arg:
                specs.append((name,))
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"bad layer token {raw.strip()!r} in architecture {arch!r}") from None
    if not specs:
        raise ValueError("empty architecture")
    return specs


def build_network(arch: str, input_shape: Sequence[int], seed: int = 0, bias: bool = True) -> Network:
    """Freshly initialized network; layer ``i`` draws from a generator seeded by (seed, i)."""
    shape = tuple(int(s) for s in input_shape)
    layers = []
    for i, spec in enumerate(parse_arch(arch)):
        if spec[0] == "dense":
            if len(shape) != 1:
                raise ShapeError(f"dense layer needs a flat input, got {shape}; add 'flatten'", i)
            proto = Dense(np.zeros((spec[1], shape[0])), np.zeros(spec[1]), bias)
            layer = init_params(proto, _layer_rng(seed, i))
        elif spec[0] == "conv":
            if len(shape) != 3:
                raise ShapeError(f"conv layer needs (C, H, W) input, got {shape}", i)
            _, ch, kh, kw = spec
            proto = Conv2D(np.zeros((ch, shape[0], kh, kw)), np.zeros(ch), bias)
            layer = init_params(proto, _layer_rng(seed, i))
        elif spec[0] == "relu":
            layer = ReLU()
        else:
            layer = Flatten()
        try:
            shape = layer.output_shape(shape)
        except ShapeError as exc:
            raise ShapeError(str(exc), i) from None
        layers.append(layer)
    return Network(layers, input_shape)


def randomize_layer(net: Network, layer_index: int, seed: int) -> Network:
    """Copy of ``net`` with one parameterized layer re-drawn from the init distribution."""
    if not 0 <= layer_index < len(net.layers):
        raise IndexError(f"layer index {layer_index} out of range (0..{len(net.layers) - 1})")
    layer = net.layers[layer_index]
    if not layer.has_params:
        raise ValueError(f"layer {layer_index} ({layer.kind}) has no parameters to randomize")
    out = net.copy()
    out.layers[layer_index] = init_params(layer, _layer_rng(seed, layer_index))
    return out


def cascading_randomize(net: Network, top_k: int, seed: int) -> Network:
    """Re-initialize the ``top_k`` parameterized layers closest to the output."""
    idx = net.param_layer_indices
    if not 1 <= top_k <= len(idx):
        raise ValueError(f"top_k must be in [1, {len(idx)}], got {top_k}")
    out = net
    for layer_index in reversed(idx[-top_k:]):
        out = randomize_layer(out, layer_index, seed)
    return out


# --- training ------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError(f"invalid training config {self}")


@dataclass
class TrainReport:
    epoch_losses: List[float] = field(default_factory=list)
    train_accuracy: Optional[float] = None


def softmax_cross_entropy(logits, y):
    """Mean loss and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = logits.shape[0]
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def train(net: Network, X, y, cfg: TrainConfig) -> TrainReport:
    """Mini-batch SGD on softmax cross-entropy. Updates ``net`` in place."""
    X = net._check_batch(X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(y) != len(X):
        raise ValueError(f"{len(X)} inputs but {len(y)} labels")
    if y.min() < 0 or y.max() >= net.num_classes:
        raise ValueError(f"labels must lie in [0, {net.num_classes})")
    report = TrainReport()
    if cfg.epochs == 0:
        return report
    rng = np.random.default_rng(cfg.seed)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            loss = _train_epoch(net, X, y, cfg, rng)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for l in net.layers
                                                if l.has_params for p in l.params()):
                raise TrainingDivergedError(
                    f"non-finite loss or weights at epoch {epoch}; "
                    f"learning rate {cfg.learning_rate} is probably too high")
            report.epoch_losses.append(loss)
    report.train_accuracy = net.accuracy(X, y)
    return report


def _train_epoch(net, X, y, cfg, rng) -> float:
    lr = cfg.learning_rate
    order = rng.permutation(len(X))
    total = 0.0
    for start in range(0, len(X), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        acts = [X[batch]]
        for layer in net.layers:
            acts.append(layer.forward(acts[-1]))
        loss, g = softmax_cross_entropy(acts[-1], y[batch])
        if not np.isfinite(loss):
            return float("nan")
        total += loss * len(batch)
        for i in range(len(net.layers) - 1, -1, -1):
            layer = net.layers[i]
            a_in = acts[i]
            if layer.has_params:
                dW, db = layer.param_grads(a_in, g)
            if i > 0:
                g = layer.backward(a_in, g)
            if layer.has_params:
                weight, bias = layer.params()
                weight -= lr * dW
                if layer.bias_enabled:
                    bias -= lr * db
    return float(total / len(X))
