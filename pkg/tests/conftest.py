import numpy as np
import pytest

from compsal.data_io import synthetic_digits
from compsal.nn import Conv2D, Dense, Flatten, Network, ReLU, TrainConfig, build_network, forward, train


def random_relu_net(rng, bias=True, max_layers=3, max_dim=32, conv=False):
    """Random dense (optionally conv-headed) ReLU net with <= max_layers parameterized layers."""
    layers = []
    if conv:
        in_ch, size = int(rng.integers(1, 3)), int(rng.integers(4, 7))
        out_ch, k = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        input_shape = (in_ch, size, size)
        K = rng.normal(size=(out_ch, in_ch, k, k)) / np.sqrt(in_ch * k * k)
        b = rng.normal(scale=0.1, size=out_ch) if bias else np.zeros(out_ch)
        layers += [Conv2D(K, b, bias), ReLU(), Flatten()]
        width = out_ch * (size - k + 1) ** 2
        n_dense = int(rng.integers(1, max_layers))
    else:
        width = int(rng.integers(2, max_dim + 1))
        input_shape = (width,)
        n_dense = int(rng.integers(1, max_layers + 1))
    for i in range(n_dense):
        last = i == n_dense - 1
        out = int(rng.integers(2, 11)) if last else int(rng.integers(2, max_dim + 1))
        W = rng.normal(size=(out, width)) / np.sqrt(width)
        b = rng.normal(scale=0.1, size=out) if bias else np.zeros(out)
        layers.append(Dense(W, b, bias))
        if not last:
            layers.append(ReLU())
        width = out
    return Network(layers, input_shape)


def central_difference_jacobian(net, x, h=1e-5):
    """Independent oracle: (C, *input_shape) Jacobian of the logits by central differences."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    cols = []
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = h
        plus = forward(net, (flat + e).reshape(x.shape))
        minus = forward(net, (flat - e).reshape(x.shape))
        cols.append((plus - minus) / (2 * h))
    return np.stack(cols, axis=1).reshape((-1,) + x.shape)


def min_preactivation(net, x):
    """Smallest |pre-activation| feeding a ReLU; small values mean a kink is near."""
    a = np.asarray(x, dtype=np.float64)[None]
    smallest = np.inf
    for layer in net.layers:
        if layer.kind == "relu":
            smallest = min(smallest, float(np.abs(a).min()))
        a = layer.forward(a)
    return smallest


def literal_competition(scores, y):
    """Element-by-element transcription of the selection loop, used as an oracle."""
    C, d = scores.shape
    H = np.zeros(d)
    for j in range(d):
        s = scores[y, j]
        if s > 0:
            if all(s >= scores[i, j] for i in range(C) if i != y):
                H[j] = s
        else:
            if all(s <= scores[i, j] for i in range(C) if i != y):
                H[j] = s
    return H


@pytest.fixture(scope="session")
def digits():
    ds = synthetic_digits(2600, seed=0)
    return ds.subset(slice(0, 2000)), ds.subset(slice(2000, 2600))


@pytest.fixture(scope="session")
def trained_mlp(digits):
    train_set, _ = digits
    net = build_network("flatten,dense:64,relu,dense:10", (16, 16), seed=0)
    train(net, train_set.images, train_set.labels, TrainConfig(epochs=15, batch_size=32, learning_rate=0.05, seed=0))
    return net
