"""Binary container for networks (``.sfn``).

Layout, all integers little-endian u32, all reals little-endian f64::

    b"SFN1"
    u32 input_ndim, u32 input_dims[input_ndim]
    u32 layer_count
    per layer:
        u32 kind_tag          (0 dense, 1 conv2d, 2 relu, 3 flatten)
        dense / conv2d only:
            u32 bias_enabled  (0 or 1)
            u32 weight_ndim, u32 weight_dims[weight_ndim]
            f64 weights[prod(weight_dims)]   row-major
            f64 bias[weight_dims[0]]

The version lives in the magic; a layout change gets a new magic.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .nn import Conv2D, Dense, Flatten, Network, ReLU

MAGIC = b"SFN1"
_TAGS = {"dense": 0, "conv2d": 1, "relu": 2, "flatten": 3}


class FormatError(ValueError):
    pass


def _u32(buf, *vals):
    buf.write(struct.pack(f"<{len(vals)}I", *vals))


def network_to_bytes(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    _u32(buf, len(net.input_shape), *net.input_shape)
    _u32(buf, len(net.layers))
    for layer in net.layers:
        _u32(buf, _TAGS[layer.kind])
        if layer.has_params:
            weight, bias = layer.params()
            _u32(buf, int(layer.bias_enabled), weight.ndim, *weight.shape)
            buf.write(np.ascontiguousarray(weight, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated network file at byte {self.pos} (need {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32s(self, count):
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def f64s(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def network_from_bytes(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not an SFN1 network file (bad magic)")
    (ndim,) = r.u32s(1)
    input_shape = r.u32s(ndim)
    (count,) = r.u32s(1)
    layers = []
    for _ in range(count):
        (tag,) = r.u32s(1)
        if tag in (0, 1):
            bias_enabled, wdim = r.u32s(2)
            wshape = r.u32s(wdim)
            weight = r.f64s(int(np.prod(wshape))).reshape(wshape)
            bias = r.f64s(wshape[0])
            cls = Dense if tag == 0 else Conv2D
            layers.append(cls(weight, bias, bool(bias_enabled)))
        elif tag == 2:
            layers.append(ReLU())
        elif tag == 3:
            layers.append(Flatten())
        else:
            raise FormatError(f"unknown layer tag {tag}")
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last layer")
    return Network(layers, input_shape)


def save_network(net: Network, path) -> None:
    Path(path).write_bytes(network_to_bytes(net))


def load_network(path) -> Network:
    return network_from_bytes(Path(path).read_bytes())
