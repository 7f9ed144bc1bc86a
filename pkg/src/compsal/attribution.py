"""Per-logit saliency maps and competition among labels.

A :class:`MapStack` holds one map per output node for a single input. The
competition rule keeps an element of the chosen node's map only when that node
casts the most extreme vote of its sign: the largest score when positive, the
smallest when negative. Ties go to the chosen node. Everything else is zeroed.
"""
from __future__ import annotations

import csv
import enum
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .nn import Network, forward, logit_gradients, trace_forward


class Method(str, enum.Enum):
    GRAD_INPUT = "gradinput"
    CGI = "cgi"
    LRP = "lrp"
    CLRP = "clrp"


_METHOD_TAGS = {Method.GRAD_INPUT: 0, Method.CGI: 1, Method.LRP: 2, Method.CLRP: 3}
_TAG_METHODS = {v: k for k, v in _METHOD_TAGS.items()}

DEFAULT_EPSILON = 1e-6


@dataclass(eq=False)
class SaliencyMap:
    scores: np.ndarray
    method: Method
    node: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.method = Method(self.method)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("saliency scores must be finite")


@dataclass(eq=False)
class MapStack:
    """``scores[i]`` is the map explaining output node ``i``; ``chosen`` competes."""

    scores: np.ndarray
    method: Method
    chosen: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.method = Method(self.method)
        if self.scores.ndim < 2:
            raise ValueError("a map stack needs shape (C, *input_shape)")
        if not 0 <= self.chosen < len(self.scores):
            raise ValueError(f"chosen node {self.chosen} outside [0, {len(self.scores)})")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("saliency scores must be finite")

    def __len__(self):
        return len(self.scores)

    @property
    def maps(self) -> List[SaliencyMap]:
        return [SaliencyMap(s, self.method, i) for i, s in enumerate(self.scores)]

    def with_chosen(self, chosen: int) -> "MapStack":
        return MapStack(self.scores, self.method, chosen)


def competition_mask(scores: np.ndarray, chosen: int) -> np.ndarray:
    """Boolean mask of elements the chosen row wins (shape of one row)."""
    s = scores[chosen]
    if len(scores) == 1:
        return s != 0
    others = np.delete(scores, chosen, axis=0)
    win_pos = (s > 0) & (s >= others.max(axis=0))
    win_neg = (s < 0) & (s <= others.min(axis=0))
    return win_pos | win_neg


def compete(scores: np.ndarray, chosen: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    s = scores[chosen]
    return np.where(competition_mask(scores, chosen), s, 0.0)


def cgi(stack: MapStack) -> SaliencyMap:
    """Competitive Gradient * Input.

    Accepts LRP stacks too (the rule does not care where the votes came
    from); the result is then labelled CLRP.
    """
    if stack.method not in (Method.GRAD_INPUT, Method.LRP):
        raise ValueError(f"competition needs raw per-node maps, got {stack.method.value}")
    out = Method.CGI if stack.method is Method.GRAD_INPUT else Method.CLRP
    return SaliencyMap(compete(stack.scores, stack.chosen), out, stack.chosen)


def clrp(stack: MapStack) -> SaliencyMap:
    """Competitive LRP: the same selection rule applied to LRP relevances."""
    if stack.method is not Method.LRP:
        raise ValueError(f"clrp expects an LRP stack, got {stack.method.value}")
    return SaliencyMap(compete(stack.scores, stack.chosen), Method.CLRP, stack.chosen)


def _default_chosen(net, x, chosen):
    if chosen is None:
        return int(np.argmax(forward(net, x)))
    return int(chosen)


def grad_input_stack(net: Network, x, chosen: Optional[int] = None) -> MapStack:
    """Gradient * Input for every logit. ``chosen`` defaults to the predicted label."""
    x = np.asarray(x, dtype=np.float64)
    maps = logit_gradients(net, x) * x[None]
    return MapStack(maps, Method.GRAD_INPUT, _default_chosen(net, x, chosen))


def _sign_nonneg(z):
    return np.where(z >= 0, 1.0, -1.0)


def lrp_relevances(net: Network, x, epsilon: float = DEFAULT_EPSILON) -> List[np.ndarray]:
    """Relevance at the input of every layer, for all C output nodes at once.

    Returns ``R`` with ``R[i]`` of shape (C, *layer_i_input_shape), plus the
    output relevance ``R[-1]`` (the diagonal of logits). Epsilon rule: the
    stabilizer is ``epsilon * sign(z)`` with sign(0) taken as +1; bias shares
    are absorbed.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    trace = trace_forward(net, x)
    logits = trace.outputs[-1][0]
    R = np.diag(logits)
    out = [R]
    for layer, a_in, z in zip(reversed(net.layers), reversed(trace.inputs), reversed(trace.outputs)):
        if layer.has_params:
            s = R / (z + epsilon * _sign_nonneg(z))
            R = a_in * layer.backward(a_in, s)
        elif layer.kind == "flatten":
            R = layer.backward(a_in, R)
        # ReLU: relevance passes through unchanged
        out.append(R)
    out.reverse()
    return out


def lrp_stack(net: Network, x, epsilon: float = DEFAULT_EPSILON, chosen: Optional[int] = None) -> MapStack:
    x = np.asarray(x, dtype=np.float64)
    R = lrp_relevances(net, x, epsilon)[0]
    return MapStack(R, Method.LRP, _default_chosen(net, x, chosen))


def attribute(net: Network, x, method, chosen: Optional[int] = None,
              epsilon: float = DEFAULT_EPSILON) -> SaliencyMap:
    """One saliency map for ``x`` by name: gradinput, cgi, lrp or clrp."""
    method = Method(method)
    if method in (Method.GRAD_INPUT, Method.CGI):
        stack = grad_input_stack(net, x, chosen)
    else:
        stack = lrp_stack(net, x, epsilon, chosen)
    if method in (Method.CGI, Method.CLRP):
        return cgi(stack)
    return SaliencyMap(stack.scores[stack.chosen], method, stack.chosen)


# --- completeness ----------------------------------------------------------------------

@dataclass
class CompletenessReport:
    logits: np.ndarray
    score_sums: np.ndarray
    residuals: np.ndarray
    slope: float
    intercept: float
    pearson_r: float
    degenerate: bool

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "logit", "score_sum", "residual"])
        for i, (lg, ss, rr) in enumerate(zip(self.logits, self.score_sums, self.residuals)):
            w.writerow([i, repr(float(lg)), repr(float(ss)), repr(float(rr))])
        w.writerow([])
        w.writerow(["slope", "intercept", "pearson_r", "degenerate"])
        w.writerow([repr(self.slope), repr(self.intercept), repr(self.pearson_r), int(self.degenerate)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def completeness_report(net: Network, x, stack: MapStack) -> CompletenessReport:
    """Compare each node's map total with its logit and fit total ~ slope*logit + intercept.

    With fewer than two nodes, or constant logits, the fit is undefined: slope,
    intercept and r are NaN and ``degenerate`` is set.
    """
    logits = forward(net, x)
    sums = stack.scores.reshape(len(stack), -1).sum(axis=1)
    if len(sums) != len(logits):
        raise ValueError(f"stack has {len(sums)} maps but net has {len(logits)} logits")
    residuals = logits - sums
    nan = float("nan")
    if len(logits) < 2 or np.ptp(logits) == 0:
        return CompletenessReport(logits, sums, residuals, nan, nan, nan, True)
    slope, intercept = np.polyfit(logits, sums, 1)
    r = nan if np.ptp(sums) == 0 else float(np.corrcoef(logits, sums)[0, 1])
    return CompletenessReport(logits, sums, residuals, float(slope), float(intercept), r, False)


def sparsity_diagnostic(stack: MapStack, mass: float = 0.9) -> dict:
    """How concentrated each map is, and how much the concentrated sets overlap.

    ``rho[i]`` is the smallest fraction of elements carrying ``mass`` of map
    i's absolute score. ``overlap`` is the mean, over node pairs, of the
    fraction of elements that lie in both nodes' concentrated sets.
    """
    flat = np.abs(stack.scores.reshape(len(stack), -1))
    d = flat.shape[1]
    rho = np.zeros(len(flat))
    top = np.zeros_like(flat, dtype=bool)
    for i, row in enumerate(flat):
        total = row.sum()
        if total == 0:
            continue
        order = np.argsort(-row, kind="stable")
        k = int(np.searchsorted(np.cumsum(row[order]), mass * total) + 1)
        k = min(k, d)
        rho[i] = k / d
        top[i, order[:k]] = True
    pairs = [(i, j) for i in range(len(flat)) for j in range(i + 1, len(flat))]
    overlap = float(np.mean([np.mean(top[i] & top[j]) for i, j in pairs])) if pairs else math.nan
    return {"rho": rho, "overlap": overlap}


# --- binary map files ------------------------------------------------------------------
# b"SFM1", u32 method tag, i32 node, u32 ndim, u32 dims[ndim], f64 scores (all little-endian)
# b"SFS1", u32 method tag, u32 chosen, u32 ndim, u32 dims[ndim] (dims[0] == C), f64 scores

def map_to_bytes(m: SaliencyMap) -> bytes:
    head = b"SFM1" + struct.pack("<Ii", _METHOD_TAGS[m.method], m.node)
    head += struct.pack(f"<I{m.scores.ndim}I", m.scores.ndim, *m.scores.shape)
    return head + np.ascontiguousarray(m.scores, dtype="<f8").tobytes()


def stack_to_bytes(st: MapStack) -> bytes:
    head = b"SFS1" + struct.pack("<II", _METHOD_TAGS[st.method], st.chosen)
    head += struct.pack(f"<I{st.scores.ndim}I", st.scores.ndim, *st.scores.shape)
    return head + np.ascontiguousarray(st.scores, dtype="<f8").tobytes()


def _read_body(data, pos):
    if len(data) < pos + 4:
        raise ValueError("truncated map file")
    (ndim,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + 4 * ndim:
        raise ValueError("truncated map file")
    shape = struct.unpack_from(f"<{ndim}I", data, pos)
    pos += 4 * ndim
    n = int(np.prod(shape))
    if len(data) != pos + 8 * n:
        raise ValueError(f"map body size mismatch: expected {8 * n} bytes, got {len(data) - pos}")
    return np.frombuffer(data, dtype="<f8", offset=pos).reshape(shape).astype(np.float64)


def map_from_bytes(data: bytes) -> SaliencyMap:
    if data[:4] != b"SFM1":
        raise ValueError("not an SFM1 map file")
    tag, node = struct.unpack_from("<Ii", data, 4)
    return SaliencyMap(_read_body(data, 12), _TAG_METHODS[tag], node)


def stack_from_bytes(data: bytes) -> MapStack:
    if data[:4] != b"SFS1":
        raise ValueError("not an SFS1 stack file")
    tag, chosen = struct.unpack_from("<II", data, 4)
    return MapStack(_read_body(data, 12), _TAG_METHODS[tag], chosen)


def save_map(m: SaliencyMap, path) -> None:
    Path(path).write_bytes(map_to_bytes(m))


def load_map(path) -> SaliencyMap:
    return map_from_bytes(Path(path).read_bytes())
