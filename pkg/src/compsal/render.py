"""Heatmaps as binary PPM/PGM and the theory curves as a small SVG."""
from __future__ import annotations

import enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .attribution import SaliencyMap


class Style(str, enum.Enum):
    DIVERGING = "diverging"
    ABSOLUTE = "absolute"


def to_image_plane(scores: np.ndarray) -> np.ndarray:
    """Reduce a map to 2-D: channels (C, H, W) are summed, vectors become one row."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        return scores[None, :]
    if scores.ndim == 2:
        return scores
    if scores.ndim == 3:
        return scores.sum(axis=0)
    raise ValueError(f"cannot render a map of shape {scores.shape}")


def _shade(frac):
    # round half up, identical on every platform
    return np.floor(255.0 * frac + 0.5).astype(np.int64)


def diverging_rgb(plane: np.ndarray) -> np.ndarray:
    """Positive scores fade white -> red, negative white -> blue, by ``max |score|``."""
    m = np.abs(plane).max() if plane.size else 0.0
    rgb = np.full(plane.shape + (3,), 255, dtype=np.uint8)
    if m == 0:
        return rgb
    fade = (255 - _shade(np.abs(plane) / m)).astype(np.uint8)
    pos, neg = plane > 0, plane < 0
    rgb[pos, 1] = fade[pos]
    rgb[pos, 2] = fade[pos]
    rgb[neg, 0] = fade[neg]
    rgb[neg, 1] = fade[neg]
    return rgb


def absolute_gray(plane: np.ndarray) -> np.ndarray:
    """``|score|`` as darkness on white: zero is white, the maximum is black."""
    m = np.abs(plane).max() if plane.size else 0.0
    if m == 0:
        return np.full(plane.shape, 255, dtype=np.uint8)
    return (255 - _shade(np.abs(plane) / m)).astype(np.uint8)


def heatmap_bytes(m, style=Style.DIVERGING) -> bytes:
    scores = getattr(m, "scores", m)
    plane = to_image_plane(scores)
    if not np.all(np.isfinite(plane)):
        raise ValueError("cannot render non-finite scores")
    h, w = plane.shape
    if Style(style) is Style.DIVERGING:
        return f"P6\n{w} {h}\n255\n".encode() + diverging_rgb(plane).tobytes()
    return f"P5\n{w} {h}\n255\n".encode() + absolute_gray(plane).tobytes()


def render_heatmap(m: SaliencyMap, style, path) -> Path:
    """Write a PPM (diverging) or PGM (absolute) file and return its path."""
    path = Path(path)
    data = heatmap_bytes(m, style)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc
    return path


def read_pnm(path):
    """Minimal reader for the P5/P6 files written above."""
    data = Path(path).read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    if magic == b"P6":
        return np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3)
    if magic == b"P5":
        return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)
    raise ValueError(f"unsupported PNM magic {magic!r}")


def theory_svg(results: Sequence, width: int = 480, height: int = 320) -> str:
    """c1 and c2 against delta with +-1 stderr bars."""
    deltas = [r.config.delta for r in results]
    series = {"c1": [r.c1 for r in results], "c2": [r.c2 for r in results]}
    colors = {"c1": "#c0392b", "c2": "#2c7fb8"}
    pad = 48
    lo = min(0.0, min(m - s for v in series.values() for m, s in v))
    hi = max(m + s for v in series.values() for m, s in v) * 1.1 or 1.0
    x0, x1 = min(deltas), max(deltas)
    span = (x1 - x0) or 1.0

    def px(d):
        return pad + (d - x0) / span * (width - 2 * pad)

    def py(v):
        return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{py(lo):.2f}" x2="{width - pad}" y2="{py(lo):.2f}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle">delta</text>']
    for d in deltas:
        out.append(f'<text x="{px(d):.2f}" y="{height - pad + 16}" font-size="10" '
                   f'text-anchor="middle">{d:g}</text>')
    for name, vals in series.items():
        pts = " ".join(f"{px(d):.2f},{py(m):.2f}" for d, (m, _) in zip(deltas, vals))
        out.append(f'<polyline fill="none" stroke="{colors[name]}" points="{pts}"/>')
        for d, (m, s) in zip(deltas, vals):
            out.append(f'<line x1="{px(d):.2f}" y1="{py(m - s):.2f}" x2="{px(d):.2f}" '
                       f'y2="{py(m + s):.2f}" stroke="{colors[name]}"/>')
        last = vals[-1][0]
        out.append(f'<text x="{px(deltas[-1]) + 4:.2f}" y="{py(last):.2f}" font-size="11" '
                   f'fill="{colors[name]}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
