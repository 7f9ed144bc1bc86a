"""IDX reading/writing, an offline synthetic digit set, and label permutation."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# IDX type byte -> big-endian numpy dtype
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt.newbyteorder("="): code for code, dt in _IDX_DTYPES.items()}


class IDXError(ValueError):
    pass


class BadMagicError(IDXError):
    pass


class TruncatedFileError(IDXError):
    pass


class CountMismatchError(IDXError):
    pass


@dataclass(eq=False)
class LabeledDataset:
    """``images`` (N, *input_shape) in [0, 1]; ``labels`` (N,) integers."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.images[index], self.labels[index])

    def reshape(self, input_shape) -> "LabeledDataset":
        return LabeledDataset(self.images.reshape((len(self),) + tuple(input_shape)), self.labels)


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX byte string into an array of its native type."""
    if len(data) < 4:
        raise TruncatedFileError(f"IDX header needs 4 bytes, file has {len(data)}")
    zero, code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or code not in _IDX_DTYPES:
        raise BadMagicError(f"bad IDX magic 0x{int.from_bytes(data[:4], 'big'):08x}")
    head = 4 + 4 * ndim
    if len(data) < head:
        raise TruncatedFileError("IDX dimension header is truncated")
    dims = struct.unpack(f">{ndim}I", data[4:head])
    dtype = _IDX_DTYPES[code]
    expected = head + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) < expected:
        raise TruncatedFileError(f"IDX body truncated: expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise IDXError(f"{len(data) - expected} trailing bytes after IDX body")
    arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)), offset=head)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def read_idx(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes())


def idx_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    dtype = arr.dtype.newbyteorder("=")
    if dtype not in _IDX_CODES:
        raise IDXError(f"dtype {arr.dtype} has no IDX type code")
    code = _IDX_CODES[dtype]
    header = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.astype(_IDX_DTYPES[code]).tobytes()


def write_idx(path, arr) -> None:
    Path(path).write_bytes(idx_bytes(arr))


def _magic(data: bytes) -> int:
    return int.from_bytes(data[:4], "big") if len(data) >= 4 else -1


def load_idx_images(path) -> np.ndarray:
    """Image file only (magic 0x803), scaled to [0, 1]."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    if _magic(data) != IMAGES_MAGIC:
        raise BadMagicError(f"{path}: expected image magic 0x{IMAGES_MAGIC:08x}, got 0x{_magic(data):08x}")
    return parse_idx(data).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    if _magic(data) != LABELS_MAGIC:
        raise BadMagicError(f"{path}: expected label magic 0x{LABELS_MAGIC:08x}, got 0x{_magic(data):08x}")
    return parse_idx(data).astype(np.int64)


def load_idx(images_path, labels_path) -> LabeledDataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    return LabeledDataset(images, labels)


def save_idx(ds: LabeledDataset, images_path, labels_path) -> None:
    """Write a dataset as an MNIST-style IDX pair (pixels quantized to 0..255)."""
    if ds.images.ndim != 3:
        raise IDXError(f"IDX image files hold (N, rows, cols) arrays, got {ds.images.shape}")
    pixels = np.floor(ds.images * 255.0 + 0.5).astype(np.uint8)
    write_idx(images_path, pixels)
    write_idx(labels_path, ds.labels.astype(np.uint8))


def export_labels_csv(path, ds: LabeledDataset, permuted: LabeledDataset | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"] + (["permuted_label"] if permuted is not None else []))
        for i, lab in enumerate(ds.labels):
            row = [i, int(lab)]
            if permuted is not None:
                row.append(int(permuted.labels[i]))
            w.writerow(row)


def permute_labels(ds: LabeledDataset, seed: int) -> LabeledDataset:
    """Same images, labels shuffled by a uniform random permutation."""
    rng = np.random.default_rng(seed)
    return LabeledDataset(ds.images, ds.labels[rng.permutation(len(ds))])


# --- synthetic digits ------------------------------------------------------------------

# Glyph strokes on a 16x16 canvas as polylines of (row, col) points.
_T, _M, _B = 2.5, 7.5, 12.5
_L, _R = 4.5, 10.5
_GLYPHS = {
    0: [[(_T, _L), (_T, _R), (_B, _R), (_B, _L), (_T, _L)]],
    1: [[(_T + 1.5, _M - 1.5), (_T, _M), (_B, _M)], [(_B, _M - 2), (_B, _M + 2)]],
    2: [[(_T, _L), (_T, _R), (_M, _R), (_M, _L), (_B, _L), (_B, _R)]],
    3: [[(_T, _L), (_T, _R), (_B, _R), (_B, _L)], [(_M, _L + 1.5), (_M, _R)]],
    4: [[(_T, _L), (_M, _L), (_M, _R)], [(_T, _R - 1), (_B, _R - 1)]],
    5: [[(_T, _R), (_T, _L), (_M, _L), (_M, _R), (_B, _R), (_B, _L)]],
    6: [[(_T, _R), (_T, _L), (_B, _L), (_B, _R), (_M, _R), (_M, _L)]],
    7: [[(_T, _L), (_T, _R), (_B, _M - 1)]],
    8: [[(_T, _L), (_T, _R), (_B, _R), (_B, _L), (_T, _L)], [(_M, _L), (_M, _R)]],
    9: [[(_M, _R), (_M, _L), (_T, _L), (_T, _R), (_B, _R), (_B, _L)]],
}


def _segment_distance(points, a, b):
    ab = b - a
    t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def _render_glyph(label, rng, size=16):
    rows, cols = np.mgrid[0:size, 0:size]
    pix = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    center = np.array([(size - 1) / 2, (size - 1) / 2])
    angle = rng.uniform(-0.2, 0.2)
    scale = rng.uniform(0.85, 1.1)
    shift = rng.uniform(-1.2, 1.2, size=2)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    width = rng.uniform(0.5, 0.9)
    dist = np.full(len(pix), np.inf)
    for stroke in _GLYPHS[label]:
        pts = (np.asarray(stroke) - center) @ rot.T * scale + center + shift
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(pix, a, b))
    ink = np.clip(1.0 - (dist - width) / 0.8, 0.0, 1.0)
    ink *= rng.uniform(0.7, 1.0)
    noise = rng.normal(0.0, 0.08, size=ink.shape)
    ink = np.where(ink > 0, np.clip(ink + noise, 0.0, 1.0), 0.0)
    return ink.reshape(size, size)


def synthetic_digits(n: int, seed: int) -> LabeledDataset:
    """``n`` procedurally drawn 16x16 digit glyphs, labels cycling 0..9."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    images = np.stack([_render_glyph(int(lab), rng) for lab in labels])
    return LabeledDataset(images, labels)
