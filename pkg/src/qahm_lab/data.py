"""Datasets: MNIST IDX parsing and preprocessing, bars-and-stripes, and
ground-truth samples from Ising models.

IDX layout (big-endian): a 32-bit magic number (2051 for images, 2049 for
labels), one 32-bit size per dimension, then row-major unsigned bytes.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import textio
from .ising import IsingModel, MAX_ENUMERATION_SPINS, ModelSizeError
from .samplers import SampleRequest, sample_exact

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
N_PIXELS = 256
N_CLASSES = 10


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(buf: bytes, magic: int) -> np.ndarray:
    if len(buf) < 4:
        raise IdxTruncatedError("file too short for an IDX header")
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise IdxMagicError(f"bad magic number {got}, expected {magic}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise IdxTruncatedError("file too short for its dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    size = int(np.prod(dims))
    if len(buf) - head < size:
        raise IdxTruncatedError(f"payload has {len(buf) - head} bytes, header promises {size}")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=head).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> Path:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    head = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(head + array.tobytes())
    return path


@dataclass(frozen=True)
class RawMnist:
    images: np.ndarray  # (N, rows, cols) uint8
    labels: np.ndarray  # (N,) uint8

    def __len__(self):
        return len(self.labels)

    def head(self, n: int) -> "RawMnist":
        return RawMnist(self.images[:n], self.labels[:n])


def load_mnist_idx(images_path, labels_path) -> RawMnist:
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC)
    if len(images) != len(labels):
        raise IdxCountMismatchError(f"{len(images)} images but {len(labels)} labels")
    return RawMnist(images, labels)


@dataclass(frozen=True)
class Dataset:
    """Rows of visible vectors.

    The first ``n_continuous`` columns are continuous in [-1, +1]; the rest
    are binary in {0, 1}, or in {-1, +1} when ``spin`` is set.
    """

    items: np.ndarray
    labels: np.ndarray | None = None
    n_continuous: int = 0
    spin: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        items = np.array(self.items, dtype=float)
        if items.ndim != 2:
            raise ValueError("dataset items must form a 2-d array")
        object.__setattr__(self, "items", items)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        self.validate()

    def validate(self):
        cont = self.items[:, : self.n_continuous]
        disc = self.items[:, self.n_continuous :]
        if not (0 <= self.n_continuous <= self.items.shape[1]):
            raise ValueError("n_continuous outside the item dimension")
        if cont.size and not (np.all(np.isfinite(cont)) and cont.min() >= -1 and cont.max() <= 1):
            raise ValueError("continuous entries must lie in [-1, +1]")
        allowed = (-1.0, 1.0) if self.spin else (0.0, 1.0)
        if disc.size and not np.all(np.isin(disc, allowed)):
            raise ValueError(f"discrete entries must be in {allowed}")
        if self.labels is not None and len(self.labels) != len(self.items):
            raise ValueError("labels and items differ in length")

    def __len__(self):
        return len(self.items)

    @property
    def dim(self) -> int:
        return self.items.shape[1]

    def subset(self, index) -> "Dataset":
        labels = None if self.labels is None else self.labels[index]
        return Dataset(self.items[index], labels, self.n_continuous, self.spin, dict(self.metadata))

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))

    def to_text(self) -> str:
        scalars = {"n_continuous": self.n_continuous, "spin": self.spin}
        scalars.update({f"meta.{k}": v for k, v in self.metadata.items()})
        arrays = {"items": self.items}
        if self.labels is not None:
            arrays["labels"] = self.labels
        return textio.dumps_bundle("dataset", scalars, arrays)

    @classmethod
    def from_text(cls, text: str) -> "Dataset":
        _, scalars, arrays = textio.loads_bundle(text, "dataset")
        meta = {k[5:]: v for k, v in scalars.items() if k.startswith("meta.")}
        return cls(arrays["items"].astype(float), arrays.get("labels"), int(scalars["n_continuous"]),
                   bool(scalars["spin"]), meta)


def resize_bilinear(image: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment.

    Output pixel (i, j) samples the input at
    y = (i + 0.5) * rows / out_rows - 0.5, x = (j + 0.5) * cols / out_cols - 0.5,
    clamped to the image, interpolating the four surrounding input pixels.
    """
    image = np.asarray(image, dtype=float)
    rows, cols = image.shape

    def axis(n_in, n_out):
        pos = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(rows, out_rows)
    x0, x1, fx = axis(cols, out_cols)
    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bottom = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bottom * fy[:, None]


def rescale_pixels(x) -> np.ndarray:
    """Map byte intensities {0..255} onto [-1, +1] via x -> 2x/255 - 1."""
    return 2.0 * np.asarray(x, dtype=float) / 255.0 - 1.0


def preprocess_mnist(raw: RawMnist, side: int = 16) -> Dataset:
    """16x16 continuous pixels in [-1, +1] followed by a one-hot class block.

    The resampled intensity is rounded half-to-even to a whole byte before
    rescaling, so every output value lies on the 256-level grid.
    """
    if raw.images.dtype != np.uint8:
        raise ValueError("preprocess_mnist expects raw byte images")
    n = len(raw)
    items = np.zeros((n, side * side + N_CLASSES))
    for k in range(n):
        small = np.rint(resize_bilinear(raw.images[k], side, side))
        items[k, : side * side] = rescale_pixels(small).ravel()
    items[np.arange(n), side * side + raw.labels.astype(int)] = 1.0
    return Dataset(items, raw.labels.astype(np.int64), side * side, False,
                   {"provenance": "mnist-idx", "preprocessed": True})


def bars_and_stripes(rows: int, cols: int) -> Dataset:
    """All bar and stripe images, duplicates removed, in a fixed order.

    Row patterns come first (row r is on when bit r of the pattern index is
    set), then column patterns; the first occurrence of a duplicate is kept.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    images = []
    for pattern in range(2**rows):
        on = (pattern >> np.arange(rows)) & 1
        images.append(np.repeat(on[:, None], cols, axis=1).ravel())
    for pattern in range(2**cols):
        on = (pattern >> np.arange(cols)) & 1
        images.append(np.repeat(on[None, :], rows, axis=0).ravel())
    seen, unique = set(), []
    for img in images:
        key = img.tobytes()
        if key not in seen:
            seen.add(key)
            unique.append(img)
    return Dataset(np.array(unique, dtype=float), metadata={"provenance": f"bars-and-stripes-{rows}x{cols}"})


def sample_ground_truth(model: IsingModel, beta: float, n: int, seed: int) -> Dataset:
    """Exact i.i.d. spin samples of ``model`` in a seeded random order."""
    if model.n > MAX_ENUMERATION_SPINS:
        raise ModelSizeError(f"{model.n} spins exceeds the exact-enumeration cap")
    ss = sample_exact(SampleRequest(model, beta, n, seed=seed))
    items = ss.to_array()
    np.random.default_rng([seed, 3]).shuffle(items)
    return Dataset(items, spin=True, metadata={"provenance": "ground-truth", "beta": float(beta), "seed": int(seed)})


def grid_line_edges(rows: int, cols: int) -> np.ndarray:
    """Pixel pairs sharing a row or a column of a ``rows x cols`` image.

    Pixels are numbered row-major. This is the natural sparse coupling graph
    for bars-and-stripes data.
    """
    n = rows * cols
    return np.array([(a, b) for a in range(n) for b in range(a + 1, n)
                     if a // cols == b // cols or a % cols == b % cols], dtype=np.int64).reshape(-1, 2)


def sample_bars_and_stripes(rows: int, cols: int, n: int, seed: int) -> Dataset:
    """``n`` i.i.d. draws, uniform over the distinct bar and stripe patterns."""
    patterns = bars_and_stripes(rows, cols).items
    idx = np.random.default_rng(seed).integers(len(patterns), size=n)
    return Dataset(patterns[idx], metadata={"provenance": f"bars-and-stripes-{rows}x{cols}-draws", "seed": int(seed)})
