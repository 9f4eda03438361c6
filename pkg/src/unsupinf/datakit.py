"""Datasets: the container type, file formats, synthetic clusters and outliers.

File formats
------------
CSV
    Header ``x0,...,x{d-1}[,label][,is_extra]`` followed by one row per
    sample.  Floats are written with ``repr`` so they round-trip exactly.
IDX images
    Big-endian: magic ``0x00000803``, then ``n, rows, cols`` as u32, then
    ``n*rows*cols`` unsigned bytes in row-major order.  Pixels are scaled
    to ``[0, 1]``.
Raw tensor
    16 bytes of header (``b"INFL"``, u32 ``n``, u32 ``d``, little-endian,
    4 reserved zero bytes) followed by ``n*d`` little-endian float32.
"""

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import rng
from .errors import DataLengthError, FormatError, ParseError, ValidationError

__all__ = [
    "Dataset",
    "ClusterSpec",
    "six_cluster_spec",
    "circle_centers",
    "generate_clusters",
    "generate_uniform",
    "inject_outliers",
    "load_idx",
    "save_idx",
    "load_csv",
    "save_csv",
    "load_raw",
    "save_raw",
    "load_dataset",
]

IDX_IMAGE_MAGIC = 0x00000803
RAW_MAGIC = b"INFL"


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """N samples in R^d with optional labels and an outlier mask.

    Arrays are copied and made read-only on construction.
    """

    data: np.ndarray
    labels: Optional[np.ndarray] = None
    is_extra: Optional[np.ndarray] = None
    name: str = "dataset"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ValidationError(f"data must be 2-D, got shape {data.shape}")
        n, d = data.shape
        if n < 1 or d < 1:
            raise ValidationError(f"empty dataset (shape {data.shape})")
        if not np.all(np.isfinite(data)):
            raise ValidationError("data contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise ValidationError(f"labels must have shape ({n},), got {labels.shape}")
            if not np.issubdtype(labels.dtype, np.integer):
                if not np.all(labels == np.round(labels)):
                    raise ValidationError("labels must be integers")
            labels = labels.astype(np.int64)
            if labels.min() < 0:
                raise ValidationError("labels must be non-negative")
            object.__setattr__(self, "labels", _frozen(labels))
        if self.is_extra is not None:
            mask = np.asarray(self.is_extra, dtype=bool)
            if mask.shape != (n,):
                raise ValidationError(f"is_extra must have shape ({n},), got {mask.shape}")
            object.__setattr__(self, "is_extra", _frozen(mask))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.name == other.name
            and same(self.data, other.data)
            and same(self.labels, other.labels)
            and same(self.is_extra, other.is_extra)
        )

    __hash__ = None

    @property
    def n_clusters(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def subset(self, index, name=None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.data[index],
            None if self.labels is None else self.labels[index],
            None if self.is_extra is None else self.is_extra[index],
            name or self.name,
        )

    def without(self, i: int) -> "Dataset":
        """The dataset with row ``i`` removed."""
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return self.subset(np.flatnonzero(keep))

    def fingerprint(self) -> str:
        """Short content hash used to tie checkpoints to their training data."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.data).astype("<f8").tobytes())
        if self.labels is not None:
            h.update(self.labels.astype("<i8").tobytes())
        if self.is_extra is not None:
            h.update(self.is_extra.astype("u1").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ClusterSpec:
    sizes: Sequence[int]
    stds: Sequence[float]
    centers: Sequence[Sequence[float]]
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        stds = tuple(float(s) for s in self.stds)
        centers = tuple(tuple(float(c) for c in row) for row in self.centers)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "centers", centers)
        if not (len(sizes) == len(stds) == len(centers) >= 1):
            raise ValidationError("sizes, stds and centers must have the same non-zero length")
        if any(s < 1 for s in sizes):
            raise ValidationError("every cluster size must be >= 1")
        if any(not (s > 0 and np.isfinite(s)) for s in stds):
            raise ValidationError("every cluster std must be positive and finite")
        dims = {len(c) for c in centers}
        if len(dims) != 1 or dims == {0}:
            raise ValidationError("all centers must share one dimension >= 1")
        if not np.all(np.isfinite(np.array(centers))):
            raise ValidationError("centers must be finite")

    @property
    def d(self) -> int:
        return len(self.centers[0])


def circle_centers(k, radius=5.0):
    """``k`` points evenly spaced on a circle in the plane, starting on the x-axis."""
    angles = 2.0 * np.pi * np.arange(k) / k
    return [(radius * np.cos(a), radius * np.sin(a)) for a in angles]


def six_cluster_spec(seed=0, radius=5.0) -> ClusterSpec:
    """The six-cluster 2-D layout: sizes 25,15,20,25,10,5 and stds .5,.5,.4,.4,.5,1."""
    return ClusterSpec(
        sizes=[25, 15, 20, 25, 10, 5],
        stds=[0.5, 0.5, 0.4, 0.4, 0.5, 1.0],
        centers=circle_centers(6, radius),
        seed=seed,
    )


def generate_clusters(spec: ClusterSpec, name="clusters") -> Dataset:
    """Draw each cluster i.i.d. from a spherical Gaussian around its center.

    Cluster ``k`` uses its own stream ``(seed, "clusters", k)``.
    """
    blocks, labels = [], []
    for k, (size, std, center) in enumerate(zip(spec.sizes, spec.stds, spec.centers)):
        noise = rng.standard_normal(rng.stream(spec.seed, "clusters", k), (size, spec.d))
        blocks.append(np.asarray(center) + std * noise)
        labels.append(np.full(size, k, dtype=np.int64))
    return Dataset(np.vstack(blocks), np.concatenate(labels), name=name)


def generate_uniform(n, d, low, high, seed, name="uniform") -> Dataset:
    """``n`` points uniform on the box ``[low, high]^d``."""
    if n < 1 or d < 1 or not high > low:
        raise ValidationError("need n >= 1, d >= 1 and high > low")
    u = rng.uniform(rng.stream(seed, "uniform"), (n, d))
    return Dataset(low + (high - low) * u, name=name)


def inject_outliers(base: Dataset, extra: Optional[Dataset], seed, name=None) -> Dataset:
    """Concatenate ``extra`` onto ``base``, mark it, and shuffle the rows.

    Labels survive only when both inputs carry them.  With no extra rows
    the base is returned unshuffled with an all-false mask.
    """
    name = name or base.name
    if extra is None or extra.n == 0:
        return Dataset(base.data, base.labels, np.zeros(base.n, dtype=bool), name)
    if base.d != extra.d:
        raise ValidationError(f"dimension mismatch: base d={base.d}, extra d={extra.d}")
    data = np.vstack([base.data, extra.data])
    mask = np.concatenate([np.zeros(base.n, bool), np.ones(extra.n, bool)])
    labels = None
    if base.labels is not None and extra.labels is not None:
        labels = np.concatenate([base.labels, extra.labels])
    order = rng.shuffled_order(rng.stream(seed, "inject"), len(data))
    return Dataset(data[order], None if labels is None else labels[order], mask[order], name)


# --- IDX ---------------------------------------------------------------------


def load_idx(path, name=None) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataLengthError("file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"bad IDX image magic {magic:#010x} (expected {IDX_IMAGE_MAGIC:#010x})")
    if len(raw) < 16:
        raise DataLengthError("file too short for IDX image dimensions")
    n, rows, cols = struct.unpack(">III", raw[4:16])
    if n == 0 or rows == 0 or cols == 0:
        raise ValidationError(f"empty IDX dataset (dims {n}, {rows}, {cols})")
    expected = n * rows * cols
    payload = raw[16:]
    if len(payload) != expected:
        raise DataLengthError(f"IDX payload has {len(payload)} bytes, header announces {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    return Dataset(pixels / 255.0, name=name or Path(path).stem)


def save_idx(images, path):
    """Write an ``(n, rows, cols)`` uint8 array as an IDX image file."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValidationError("images must be a uint8 array of shape (n, rows, cols)")
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(images).tobytes())


# --- CSV ---------------------------------------------------------------------


def save_csv(dataset: Dataset, path):
    header = [f"x{j}" for j in range(dataset.d)]
    if dataset.labels is not None:
        header.append("label")
    if dataset.is_extra is not None:
        header.append("is_extra")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.data[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            if dataset.is_extra is not None:
                row.append("1" if dataset.is_extra[i] else "0")
            w.writerow(row)


def load_csv(path, header=True, name=None) -> Dataset:
    """Read a dataset CSV.

    With ``header=False`` every column is a feature.  Parse errors name the
    1-based data row.
    """
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    label_col = extra_col = None
    if header:
        if not rows:
            raise ParseError("missing header row")
        cols = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if "label" in cols:
            label_col = cols.index("label")
        if "is_extra" in cols:
            extra_col = cols.index("is_extra")
        width = len(cols)
    else:
        width = len(rows[0]) if rows else 0
    if not rows:
        raise ValidationError("CSV contains no data rows")
    feat_cols = [j for j in range(width) if j not in (label_col, extra_col)]
    data = np.empty((len(rows), len(feat_cols)))
    labels = np.empty(len(rows), dtype=np.int64) if label_col is not None else None
    extra = np.empty(len(rows), dtype=bool) if extra_col is not None else None
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", row=r)
        try:
            data[r - 1] = [float(row[j]) for j in feat_cols]
            if labels is not None:
                labels[r - 1] = int(row[label_col])
            if extra is not None:
                extra[r - 1] = _parse_bool(row[extra_col])
        except ValueError as e:
            raise ParseError(f"non-numeric cell ({e})", row=r) from None
    return Dataset(data, labels, extra, name=name or Path(path).stem)


def _parse_bool(cell):
    c = cell.strip().lower()
    if c in ("1", "true"):
        return True
    if c in ("0", "false"):
        return False
    raise ValueError(f"not a boolean: {cell!r}")


# --- raw tensor --------------------------------------------------------------


def save_raw(dataset: Dataset, path):
    header = RAW_MAGIC + struct.pack("<II", dataset.n, dataset.d) + b"\0" * 4
    Path(path).write_bytes(header + dataset.data.astype("<f4").tobytes())


def load_raw(path, name=None) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DataLengthError("file too short for a raw tensor header")
    if raw[:4] != RAW_MAGIC:
        raise FormatError(f"bad raw tensor magic {raw[:4]!r}")
    n, d = struct.unpack("<II", raw[4:12])
    if n == 0 or d == 0:
        raise ValidationError(f"empty raw tensor ({n} x {d})")
    if len(raw) - 16 != 4 * n * d:
        raise DataLengthError(f"raw payload has {len(raw) - 16} bytes, expected {4 * n * d}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, d)
    return Dataset(data.astype(np.float64), name=name or Path(path).stem)


def load_dataset(path) -> Dataset:
    """Dispatch on content: raw tensor, IDX images, otherwise CSV."""
    with open(path, "rb") as f:
        head = f.read(4)
    if head == RAW_MAGIC:
        return load_raw(path)
    if len(head) == 4 and struct.unpack(">I", head)[0] == IDX_IMAGE_MAGIC:
        return load_idx(path)
    return load_csv(path)
