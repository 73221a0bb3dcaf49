"""Synthetic blob datasets with controlled covariate shift, plus file I/O.

File formats
------------
CSV: one sample per row, ``f1,...,fd,label``; an optional header row.
GILS binary (little-endian): ``b"GILS"``, u32 version (=1), u32 n, u32 d,
u32 k, then n records of (d x f32 features, u32 label).
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .errors import ConfigError, DataFormatError, ParseError, TruncatedDataError

SPLITS = ("train", "test_seen", "test_shifted")
# half-width (in standard deviations) of the declared box around the class means
BOX_HALF_WIDTH = 6.0
MAGIC = b"GILS"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    k: int
    domain_box: tuple[np.ndarray, np.ndarray]
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.domain_box)
        self.domain_box = (lo, hi)
        if self.X.ndim != 2 or self.X.shape[0] == 0:
            raise ConfigError("a dataset needs a non-empty 2-D sample matrix")
        if self.y.shape != (self.X.shape[0],):
            raise ConfigError(f"{self.X.shape[0]} samples but {self.y.size} labels")
        if self.k < 2:
            raise ConfigError(f"need k >= 2, got {self.k}")
        if self.y.min() < 0 or self.y.max() >= self.k:
            raise ConfigError(f"labels must lie in 0..{self.k - 1}")
        if lo.shape != (self.feature_dim,) or hi.shape != (self.feature_dim,):
            raise ConfigError("domain box does not match the feature dimension")
        if np.any(self.X < lo) or np.any(self.X > hi):
            raise ConfigError("samples fall outside the declared domain box")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> list[tuple[np.ndarray, int]]:
        return [(x, int(c)) for x, c in zip(self.X, self.y)]

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.domain_box[0], self.domain_box[1])

    def concat(self, other: "Dataset") -> "Dataset":
        lo = np.minimum(self.domain_box[0], other.domain_box[0])
        hi = np.maximum(self.domain_box[1], other.domain_box[1])
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]), max(self.k, other.k),
                       (lo, hi), self.split, {"concat": [self.provenance, other.provenance]})


def simplex_vertices(k: int, dim: int, edge: float = 1.0) -> np.ndarray:
    """k x dim matrix of regular-simplex vertices with pairwise distance ``edge``.

    Uses the Helmert basis of the sum-zero subspace, so the construction is
    exact and does not depend on an eigen/SVD sign convention.
    """
    if dim < k - 1:
        raise ConfigError(f"a {k}-class simplex needs feature_dim >= {k - 1}, got {dim}")
    helmert = np.zeros((k - 1, k))
    for j in range(1, k):
        helmert[j - 1, :j] = 1.0
        helmert[j - 1, j] = -j
        helmert[j - 1] /= np.sqrt(j * (j + 1))
    out = np.zeros((k, dim))
    out[:, : k - 1] = helmert.T * (edge / np.sqrt(2.0))
    return out


def _streams(seed):
    direction, samples = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(direction), np.random.default_rng(samples)


def _sample_blobs(means: np.ndarray, n_per_class: int, rng, split, provenance) -> Dataset:
    k, dim = means.shape
    y = np.repeat(np.arange(k), n_per_class)
    X = means[y] + rng.standard_normal((y.size, dim))
    lo = means.min(axis=0) - BOX_HALF_WIDTH
    hi = means.max(axis=0) + BOX_HALF_WIDTH
    return Dataset(np.clip(X, lo, hi), y, k, (lo, hi), split, provenance)


def gen_blobs(
    k: int,
    n_per_class: int,
    feature_dim: int,
    class_sep: float,
    seed: int | Sequence[int],
    split: str = "train",
) -> Dataset:
    """Unit-variance Gaussian blobs whose means sit on a regular simplex.

    ``class_sep`` is the distance between any two class means.
    """
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1")
    if class_sep < 0:
        raise ConfigError("class_sep must be >= 0")
    means = simplex_vertices(k, feature_dim, class_sep)
    _, rng = _streams(seed)
    prov = {"generator": "blobs", "k": k, "n_per_class": n_per_class, "feature_dim": feature_dim,
            "class_sep": class_sep, "seed": seed, "shift": [0.0] * feature_dim}
    return _sample_blobs(means, n_per_class, rng, split, prov)


def gen_shifted_test(base: Dataset, shift_magnitude: float, seed: int | Sequence[int]) -> Dataset:
    """Fresh draw from ``base``'s generator with every class mean translated.

    All means move by the same random unit direction times ``shift_magnitude``.
    With a zero shift the samples equal ``gen_blobs(..., seed=seed)`` exactly.
    """
    prov = dict(base.provenance)
    if prov.get("generator") != "blobs":
        raise ConfigError("gen_shifted_test needs a dataset produced by gen_blobs")
    if shift_magnitude < 0:
        raise ConfigError("shift_magnitude must be >= 0")
    dir_rng, rng = _streams(seed)
    u = dir_rng.standard_normal(prov["feature_dim"])
    u /= np.linalg.norm(u)
    shift = shift_magnitude * u
    means = simplex_vertices(prov["k"], prov["feature_dim"], prov["class_sep"]) + shift
    prov.update(seed=seed, shift=shift.tolist(), shift_magnitude=shift_magnitude)
    return _sample_blobs(means, prov["n_per_class"], rng, "test_shifted", prov)


@dataclass
class Benchmark:
    train: Dataset
    test_seen: Dataset
    test_shifted: Dataset


def blobs_benchmark(
    seed: int,
    k: int = 3,
    n_per_class: int = 10,
    feature_dim: int = 8,
    class_sep: float = 3.0,
    shift: float = 2.0,
    test_n_per_class: int = 200,
) -> Benchmark:
    """Few-sample training set with a seen test split and a mean-shifted test split."""
    train = gen_blobs(k, n_per_class, feature_dim, class_sep, [seed, 0])
    seen = gen_blobs(k, test_n_per_class, feature_dim, class_sep, [seed, 1], split="test_seen")
    template = gen_blobs(k, test_n_per_class, feature_dim, class_sep, [seed, 2])
    shifted = gen_shifted_test(template, shift, [seed, 2])
    return Benchmark(train, seen, shifted)


# --- CSV -------------------------------------------------------------------

def _looks_numeric(cells: list[str]) -> bool:
    try:
        for c in cells:
            float(c)
    except ValueError:
        return False
    return True


def _from_arrays(X, y, k, source, fmt, split) -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    box = (X.min(axis=0), X.max(axis=0))
    return Dataset(X, y, k, box, split, {"source": str(source), "format": fmt})


def load_csv(path, k: int | None = None, split: str = "train") -> Dataset:
    """Parse ``f1,...,fd,label`` rows. ``k`` defaults to max(label) + 1."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if lineno == 1 and not _looks_numeric(cells):
                continue
            if width is None:
                width = len(cells)
                if width < 2:
                    raise ParseError(f"line {lineno}: need at least one feature and a label")
            elif len(cells) != width:
                raise ParseError(f"line {lineno}: expected {width} fields, got {len(cells)}")
            try:
                feats = [float(c) for c in cells[:-1]]
                label_f = float(cells[-1])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if label_f != int(label_f) or label_f < 0:
                raise ParseError(f"line {lineno}: label {cells[-1]!r} is not a class index")
            if k is not None and label_f >= k:
                raise ParseError(f"line {lineno}: label {int(label_f)} >= k={k}")
            rows.append(feats)
            labels.append(int(label_f))
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    k = max(labels) + 1 if k is None else k
    return _from_arrays(rows, labels, max(k, 2), path, "csv", split)


def save_csv(ds: Dataset, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{i + 1}" for i in range(ds.feature_dim)] + ["label"])
    for x, c in zip(ds.X, ds.y):
        w.writerow([repr(float(v)) for v in x] + [int(c)])
    atomic_write_text(path, buf.getvalue())


# --- GILS binary -----------------------------------------------------------

def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("x", "<f4", (d,)), ("y", "<u4")])


def encode_tensor_bin(ds: Dataset) -> bytes:
    """Serialize to the GILS binary layout. Features are rounded to float32."""
    rec = np.empty(ds.n, dtype=_record_dtype(ds.feature_dim))
    rec["x"] = ds.X.astype("<f4")
    rec["y"] = ds.y.astype("<u4")
    return _HEADER.pack(MAGIC, VERSION, ds.n, ds.feature_dim, ds.k) + rec.tobytes()


def decode_tensor_bin(blob: bytes, source="<bytes>", split: str = "train") -> Dataset:
    if len(blob) < _HEADER.size:
        raise TruncatedDataError(_HEADER.size, len(blob))
    magic, version, n, d, k = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DataFormatError(f"{source}: unsupported version {version}")
    if d == 0:
        raise DataFormatError(f"{source}: zero feature dimension")
    dt = _record_dtype(d)
    expected = _HEADER.size + n * dt.itemsize
    if len(blob) < expected:
        raise TruncatedDataError(expected, len(blob))
    if len(blob) > expected:
        raise DataFormatError(f"{source}: {len(blob) - expected} trailing bytes after {n} records")
    rec = np.frombuffer(blob, dtype=dt, count=n, offset=_HEADER.size)
    if n and rec["y"].max() >= k:
        raise DataFormatError(f"{source}: label {int(rec['y'].max())} >= k={k}")
    return _from_arrays(rec["x"].astype(np.float64), rec["y"].astype(np.int64), k, source, "gils-bin", split)


def save_tensor_bin(ds: Dataset, path) -> None:
    atomic_write_bytes(path, encode_tensor_bin(ds))


def load_tensor_bin(path, split: str = "train") -> Dataset:
    return decode_tensor_bin(Path(path).read_bytes(), source=path, split=split)
