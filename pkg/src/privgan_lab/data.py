"""Dataset ingestion, toy mixtures, train/holdout splits, equal partitions, PCA.

File formats
------------
CSV: header line ``rows,cols,has_labels``; then one line per sample with
``cols`` decimal floats (label appended as a final integer column when
``has_labels`` is 1). UTF-8, LF line endings.

IDX: the standard big-endian format, magic 0x00000803 for image files and
0x00000801 for label files. Pixel bytes are rescaled to [−1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .numkit import ContractError, Rng, ShapeError, as_matrix

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class ParseError(ValueError):
    """Malformed input file; message carries the byte offset."""


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64 in [−1, 1]
    labels: np.ndarray | None  # (n,) int64 class indices, or None
    name: str = "dataset"

    def __post_init__(self):
        self.features = as_matrix(self.features)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if self.labels.shape[0] != self.features.shape[0]:
                raise ShapeError(
                    f"{self.labels.shape[0]} labels for {self.features.shape[0]} rows"
                )

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def num_classes(self) -> int:
        if self.labels is None:
            raise ContractError(f"dataset {self.name!r} has no labels")
        return int(self.labels.max()) + 1


def _rescale_to_unit(features: np.ndarray) -> np.ndarray:
    """Linearly map to [−1, 1] when any value falls outside; else verbatim."""
    lo, hi = features.min(), features.max()
    if lo >= -1.0 and hi <= 1.0:
        return features
    if hi == lo:
        return np.zeros_like(features)
    return (features - lo) / (hi - lo) * 2.0 - 1.0


def load_csv(path) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    lines = raw.split(b"\n")
    offset = 0
    header = lines[0].decode("utf-8", errors="replace")
    parts = header.split(",")
    if len(parts) != 3:
        raise ParseError(f"byte 0: header must be 'rows,cols,has_labels', got {header!r}")
    try:
        n_rows, n_cols, has_labels = (int(p) for p in parts)
    except ValueError:
        raise ParseError(f"byte 0: non-integer header field in {header!r}") from None
    if n_rows <= 0 or n_cols <= 0 or has_labels not in (0, 1):
        raise ParseError(f"byte 0: bad header values {header!r}")
    offset += len(lines[0]) + 1

    want = n_cols + has_labels
    features = np.empty((n_rows, n_cols))
    labels = np.empty(n_rows, dtype=np.int64) if has_labels else None
    body = [ln for ln in lines[1:] if ln]
    if len(body) != n_rows:
        raise ParseError(
            f"byte {offset}: header declares {n_rows} rows, file has {len(body)}"
        )
    for i, line in enumerate(lines[1:]):
        if not line:
            offset += 1
            continue
        fields = line.split(b",")
        if len(fields) != want:
            raise ParseError(f"byte {offset}: row has {len(fields)} fields, expected {want}")
        try:
            features[i] = [float(v) for v in fields[:n_cols]]
            if has_labels:
                labels[i] = int(fields[-1])
        except ValueError:
            raise ParseError(f"byte {offset}: unparseable numeric field") from None
        offset += len(line) + 1
    name = str(path).rsplit("/", 1)[-1].removesuffix(".csv")
    return Dataset(_rescale_to_unit(features), labels, name=name)


def save_csv(dataset: Dataset, path) -> None:
    """Inverse of load_csv; floats written with shortest round-trip repr."""
    has_labels = 1 if dataset.labels is not None else 0
    lines = [f"{dataset.n_rows},{dataset.dims},{has_labels}"]
    for i in range(dataset.n_rows):
        row = ",".join(repr(v) for v in dataset.features[i])
        if has_labels:
            row += f",{dataset.labels[i]}"
        lines.append(row)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _read_be32(buf: bytes, pos: int, path, what: str) -> int:
    if pos + 4 > len(buf):
        raise ParseError(f"byte {pos}: truncated {what} in {path}")
    return int.from_bytes(buf[pos : pos + 4], "big")


def load_idx(path_images, path_labels=None) -> Dataset:
    with open(path_images, "rb") as f:
        buf = f.read()
    magic = _read_be32(buf, 0, path_images, "magic")
    if magic != IDX_IMAGE_MAGIC:
        raise ParseError(f"byte 0: image magic {magic:#010x} != {IDX_IMAGE_MAGIC:#010x}")
    count = _read_be32(buf, 4, path_images, "count")
    rows = _read_be32(buf, 8, path_images, "rows")
    cols = _read_be32(buf, 12, path_images, "cols")
    expected = 16 + count * rows * cols
    if len(buf) != expected:
        raise ParseError(
            f"byte 16: body is {len(buf) - 16} bytes, header declares {expected - 16}"
        )
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    features = pixels.astype(np.float64) / 127.5 - 1.0

    labels = None
    if path_labels is not None:
        with open(path_labels, "rb") as f:
            lbuf = f.read()
        lmagic = _read_be32(lbuf, 0, path_labels, "magic")
        if lmagic != IDX_LABEL_MAGIC:
            raise ParseError(f"byte 0: label magic {lmagic:#010x} != {IDX_LABEL_MAGIC:#010x}")
        lcount = _read_be32(lbuf, 4, path_labels, "count")
        if len(lbuf) != 8 + lcount:
            raise ParseError(f"byte 8: label body is {len(lbuf) - 8} bytes, header declares {lcount}")
        if lcount != count:
            raise ParseError(f"byte 4: {lcount} labels for {count} images")
        labels = np.frombuffer(lbuf, dtype=np.uint8, offset=8).astype(np.int64)
    name = str(path_images).rsplit("/", 1)[-1]
    return Dataset(features, labels, name=name)


def load_digits() -> Dataset:
    """Bundled 8×8 grayscale digit set: 1797 rows, 64 dims, 10 classes."""
    ref = resources.files("privgan_lab").joinpath("datasets/digits8x8.csv")
    with resources.as_file(ref) as path:
        ds = load_csv(path)
    ds.name = "digits8x8"
    return ds


def make_mixture(rng: Rng, n: int, centers, sigma: float) -> Dataset:
    """Gaussian mixture around 2-D centers; labels are center indices."""
    if n <= 0:
        raise ContractError("n must be positive")
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    centers = as_matrix(centers)
    if centers.shape[0] == 0:
        raise ContractError("need at least one center")
    k = centers.shape[0]
    labels = np.arange(n, dtype=np.int64) % k
    noise = rng.normal(n, centers.shape[1]) * sigma
    features = centers[labels] + noise
    return Dataset(features, labels, name="mixture")


def ring_centers(k: int, radius: float = 1.0) -> np.ndarray:
    """k cluster centers evenly spaced on a circle."""
    angles = 2.0 * np.pi * np.arange(k) / k
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


# ---------------------------------------------------------------------------
# Splitting and partitioning
# ---------------------------------------------------------------------------


@dataclass
class SplitPlan:
    train_fraction: float
    seed: int
    train_indices: np.ndarray
    holdout_indices: np.ndarray


def split(dataset: Dataset, f: float, seed: int) -> SplitPlan:
    """Disjoint train/holdout index split with |train| = round(f·n)."""
    if not 0.0 < f < 1.0:
        raise ContractError(f"train fraction must lie in (0, 1), got {f}")
    n = dataset.n_rows
    n_train = int(round(f * n))
    if n_train == 0 or n_train == n:
        raise ContractError(f"degenerate split: {n_train} of {n} rows in train")
    perm = Rng(seed).substream("split").permutation(n)
    return SplitPlan(
        train_fraction=f,
        seed=seed,
        train_indices=np.sort(perm[:n_train]),
        holdout_indices=np.sort(perm[n_train:]),
    )


@dataclass
class Partition:
    n_parts: int
    parts: list[np.ndarray]
    dropped: np.ndarray


def partition(train_indices, n_parts: int, seed: int, batch_floor: int = 1) -> Partition:
    """Shuffle and cut into n_parts exactly equal disjoint parts.

    The last ``len(train) mod n_parts`` shuffled indices are dropped so the
    parts come out exactly equal; they are reported in Partition.dropped.
    Each part must hold at least ``batch_floor`` samples, which keeps the
    pair count within its feasible range for the configured batch size.
    """
    idx = np.asarray(train_indices, dtype=np.int64).ravel()
    if n_parts < 2:
        raise ContractError(f"need at least 2 parts, got {n_parts}")
    part_size = idx.size // n_parts
    if part_size < max(1, batch_floor):
        raise ContractError(
            f"{idx.size} samples over {n_parts} parts gives {part_size} per part, "
            f"below the floor of {batch_floor}; the pair count must lie in "
            f"[2, n_train/batch_size]"
        )
    order = Rng(seed).substream("partition").permutation(idx.size)
    shuffled = idx[order]
    used = part_size * n_parts
    parts = [np.sort(shuffled[j * part_size : (j + 1) * part_size]) for j in range(n_parts)]
    return Partition(n_parts=n_parts, parts=parts, dropped=np.sort(shuffled[used:]))


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass
class PcaBasis:
    mean: np.ndarray  # (1, d)
    components: np.ndarray  # (k, d), orthonormal rows, decreasing variance


def pca_fit(features, k: int = 40) -> PcaBasis:
    """Top-k principal components via covariance eigen-decomposition."""
    x = as_matrix(features)
    n, d = x.shape
    if k > min(n, d):
        raise ContractError(f"k={k} exceeds min(rows, dims)={min(n, d)}")
    mean = x.mean(axis=0, keepdims=True)
    centered = x - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    components = eigvecs[:, order].T
    # deterministic sign: largest-|entry| coordinate positive
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaBasis(mean=mean, components=np.ascontiguousarray(components))


def pca_project(basis: PcaBasis, X) -> np.ndarray:
    x = as_matrix(X)
    if x.shape[1] != basis.mean.shape[1]:
        raise ShapeError(f"data dim {x.shape[1]} != basis dim {basis.mean.shape[1]}")
    return (x - basis.mean) @ basis.components.T
