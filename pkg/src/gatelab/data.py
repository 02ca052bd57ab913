"""Datasets: IDX binary ingestion and deterministic synthetic generators.

Inputs live in [0, 1]; labels are class indices.  The IDX reader/writer
round-trips byte-valued data losslessly (pixels are stored as u8 and read
back as value/255).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    """Malformed dataset file or invalid generator parameters."""


@dataclass
class Dataset:
    inputs: np.ndarray   # (N, dims) float64 in [0, 1]
    labels: np.ndarray   # (N,) int class indices
    source: str = "memory"
    seed: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise DatasetError("inputs must be (N, dims) and labels (N,)")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise DatasetError("input values must lie in [0, 1]")
        if self.labels.size and self.labels.min() < 0:
            raise DatasetError("labels must be non-negative class indices")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dims(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], source=self.source, seed=self.seed)


def _read_u32(buf: bytes, off: int, path: str) -> int:
    if off + 4 > len(buf):
        raise DatasetError(f"{path}: truncated header")
    return struct.unpack(">I", buf[off : off + 4])[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse a big-endian IDX image/label file pair into a dataset.

    Pixels (unsigned bytes) are scaled by 1/255.  Raises on a bad magic
    number, a truncated payload, or an image/label count mismatch.
    """
    with open(images_path, "rb") as fh:
        raw = fh.read()
    magic = _read_u32(raw, 0, images_path)
    if magic != IMAGES_MAGIC:
        raise DatasetError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    count = _read_u32(raw, 4, images_path)
    rows = _read_u32(raw, 8, images_path)
    cols = _read_u32(raw, 12, images_path)
    payload = raw[16:]
    if len(payload) != count * rows * cols:
        raise DatasetError(
            f"{images_path}: payload holds {len(payload)} bytes, header promises {count * rows * cols}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    inputs = pixels.reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        raw = fh.read()
    magic = _read_u32(raw, 0, labels_path)
    if magic != LABELS_MAGIC:
        raise DatasetError(f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    lcount = _read_u32(raw, 4, labels_path)
    lpayload = raw[8:]
    if len(lpayload) != lcount:
        raise DatasetError(f"{labels_path}: payload holds {len(lpayload)} labels, header promises {lcount}")
    if lcount != count:
        raise DatasetError(f"image/label count mismatch: {count} images vs {lcount} labels")
    labels = np.frombuffer(lpayload, dtype=np.uint8).astype(np.intp)
    return Dataset(inputs, labels, source=f"idx:{images_path}")


def save_idx(dataset: Dataset, images_path: str, labels_path: str, rows: int | None = None) -> None:
    """Write a dataset as an IDX pair; values are quantized to bytes.

    Lossless exactly when every input value is a multiple of 1/255 (as
    produced by :func:`load_idx`).
    """
    n, dims = dataset.inputs.shape
    if rows is None:
        r = int(np.sqrt(dims))
        rows = r if r * r == dims else 1
    if dims % rows != 0:
        raise DatasetError(f"{dims} values per sample cannot form {rows} rows")
    cols = dims // rows
    if dataset.labels.size and dataset.labels.max() > 255:
        raise DatasetError("IDX labels are bytes; class index above 255")
    pixels = np.round(dataset.inputs * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def synth_dataset(kind: str, n: int, dims: int, classes: int, seed: int) -> Dataset:
    """Deterministic synthetic classification data, class-balanced within 1.

    ``blobs``: one Gaussian cluster per class around centers drawn inside
    the unit cube.  ``two-class-gaussian``: two Gaussians whose centers sit
    three standard deviations either side of the midpoint along a random
    direction (a linear classifier separates them at ~100%).
    """
    if classes < 2 or n < classes:
        raise DatasetError(f"need n >= classes >= 2, got n={n} classes={classes}")
    if dims < 1:
        raise DatasetError(f"dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.intp) % classes
    if kind == "blobs":
        centers = rng.uniform(0.25, 0.75, size=(classes, dims))
        spread = 0.08
        points = centers[labels] + rng.normal(0.0, spread, size=(n, dims))
    elif kind == "two-class-gaussian":
        if classes != 2:
            raise DatasetError("two-class-gaussian requires classes=2")
        sigma = 0.05
        direction = rng.standard_normal(dims)
        direction /= np.linalg.norm(direction)
        offset = 3.0 * sigma * direction
        centers = np.stack([0.5 - offset, 0.5 + offset])
        points = centers[labels] + rng.normal(0.0, sigma, size=(n, dims))
    else:
        raise DatasetError(f"unknown synthetic kind {kind!r}")
    order = rng.permutation(n)
    return Dataset(np.clip(points, 0.0, 1.0)[order], labels[order], source=f"synth:{kind}", seed=seed)


def parse_dataset_spec(spec: str) -> Dataset:
    """Build a dataset from a CLI/config spec string.

    ``synth:<kind>,n=<N>,dims=<D>,classes=<C>[,seed=<S>]`` or
    ``idx:<images-path>,<labels-path>``.
    """
    if spec.startswith("idx:"):
        parts = spec[4:].split(",")
        if len(parts) != 2:
            raise DatasetError("idx spec needs two comma-separated paths: idx:<images>,<labels>")
        return load_idx(parts[0].strip(), parts[1].strip())
    if spec.startswith("synth:"):
        parts = spec[6:].split(",")
        kind = parts[0].strip()
        kv = {}
        for item in parts[1:]:
            if "=" not in item:
                raise DatasetError(f"bad synth parameter {item!r}")
            key, value = item.split("=", 1)
            kv[key.strip()] = int(value)
        unknown = set(kv) - {"n", "dims", "classes", "seed"}
        if unknown:
            raise DatasetError(f"unknown synth parameters: {sorted(unknown)}")
        missing = {"n", "dims", "classes"} - set(kv)
        if missing:
            raise DatasetError(f"synth spec missing parameters: {sorted(missing)}")
        return synth_dataset(kind, n=kv["n"], dims=kv["dims"], classes=kv["classes"], seed=kv.get("seed", 0))
    raise DatasetError(f"dataset spec must start with 'idx:' or 'synth:', got {spec!r}")
