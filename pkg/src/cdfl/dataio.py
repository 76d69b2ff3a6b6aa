"""Datasets, synthetic data, on-disk formats, splitting and Dirichlet partitioning.

Images are stored channel-first as ``(C, H, W)`` float64 arrays in [0, 1].
Synthetic pixels are quantized to multiples of 1/65535 so that they survive a
16-bit PGM/PPM round trip bit-exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import stream

Box = tuple[int, int, int, int]  # (row0, col0, row1, col1), half-open
MAXVAL = 65535


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray  # (C, H, W)
    mask_regions: tuple[Box, ...] = ()

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or min(px.shape) < 1:
            raise ValueError(f"image must be (C, H, W), got {px.shape}")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "mask_regions", tuple(tuple(int(v) for v in b) for b in self.mask_regions))
        _, h, w = px.shape
        for r0, c0, r1, c1 in self.mask_regions:
            if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
                raise ValueError(f"mask region {(r0, c0, r1, c1)} outside {h}x{w} image")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def size(self) -> int:
        return self.pixels.size


@dataclass(frozen=True, eq=False)
class Sample:
    sample_id: str
    x: Image
    y: int
    z: Image | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    num_classes: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=np.int64)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.samples[0].x.pixels.shape

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.num_classes)

    def originals(self) -> np.ndarray:
        return np.stack([s.x.pixels for s in self.samples])

    def pixelized(self) -> np.ndarray:
        return np.stack([(s.z if s.z is not None else s.x).pixels for s in self.samples])


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    samples: tuple[Sample, ...]
    num_classes: int

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def classes_present(self) -> frozenset[int]:
        return frozenset(s.y for s in self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=np.int64)

    def originals(self) -> np.ndarray:
        return np.stack([s.x.pixels for s in self.samples])

    def pixelized(self) -> np.ndarray:
        return np.stack([(s.z if s.z is not None else s.x).pixels for s in self.samples])


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    alpha: float
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")


# --------------------------------------------------------------- synthetic

def face_box(image_size: int) -> Box:
    """Class-independent 'face' location: a centred square of side image_size/2 in the upper half."""
    s = image_size // 2
    r0 = max(0, image_size // 8)
    c0 = (image_size - s) // 2
    return (r0, c0, r0 + s, c0 + s)


def class_templates(num_classes: int, image_size: int, channels: int, seed: int) -> np.ndarray:
    """Deterministic per-class patterns: a coarse random grid upsampled to full size."""
    rng = stream(seed, "templates")
    cells = 4
    grid = rng.uniform(0.15, 0.85, size=(num_classes, channels, cells, cells))
    rep = -(-image_size // cells)
    up = np.repeat(np.repeat(grid, rep, axis=2), rep, axis=3)
    return up[:, :, :image_size, :image_size]


def synth_generate(num_classes: int, samples_per_class: int, image_size: int = 16,
                   noise_level: float = 0.05, seed: int = 0, channels: int = 1) -> Dataset:
    """Class templates plus seeded Gaussian noise; one face box per image.

    The face box holds a bright class-independent blob on top of the template.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if image_size < 8:
        raise ValueError("image_size must be >= 8")
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    templates = class_templates(num_classes, image_size, channels, seed)
    box = face_box(image_size)
    r0, c0, r1, c1 = box
    rr, cc = np.mgrid[r0:r1, c0:c1]
    cr, ccn = (r0 + r1 - 1) / 2, (c0 + c1 - 1) / 2
    blob = np.exp(-(((rr - cr) ** 2 + (cc - ccn) ** 2) / (2 * ((r1 - r0) / 4) ** 2)))
    rng = stream(seed, "synth-noise")
    samples = []
    for j in range(samples_per_class):
        for c in range(num_classes):
            px = templates[c].copy()
            px[:, r0:r1, c0:c1] = 0.5 * px[:, r0:r1, c0:c1] + 0.5 * blob
            if noise_level > 0:
                px = px + rng.normal(0.0, noise_level, size=px.shape)
            px = np.round(np.clip(px, 0.0, 1.0) * MAXVAL) / MAXVAL
            sid = f"s{len(samples):05d}"
            samples.append(Sample(sid, Image(px, (box,)), c))
    return Dataset(tuple(samples), num_classes)


# --------------------------------------------------------------- splitting

def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, proportional to ``weights``; ties to lower index."""
    w = np.asarray(weights, dtype=np.float64)
    if total == 0 or w.sum() <= 0:
        return np.zeros(len(w), dtype=np.int64)
    quota = w / w.sum() * total
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def dirichlet_partition(labels: Sequence[int], spec: PartitionSpec) -> list[list[int]]:
    """Assign sample indices to clients with per-class Dir(alpha) proportions.

    Fractional proportions become counts by largest-remainder rounding. Empty
    clients are then filled by moving the last sample of the largest client.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty label list")
    if labels.size < spec.num_clients:
        raise ValueError(f"{labels.size} samples cannot cover {spec.num_clients} clients")
    n = spec.num_clients
    clients: list[list[int]] = [[] for _ in range(n)]
    if n == 1:
        clients[0] = list(range(labels.size))
        return clients
    rng = stream(spec.seed, "dirichlet")
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        props = rng.dirichlet(np.full(n, spec.alpha))
        counts = _largest_remainder(props, idx.size)
        start = 0
        for k in range(n):
            clients[k].extend(int(i) for i in idx[start:start + counts[k]])
            start += counts[k]
    for k in range(n):
        if not clients[k]:
            donor = max(range(n), key=lambda i: (len(clients[i]), -i))
            clients[k].append(clients[donor].pop())
    return [sorted(c) for c in clients]


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; per class round_half_up(fraction * count) go to test, single-sample classes stay in train."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = stream(seed, "train-test")
    labels = dataset.labels
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = 0 if idx.size < 2 else min(idx.size - 1, max(1, int(np.floor(test_fraction * idx.size + 0.5))))
        test.extend(idx[:k].tolist())
        train.extend(idx[k:].tolist())
    return dataset.subset(sorted(train)), dataset.subset(sorted(test))


def client_datasets(dataset: Dataset, assignment: Sequence[Sequence[int]]) -> list[ClientDataset]:
    return [ClientDataset(i, tuple(dataset.samples[j] for j in idx), dataset.num_classes)
            for i, idx in enumerate(assignment)]


# --------------------------------------------------------------- disk format

def _write_pnm(path: Path, pixels: np.ndarray) -> None:
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise ValueError("PGM/PPM supports 1 or 3 channels")
    magic = b"P5" if c == 1 else b"P6"
    data = np.round(np.clip(pixels, 0, 1) * MAXVAL).astype(">u2").transpose(1, 2, 0)
    path.write_bytes(magic + f"\n{w} {h}\n{MAXVAL}\n".encode() + data.tobytes())


def _read_pnm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported image format {magic!r}")
    c = 1 if magic == b"P5" else 3
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(raw, dtype=dtype, count=h * w * c, offset=pos).reshape(h, w, c)
    return arr.transpose(2, 0, 1).astype(np.float64) / maxval


def save_dataset(dataset: Dataset, directory: str | Path) -> Path:
    """Write manifest.json, labels.csv, masks.csv and one PGM/PPM per sample."""
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    c, h, w = dataset.image_shape
    ext = "pgm" if c == 1 else "ppm"
    manifest = {"num_classes": dataset.num_classes, "height": h, "width": w, "channels": c,
                "samples": [s.sample_id for s in dataset.samples]}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(d / "labels.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["sample_id", "class"])
        wr.writerows([s.sample_id, s.y] for s in dataset.samples)
    with open(d / "masks.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["sample_id", "row0", "col0", "row1", "col1"])
        for s in dataset.samples:
            for box in s.x.mask_regions:
                wr.writerow([s.sample_id, *box])
    for s in dataset.samples:
        _write_pnm(d / "images" / f"{s.sample_id}.{ext}", s.x.pixels)
    return d


def load_dataset(directory: str | Path) -> Dataset:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    with open(d / "labels.csv", newline="") as f:
        labels = {row["sample_id"]: int(row["class"]) for row in csv.DictReader(f)}
    masks: dict[str, list[Box]] = {}
    if (d / "masks.csv").exists():
        with open(d / "masks.csv", newline="") as f:
            for row in csv.DictReader(f):
                masks.setdefault(row["sample_id"], []).append(
                    (int(row["row0"]), int(row["col0"]), int(row["row1"]), int(row["col1"])))
    ext = "pgm" if manifest["channels"] == 1 else "ppm"
    samples = []
    for sid in manifest["samples"]:
        px = _read_pnm(d / "images" / f"{sid}.{ext}")
        if px.shape != (manifest["channels"], manifest["height"], manifest["width"]):
            raise ValueError(f"{sid}: image shape {px.shape} disagrees with manifest")
        samples.append(Sample(sid, Image(px, tuple(masks.get(sid, ()))), labels[sid]))
    return Dataset(tuple(samples), int(manifest["num_classes"]))


def write_partition(dataset: Dataset, assignment: Sequence[Sequence[int]], path: str | Path) -> None:
    rows = sorted((dataset.samples[j].sample_id, cid) for cid, idx in enumerate(assignment) for j in idx)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["sample_id", "client_id"])
        wr.writerows(rows)


def read_partition(dataset: Dataset, path: str | Path) -> list[list[int]]:
    pos = {s.sample_id: i for i, s in enumerate(dataset.samples)}
    out: dict[int, list[int]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if row["sample_id"] not in pos:
                raise ValueError(f"{path}: unknown sample id {row['sample_id']!r}")
            out.setdefault(int(row["client_id"]), []).append(pos[row["sample_id"]])
    n = max(out) + 1 if out else 0
    return [sorted(out.get(i, [])) for i in range(n)]


def with_pixelized(samples: Sequence[Sample], zs: Sequence[Image]) -> tuple[Sample, ...]:
    return tuple(replace(s, z=z) for s, z in zip(samples, zs))
