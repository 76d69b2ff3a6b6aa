"""The desk-scale network: two conv/ReLU/mean-pool stages, a dense embedding, a linear head.

The embedding is the (pre-activation) output of the penultimate dense layer;
the head applies ReLU and a final dense layer. Keeping the embedding linear
makes all-zero embeddings a measure-zero event, which matters because cosine
similarity rejects zero vectors.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .rng import stream

MAGIC = b"CDFLCKP1"


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int = 1
    image_size: int = 16
    conv_channels: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    embed_dim: int = 32
    num_classes: int = 4

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.image_size % (2 ** len(self.conv_channels)):
            raise ValueError("image_size must be divisible by 2 per conv stage")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if self.embed_dim < 1 or self.num_classes < 2:
            raise ValueError("embed_dim >= 1 and num_classes >= 2 required")

    @property
    def flat_dim(self) -> int:
        side = self.image_size // 2 ** len(self.conv_channels)
        last = self.conv_channels[-1] if self.conv_channels else self.in_channels
        return last * side * side

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        cin, k = self.in_channels, self.kernel_size
        for i, cout in enumerate(self.conv_channels):
            out += [(f"conv{i}.w", (cout, cin, k, k)), (f"conv{i}.b", (cout,))]
            cin = cout
        out += [("embed.w", (self.flat_dim, self.embed_dim)), ("embed.b", (self.embed_dim,)),
                ("head.w", (self.embed_dim, self.num_classes)), ("head.b", (self.num_classes,))]
        return out


@dataclass(eq=False)
class ModelParams:
    arch: ArchConfig
    tensors: dict[str, np.ndarray]
    seed: int = 0

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def replace_tensors(self, tensors: Mapping[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.arch, {k: np.asarray(tensors[k]) for k in self.tensors}, self.seed)

    def serialize(self) -> bytes:
        return write_tensors(self.tensors, {"arch": asdict(self.arch), "seed": self.seed})

    @classmethod
    def deserialize(cls, blob: bytes) -> "ModelParams":
        header, tensors = read_tensors(blob)
        try:
            arch = ArchConfig(**header["arch"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"corrupt checkpoint header: {exc}") from exc
        expected = arch.shapes()
        if [(k, v.shape) for k, v in tensors.items()] != expected:
            raise ValueError("checkpoint tensors do not match architecture")
        return cls(arch, tensors, int(header.get("seed", 0)))

    def equal(self, other: "ModelParams") -> bool:
        """Bit-exact equality of architecture and every tensor."""
        return (self.arch == other.arch and list(self.tensors) == list(other.tensors)
                and all(self.tensors[k].tobytes() == other.tensors[k].tobytes() for k in self.tensors))


@dataclass(frozen=True)
class ForwardOutput:
    embedding: np.ndarray
    logits: np.ndarray


def init(seed: int, arch: ArchConfig | None = None) -> ModelParams:
    """He-uniform weights, zero biases, from the seeded 'init' stream."""
    arch = arch or ArchConfig()
    rng = stream(seed, "init")
    tensors = {}
    for name, shape in arch.shapes():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(arch, tensors, seed)


def expected_parameter_count(arch: ArchConfig) -> int:
    return sum(int(np.prod(s)) for _, s in arch.shapes())


# ------------------------------------------------------------------ forward

def forward_vars(arch: ArchConfig, p: Mapping[str, nx.Var], x: np.ndarray) -> tuple[nx.Var, nx.Var]:
    """Batched forward on (B, C, H, W) input; returns (embedding, logits) Vars."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (arch.in_channels, arch.image_size, arch.image_size):
        raise ValueError(f"input shape {x.shape[1:]} does not match "
                         f"{(arch.in_channels, arch.image_size, arch.image_size)}")
    h = nx.constant(x)
    for i in range(len(arch.conv_channels)):
        h = nx.mean_pool2(nx.relu(nx.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"])))
    h = nx.reshape(h, (x.shape[0], arch.flat_dim))
    emb = nx.add(nx.matmul(h, p["embed.w"]), p["embed.b"])
    logits = nx.add(nx.matmul(nx.relu(emb), p["head.w"]), p["head.b"])
    return emb, logits


def forward_batch(params: ModelParams, x: np.ndarray, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Untaped batched inference: (embeddings (B, d), logits (B, |C|))."""
    pv = {k: nx.constant(v) for k, v in params.tensors.items()}
    embs, logits = [], []
    for s in range(0, len(x), chunk):
        e, l = forward_vars(params.arch, pv, x[s:s + chunk])
        embs.append(e.value)
        logits.append(l.value)
    if not embs:
        return np.zeros((0, params.arch.embed_dim)), np.zeros((0, params.arch.num_classes))
    return np.concatenate(embs), np.concatenate(logits)


def forward(params: ModelParams, image) -> ForwardOutput:
    """Single-image forward; ``image`` is an Image or a (C, H, W) array."""
    px = getattr(image, "pixels", image)
    e, l = forward_batch(params, np.asarray(px)[None])
    return ForwardOutput(e[0], l[0])


def embed(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return forward_batch(params, x)[0]


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(forward_batch(params, x)[1], axis=1)


def accuracy(params: ModelParams, samples: Sequence, use_pixelized: bool = False) -> float:
    if len(samples) == 0:
        raise ValueError("accuracy of an empty sample list is undefined")
    if use_pixelized:
        x = np.stack([(s.z if s.z is not None else s.x).pixels for s in samples])
    else:
        x = np.stack([s.x.pixels for s in samples])
    y = np.array([s.y for s in samples])
    return float(np.mean(predict(params, x) == y))


def accuracy_arrays(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ValueError("accuracy of an empty sample list is undefined")
    return float(np.mean(predict(params, x) == np.asarray(y)))


# ------------------------------------------------------------ binary format

def write_tensors(tensors: Mapping[str, np.ndarray], header: dict) -> bytes:
    """MAGIC | u32 header length | JSON header | per tensor: u32 name length, name,
    u32 ndim, u64 dims, f64 data (all little-endian) | u32 CRC32 of everything before."""
    head = dict(header)
    head["tensors"] = [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()]
    hb = json.dumps(head, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(hb)), hb]
    for name, arr in tensors.items():
        nb = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def read_tensors(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError("corrupt checkpoint: checksum mismatch")
    try:
        pos = len(MAGIC)
        (hl,) = struct.unpack_from("<I", body, pos)
        pos += 4
        header = json.loads(body[pos:pos + hl])
        pos += hl
        tensors = {}
        for _ in header["tensors"]:
            (nl,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nl].decode()
            pos += nl
            (nd,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{nd}Q", body, pos)
            pos += 8 * nd
            count = int(np.prod(shape)) if nd else 1
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            tensors[name] = arr.astype(np.float64)
        if pos != len(body):
            raise ValueError("trailing bytes")
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ValueError(f"corrupt checkpoint: {exc}") from exc
    return header, tensors
