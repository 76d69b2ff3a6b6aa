"""Server: aggregation, fine-tuning on stored representative sets, ranking, uplink accounting."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import SelectedSet
from .fedclient import ClientUpdate
from .model import ModelParams, accuracy_arrays, read_tensors, write_tensors
from .numerics import SgdState
from .training import train_ce


def round_half_up(x: float) -> int:
    # guard against 0.5*3 landing a hair under 1.5
    return int(math.floor(x + 0.5 + 1e-12))


def selection_size(select_fraction: float, n: int) -> int:
    return max(1, round_half_up(select_fraction * n))


@dataclass(frozen=True, eq=False)
class StoredSet:
    """A client's representative set as held by the server, split into train/val."""
    client_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    round_received: int = 0

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.train_x, self.train_y, self.val_x, self.val_y):
            h.update(str(a.shape).encode())
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass(eq=False)
class ServerState:
    theta_global: ModelParams
    num_clients: int
    store: dict[int, StoredSet] = field(default_factory=dict)
    chosen: tuple[int, ...] | None = None
    round: int = 0
    last_scores: dict[int, float] = field(default_factory=dict)


# ------------------------------------------------------------------ steps

def split_selected(selected: SelectedSet, val_fraction: float, rng: np.random.Generator,
                   round_received: int = 0) -> StoredSet:
    """Label-stratified train/val split with at least one sample on each side.

    A single-sample set goes entirely to validation (ranking needs it).
    """
    if not 0 <= val_fraction <= 1:
        raise ValueError("val_fraction must lie in [0, 1]")
    n = len(selected)
    x = selected.pixels() if n else np.zeros((0,))
    y = selected.labels()
    if n == 0:
        raise ValueError("cannot split an empty selected set")
    if n == 1:
        n_val = 1
    else:
        n_val = min(n - 1, max(1, round_half_up(val_fraction * n)))
    classes = sorted(set(y.tolist()))
    counts = np.array([(y == c).sum() for c in classes], dtype=np.float64)
    quota = counts / n * n_val
    base = np.floor(quota).astype(int)
    order = sorted(range(len(classes)), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order[:n_val - int(base.sum())]:
        base[i] += 1
    val_pos: list[int] = []
    for c, q in zip(classes, base):
        members = np.flatnonzero(y == c)
        members = members[rng.permutation(len(members))]
        val_pos.extend(members[:q].tolist())
    val_pos = sorted(val_pos)
    train_pos = [i for i in range(n) if i not in set(val_pos)]
    return StoredSet(selected.client_id, x[train_pos], y[train_pos], x[val_pos], y[val_pos], round_received)


def aggregate(updates: Sequence[ClientUpdate], previous: ModelParams | None = None) -> tuple[ModelParams, bool]:
    """Sample-count-weighted mean of the local models, summed in ascending client order.

    Returns (model, flagged); with no updates the previous model is kept and flagged.
    """
    if not updates:
        if previous is None:
            raise ValueError("no updates and no previous global model")
        return previous, True
    ups = sorted(updates, key=lambda u: u.client_id)
    total = float(sum(u.n for u in ups))
    first = ups[0].theta_l
    out = {}
    for name in first.tensors:
        acc = np.zeros_like(first.tensors[name])
        for u in ups:
            acc = acc + (u.n / total) * u.theta_l.tensors[name]
        out[name] = acc
    return first.replace_tensors(out), False


def pooled_train(store: Mapping[int, StoredSet]) -> tuple[np.ndarray, np.ndarray]:
    parts = [store[c] for c in sorted(store) if len(store[c].train_y)]
    if not parts:
        return np.zeros((0,)), np.zeros((0,), dtype=np.int64)
    return np.concatenate([p.train_x for p in parts]), np.concatenate([p.train_y for p in parts])


def server_finetune(theta: ModelParams, store: Mapping[int, StoredSet], epochs: int, batch_size: int,
                    sgd: SgdState, rng: np.random.Generator) -> ModelParams:
    """Cross-entropy on the union of all stored training parts; a no-op on an empty pool."""
    x, y = pooled_train(store)
    if len(y) == 0 or epochs == 0:
        return theta
    return train_ce(theta, x, y, epochs, batch_size, sgd, rng)


def rank_clients(theta: ModelParams, store: Mapping[int, StoredSet],
                 candidates: Iterable[int]) -> list[tuple[int, float]]:
    """(client, val accuracy) sorted best first, ties by lower id; no val set ranks last."""
    scores = []
    for c in candidates:
        s = store.get(c)
        acc = accuracy_arrays(theta, s.val_x, s.val_y) if s is not None and len(s.val_y) else -math.inf
        scores.append((c, acc))
    return sorted(scores, key=lambda t: (-t[1], t[0]))


def rank_and_select(theta: ModelParams, store: Mapping[int, StoredSet], select_fraction: float,
                    num_clients: int, pool: Sequence[int] | None = None) -> tuple[int, ...]:
    """Top max(1, round_half_up(select_fraction * |pool|)) clients by validation accuracy."""
    candidates = list(range(num_clients)) if pool is None else sorted(pool)
    ranked = rank_clients(theta, store, candidates)
    k = selection_size(select_fraction, len(candidates))
    return tuple(sorted(c for c, _ in ranked[:k]))


# ------------------------------------------------------------------ overhead

SCHEMES = ("cdfl", "fedavg", "fedprox", "moon", "feddyn", "scaffold", "fedhkd", "solo")
FORMULAS = {
    "fedavg": "pN|theta|",
    "fedprox": "pN|theta|",
    "moon": "pN|theta|",
    "feddyn": "pN|theta|",
    "scaffold": "pN(|theta|+|c|)",
    "fedhkd": "pN(|theta|+|C|(|v|+|C|))",
    "cdfl": "sum_{i in contributors}(|theta|+|S_i||I|)",
    "solo": "0",
}


@dataclass(frozen=True)
class RoundStats:
    """Inputs to the uplink cost model; counts are scalars (parameters or pixel values)."""
    theta_size: int
    num_clients: int = 0
    participation: float = 1.0
    n_connected: int | None = None
    image_size: int = 0
    selected_sizes: tuple[int, ...] = ()   # |S_i| of each contributing client (cdfl)
    control_size: int | None = None        # |c_i|, defaults to theta_size
    num_classes: int = 0
    embed_dim: int = 0

    @property
    def connected(self) -> int:
        if self.n_connected is not None:
            return self.n_connected
        return round_half_up(self.participation * self.num_clients)


def uplink_parts(scheme: str, st: RoundStats) -> tuple[int, int]:
    """(parameter scalars, image scalars) sent client -> server in one round."""
    if scheme not in FORMULAS:
        raise ValueError(f"unknown scheme {scheme!r}")
    pn = st.connected
    if scheme in ("fedavg", "fedprox", "moon", "feddyn"):
        return pn * st.theta_size, 0
    if scheme == "scaffold":
        c = st.theta_size if st.control_size is None else st.control_size
        return pn * (st.theta_size + c), 0
    if scheme == "fedhkd":
        return pn * (st.theta_size + st.num_classes * (st.embed_dim + st.num_classes)), 0
    if scheme == "cdfl":
        return len(st.selected_sizes) * st.theta_size, sum(st.selected_sizes) * st.image_size
    return 0, 0


def uplink_overhead(scheme: str, st: RoundStats) -> int:
    p, i = uplink_parts(scheme, st)
    return p + i


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    scheme: str
    formula: str
    n_connected: int
    n_contributors: int
    param_scalars: int
    image_scalars: int

    @property
    def total(self) -> int:
        return self.param_scalars + self.image_scalars


@dataclass
class OverheadLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def record(self, round_idx: int, scheme: str, st: RoundStats, n_contributors: int) -> LedgerEntry:
        p, i = uplink_parts(scheme, st)
        e = LedgerEntry(round_idx, scheme, FORMULAS[scheme], st.connected, n_contributors, p, i)
        self.entries.append(e)
        return e

    def total(self) -> int:
        return sum(e.total for e in self.entries)


# ------------------------------------------------------------------ persistence

def save_server_state(state: ServerState, directory: str | Path) -> None:
    """global.ckpt (model), server_store.ckpt (stored sets as named tensors), server_state.json (index)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "global.ckpt").write_bytes(state.theta_global.serialize())
    tensors = {}
    for c in sorted(state.store):
        s = state.store[c]
        for part in ("train_x", "train_y", "val_x", "val_y"):
            tensors[f"client{c}/{part}"] = np.asarray(getattr(s, part), dtype=np.float64)
    (d / "server_store.ckpt").write_bytes(write_tensors(tensors, {"kind": "server_store"}))
    index = {
        "round": state.round,
        "num_clients": state.num_clients,
        "chosen": list(state.chosen) if state.chosen is not None else None,
        "store": {str(c): {"n_train": int(len(s.train_y)), "n_val": int(len(s.val_y)),
                           "round_received": s.round_received, "sha256": s.digest()}
                  for c, s in sorted(state.store.items())},
    }
    (d / "server_state.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


def load_server_state(directory: str | Path) -> ServerState:
    d = Path(directory)
    theta = ModelParams.deserialize((d / "global.ckpt").read_bytes())
    index = json.loads((d / "server_state.json").read_text())
    _, tensors = read_tensors((d / "server_store.ckpt").read_bytes())
    store = {}
    for key, meta in index["store"].items():
        c = int(key)
        t = {part: tensors[f"client{c}/{part}"] for part in ("train_x", "train_y", "val_x", "val_y")}
        store[c] = StoredSet(c, t["train_x"], t["train_y"].astype(np.int64), t["val_x"],
                             t["val_y"].astype(np.int64), meta["round_received"])
    chosen = tuple(index["chosen"]) if index["chosen"] is not None else None
    return ServerState(theta, index["num_clients"], store, chosen, index["round"])
