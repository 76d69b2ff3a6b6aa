"""Experiment configuration, the round loop for every scheme, metrics files and reports.

A run is a pure function of its :class:`ExperimentConfig`: every random draw
comes from a named stream of ``master_seed``. Output files (``rounds.csv``,
``ledger.csv``, ``store.csv``, ``config.echo.json``, ``checkpoints/``) are
byte-reproducible; wall-clock timings go to ``timing.json`` only.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import dataio
from .baselines import BaselineConfig, baseline_round, solo_train
from .dataio import ClientDataset, Dataset, PartitionSpec
from .fedclient import ClientConfig, ClientState, client_round
from .fedserver import (OverheadLedger, RoundStats, ServerState, aggregate, rank_and_select, round_half_up,
                        save_server_state, server_finetune, split_selected)
from .losses import LossWeights
from .model import ArchConfig, ModelParams, accuracy_arrays, init
from .numerics import SgdState
from .privacy import PixelizeConfig, pixelize
from .rng import stream

log = logging.getLogger(__name__)

SCHEMES = ("cdfl", "fedavg", "fedprox", "solo")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


# ------------------------------------------------------------------ config

@dataclass
class SyntheticSpec:
    num_classes: int = 4
    samples_per_class: int = 100
    image_size: int = 16
    noise_level: float = 0.05
    seed: int = 0
    channels: int = 1


@dataclass
class DatasetSpec:
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    path: str | None = None
    test_fraction: float = 0.1


@dataclass
class PartitionCfg:
    num_clients: int = 8
    alpha: float = 1.0
    seed: int = 0
    file: str | None = None


@dataclass
class SgdCfg:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5


@dataclass
class LossCfg:
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.05
    tau: float = 0.5
    prox_mu: float = 0.01


@dataclass
class PixelizeCfg:
    factor: int = 8
    mode: str = "region"


@dataclass
class ArchCfg:
    conv_channels: list[int] = field(default_factory=lambda: [8, 16])
    kernel_size: int = 3
    embed_dim: int = 32


@dataclass
class ExperimentConfig:
    scheme: str = "cdfl"
    rounds: int = 10
    master_seed: int = 0
    participation: float = 0.8
    select_fraction: float = 0.5
    selection_pool: str = "all"         # 'all' clients or only the 'connected' ones
    m: int = 7
    val_fraction: float = 0.2
    batch_size: int = 32
    local_epochs: int = 5
    server_epochs: int = 2
    solo_epochs: int = 100
    restrict_to_cluster: bool = True
    persist_personalized: bool = False
    eval_pixelized: bool = False        # evaluate client models on pixelized test images
    connected_override: dict[int, list[int]] | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionCfg = field(default_factory=PartitionCfg)
    sgd: SgdCfg = field(default_factory=SgdCfg)
    loss: LossCfg = field(default_factory=LossCfg)
    pixelize: PixelizeCfg = field(default_factory=PixelizeCfg)
    arch: ArchCfg = field(default_factory=ArchCfg)

    # -- construction / validation

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = _build(cls, d, "")
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<file>: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["connected_override"] is not None:
            d["connected_override"] = {str(k): v for k, v in sorted(d["connected_override"].items())}
        return d

    def validate(self) -> None:
        def need(ok: bool, path: str, msg: str):
            if not ok:
                raise ConfigError(f"{path}: {msg}")

        need(self.scheme in SCHEMES, "scheme", f"must be one of {SCHEMES}")
        need(self.rounds >= 0, "rounds", "must be >= 0")
        need(0 < self.participation <= 1, "participation", "must lie in (0, 1]")
        need(0 < self.select_fraction <= 1, "select_fraction", "must lie in (0, 1]")
        need(self.selection_pool in ("all", "connected"), "selection_pool", "must be 'all' or 'connected'")
        need(self.m >= 1, "m", "must be >= 1")
        need(0 <= self.val_fraction < 1, "val_fraction", "must lie in [0, 1)")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.local_epochs >= 0, "local_epochs", "must be >= 0")
        need(self.server_epochs >= 0, "server_epochs", "must be >= 0")
        need(self.solo_epochs >= 0, "solo_epochs", "must be >= 0")
        ds = self.dataset
        need((ds.synthetic is None) != (ds.path is None), "dataset", "exactly one of 'synthetic' or 'path'")
        need(0 < ds.test_fraction < 1, "dataset.test_fraction", "must lie in (0, 1)")
        if ds.synthetic is not None:
            s = ds.synthetic
            need(s.num_classes >= 2, "dataset.synthetic.num_classes", "must be >= 2")
            need(s.samples_per_class >= 1, "dataset.synthetic.samples_per_class", "must be >= 1")
            need(s.image_size >= 8, "dataset.synthetic.image_size", "must be >= 8")
            need(s.noise_level >= 0, "dataset.synthetic.noise_level", "must be >= 0")
        need(self.partition.num_clients >= 1, "partition.num_clients", "must be >= 1")
        need(self.partition.alpha > 0, "partition.alpha", "must be > 0")
        need(self.sgd.lr >= 0, "sgd.lr", "must be >= 0")
        need(0 <= self.sgd.momentum < 1, "sgd.momentum", "must lie in [0, 1)")
        need(self.sgd.weight_decay >= 0, "sgd.weight_decay", "must be >= 0")
        for k in ("lambda1", "lambda2", "lambda3", "prox_mu"):
            need(getattr(self.loss, k) >= 0, f"loss.{k}", "must be >= 0")
        need(self.loss.tau > 0, "loss.tau", "must be > 0")
        need(self.pixelize.factor >= 1, "pixelize.factor", "must be >= 1")
        need(self.pixelize.mode in ("region", "whole"), "pixelize.mode", "must be 'region' or 'whole'")
        need(self.arch.embed_dim >= 1, "arch.embed_dim", "must be >= 1")
        if self.connected_override is not None:
            for r, ids in self.connected_override.items():
                need(all(0 <= i < self.partition.num_clients for i in ids),
                     f"connected_override.{r}", "client id out of range")

    # -- derived component configs

    def loss_weights(self) -> LossWeights:
        l = self.loss
        return LossWeights(l.lambda1, l.lambda2, l.lambda3, l.tau, l.prox_mu)

    def client_config(self) -> ClientConfig:
        return ClientConfig(self.local_epochs, self.batch_size, self.sgd.lr, self.sgd.momentum,
                            self.sgd.weight_decay, self.loss_weights(), self.m, self.restrict_to_cluster,
                            self.persist_personalized)

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(self.scheme if self.scheme != "cdfl" else "fedavg", self.loss.prox_mu,
                              self.local_epochs, self.batch_size, self.sgd.lr, self.sgd.momentum,
                              self.sgd.weight_decay, self.solo_epochs)

    def sgd_state(self) -> SgdState:
        return SgdState(self.sgd.lr, self.sgd.momentum, self.sgd.weight_decay)


def _build(cls, d: Any, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in d.items():
        p = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"{p}: unknown field")
        sub = _NESTED.get((cls, key))
        if sub is not None and val is not None:
            val = _build(sub, val, p)
        elif key == "connected_override" and val is not None:
            try:
                val = {int(r): [int(i) for i in ids] for r, ids in val.items()}
            except (AttributeError, TypeError, ValueError) as exc:
                raise ConfigError(f"{p}: expected {{round: [client ids]}}") from exc
        else:
            val = _coerce(fields[key], val, p)
        kwargs[key] = val
    if cls is DatasetSpec and "path" in d and "synthetic" not in d:
        kwargs["synthetic"] = None
    return cls(**kwargs)


def _coerce(f: dataclasses.Field, val: Any, path: str):
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if t.endswith(" | None"):
        if val is None:
            return None
        t = t[:-len(" | None")]
    try:
        if t == "int":
            if isinstance(val, bool) or (isinstance(val, float) and not val.is_integer()):
                raise TypeError
            return int(val)
        if t == "float":
            if isinstance(val, bool):
                raise TypeError
            return float(val)
        if t == "bool":
            if not isinstance(val, bool):
                raise TypeError
            return val
        if t == "str":
            if not isinstance(val, str):
                raise TypeError
            return val
        if t == "list[int]":
            return [int(v) for v in val]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: expected {t}, got {val!r}") from exc
    return val


_NESTED = {
    (ExperimentConfig, "dataset"): DatasetSpec,
    (ExperimentConfig, "partition"): PartitionCfg,
    (ExperimentConfig, "sgd"): SgdCfg,
    (ExperimentConfig, "loss"): LossCfg,
    (ExperimentConfig, "pixelize"): PixelizeCfg,
    (ExperimentConfig, "arch"): ArchCfg,
    (DatasetSpec, "synthetic"): SyntheticSpec,
}


def desk_config(scheme: str = "cdfl", seed: int = 0, **overrides) -> ExperimentConfig:
    """The desk-scale fixture: 4-class 16x16x1 synthetic data, 8 clients, batch 8, d = 32."""
    cfg = ExperimentConfig(scheme=scheme, master_seed=seed, batch_size=8, rounds=10, m=3)
    cfg.dataset.synthetic = SyntheticSpec(num_classes=4, samples_per_class=100, image_size=16,
                                          noise_level=0.6, seed=seed)
    cfg.partition = PartitionCfg(num_clients=8, alpha=0.5, seed=seed)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


# ------------------------------------------------------------------ results

@dataclass
class RoundMetrics:
    round: int
    client_acc: dict[int, float]
    mean_acc: float
    std_acc: float
    global_acc: float | None
    connected: tuple[int, ...]
    contributors: tuple[int, ...]
    uplink_params: int = 0
    uplink_images: int = 0
    wall_clock: float = 0.0

    @property
    def uplink_total(self) -> int:
        return self.uplink_params + self.uplink_images


@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: list[RoundMetrics]
    ledger: OverheadLedger
    theta_global: ModelParams
    clients: list[ClientState]
    server: ServerState | None = None
    store_history: list[tuple[int, int, str]] = field(default_factory=list)  # (round, client, sha256)
    global_history: list[ModelParams] = field(default_factory=list)  # index = round

    @property
    def mean_series(self) -> list[float]:
        return [m.mean_acc for m in self.metrics]


ROUNDS_COLUMNS = ["round", "mean_acc", "std_acc", "global_acc", "n_connected", "n_contributors",
                  "uplink_params", "uplink_images", "uplink_total", "connected", "contributors", "client_acc"]
LEDGER_COLUMNS = ["round", "scheme", "formula", "n_connected", "n_contributors", "param_scalars",
                  "image_scalars", "total"]
REPORT_COLUMNS = ["run", "scheme", "rounds", "final_mean_acc", "final_std_acc", "target",
                  "rounds_to_target", "total_uplink"]


# ------------------------------------------------------------------ data prep

def prepare_data(cfg: ExperimentConfig) -> tuple[list[ClientDataset], Dataset, Dataset]:
    """Load/generate data, split off the test set, partition, and pixelize every sample."""
    ds = cfg.dataset
    if ds.path is not None:
        data = dataio.load_dataset(ds.path)
    else:
        s = ds.synthetic
        data = dataio.synth_generate(s.num_classes, s.samples_per_class, s.image_size, s.noise_level,
                                     s.seed, s.channels)
    pcfg = PixelizeConfig(cfg.pixelize.factor, cfg.pixelize.mode)
    data = Dataset(dataio.with_pixelized(data.samples, [pixelize(s.x, pcfg) for s in data.samples]),
                   data.num_classes)
    train, test = dataio.train_test_split(data, ds.test_fraction, cfg.master_seed)
    if cfg.partition.file is not None:
        # the file covers the whole dataset; test-split samples are dropped from their clients
        full = dataio.read_partition(data, cfg.partition.file)
        ids = [data.samples[i].sample_id for c in full for i in c]
        if len(ids) != len(data) or len(set(ids)) != len(data):
            raise ValueError(f"{cfg.partition.file}: partition must assign every sample exactly once")
        pos = {s.sample_id: i for i, s in enumerate(train.samples)}
        assignment = [sorted(pos[data.samples[i].sample_id] for i in c if data.samples[i].sample_id in pos)
                      for c in full]
        if len(assignment) != cfg.partition.num_clients:
            raise ConfigError(f"partition.num_clients: {cfg.partition.num_clients} disagrees with "
                              f"{len(assignment)} clients in {cfg.partition.file}")
    else:
        spec = PartitionSpec(cfg.partition.num_clients, cfg.partition.alpha, cfg.partition.seed)
        assignment = dataio.dirichlet_partition(train.labels, spec)
    return dataio.client_datasets(train, assignment), train, test


def connected_clients(cfg: ExperimentConfig, round_idx: int) -> tuple[int, ...]:
    n = cfg.partition.num_clients
    if cfg.connected_override is not None and round_idx in cfg.connected_override:
        return tuple(sorted(set(cfg.connected_override[round_idx])))
    k = max(1, min(n, round_half_up(cfg.participation * n)))
    pick = stream(cfg.master_seed, "connect", round_idx).choice(n, size=k, replace=False)
    return tuple(sorted(int(i) for i in pick))


# ------------------------------------------------------------------ run

def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    cfg.validate()
    datasets, train, test = prepare_data(cfg)
    c, h, w = train.image_shape
    if h != w:
        raise ConfigError("dataset: square images required by the desk architecture")
    arch = ArchConfig(c, h, tuple(cfg.arch.conv_channels), cfg.arch.kernel_size, cfg.arch.embed_dim,
                      train.num_classes)
    theta = init(cfg.master_seed, arch)
    clients = [ClientState(d.client_id, d, cfg.master_seed) for d in datasets]
    n = len(clients)
    x_eval = test.pixelized() if cfg.eval_pixelized else test.originals()
    z_test, y_test = test.pixelized(), test.labels
    x_global = z_test if cfg.scheme == "cdfl" else test.originals()

    metrics: list[RoundMetrics] = []
    ledger = OverheadLedger()
    server = ServerState(theta, n) if cfg.scheme == "cdfl" else None
    history: list[tuple[int, int, str]] = []
    globals_: list[ModelParams] = [theta]

    def evaluate(r, models, connected, contributors, parts, t0, global_model):
        accs = {cid: accuracy_arrays(models[cid], x_eval, y_test) for cid in connected}
        vals = np.array([accs[c] for c in connected])
        g = accuracy_arrays(global_model, x_global, y_test) if global_model is not None else None
        metrics.append(RoundMetrics(r, accs, float(vals.mean()), float(vals.std()), g, tuple(connected),
                                    tuple(contributors), parts[0], parts[1], time.perf_counter() - t0))
        log.info("round %d: mean acc %.4f (+/- %.4f), uplink %d", r, vals.mean(), vals.std(), sum(parts))

    t0 = time.perf_counter()
    all_ids = tuple(range(n))
    evaluate(0, {cid: theta for cid in all_ids}, all_ids, (), (0, 0), t0, theta)

    base_cfg = cfg.baseline_config()
    ccfg = cfg.client_config()
    rounds = min(cfg.rounds, 1) if cfg.scheme == "solo" else cfg.rounds
    for r in range(1, rounds + 1):
        t0 = time.perf_counter()
        if cfg.scheme == "solo":
            models = {}
            for st in clients:
                models[st.client_id] = solo_train(st, theta, base_cfg)[0]
            e = ledger.record(r, "solo", RoundStats(theta.parameter_count(), n, 1.0, n), 0)
            evaluate(r, models, all_ids, (), (e.param_scalars, e.image_scalars), t0, None)
            globals_.append(theta)
            continue

        connected = connected_clients(cfg, r)
        if cfg.scheme in ("fedavg", "fedprox"):
            theta, models = baseline_round([clients[i] for i in connected], theta, base_cfg, r)
            st = RoundStats(theta.parameter_count(), n, cfg.participation, len(models))
            e = ledger.record(r, cfg.scheme, st, len(models))
            evaluate(r, models, tuple(sorted(models)), tuple(sorted(models)),
                     (e.param_scalars, e.image_scalars), t0, theta)
            globals_.append(theta)
            continue

        # cdfl
        if cfg.selection_pool == "connected" and server.chosen is not None:
            chosen = rank_and_select(theta, server.store, cfg.select_fraction, n, pool=connected)
        else:
            chosen = server.chosen
        contributors = connected if chosen is None else tuple(sorted(set(chosen) & set(connected)))
        updates = []
        for cid in connected:
            upd = client_round(clients[cid], theta, ccfg, r, contribute=cid in contributors)
            if upd is not None:
                updates.append(upd)
        agg, flagged = aggregate(updates, previous=theta)
        if flagged:
            log.warning("round %d: no client updates; keeping previous global model", r)
        for upd in updates:
            server.store[upd.client_id] = split_selected(
                upd.selected, cfg.val_fraction, stream(cfg.master_seed, "split", r, upd.client_id), r)
        theta = server_finetune(agg, server.store, cfg.server_epochs, cfg.batch_size, cfg.sgd_state(),
                                stream(cfg.master_seed, "server", r))
        server.theta_global, server.round = theta, r
        server.chosen = rank_and_select(theta, server.store, cfg.select_fraction, n)
        for cid in sorted(server.store):
            history.append((r, cid, server.store[cid].digest()))
        st = RoundStats(theta.parameter_count(), n, cfg.participation, len(connected), c * h * w,
                        tuple(len(u.selected) for u in updates))
        e = ledger.record(r, "cdfl", st, len(updates))
        models = {cid: clients[cid].theta_l for cid in connected}
        evaluate(r, models, connected, tuple(u.client_id for u in updates),
                 (e.param_scalars, e.image_scalars), t0, theta)
        globals_.append(theta)

    result = RunResult(cfg, metrics, ledger, theta, clients, server, history, globals_)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


# ------------------------------------------------------------------ outputs

def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_outputs(result: RunResult, out_dir: str | Path) -> Path:
    d = Path(out_dir)
    (d / "checkpoints").mkdir(parents=True, exist_ok=True)
    with open(d / "rounds.csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(ROUNDS_COLUMNS)
        for m in result.metrics:
            wr.writerow([m.round, _fmt(m.mean_acc), _fmt(m.std_acc), _fmt(m.global_acc), len(m.connected),
                         len(m.contributors), m.uplink_params, m.uplink_images, m.uplink_total,
                         ";".join(map(str, m.connected)), ";".join(map(str, m.contributors)),
                         ";".join(f"{k}:{_fmt(v)}" for k, v in sorted(m.client_acc.items()))])
    with open(d / "ledger.csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(LEDGER_COLUMNS)
        for e in result.ledger.entries:
            wr.writerow([e.round, e.scheme, e.formula, e.n_connected, e.n_contributors, e.param_scalars,
                         e.image_scalars, e.total])
    with open(d / "store.csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["round", "client_id", "sha256"])
        wr.writerows(result.store_history)
    (d / "config.echo.json").write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    (d / "timing.json").write_text(json.dumps({str(m.round): m.wall_clock for m in result.metrics}, indent=2) + "\n")
    ck = d / "checkpoints"
    (ck / "global.ckpt").write_bytes(result.theta_global.serialize())
    for st in result.clients:
        if st.theta_l is not None:
            (ck / f"client{st.client_id}_local.ckpt").write_bytes(st.theta_l.serialize())
    if result.server is not None:
        save_server_state(result.server, ck / "server")
    return d


# ------------------------------------------------------------------ analysis

def rounds_to_target(series: Sequence[float] | Sequence[RoundMetrics], target: float) -> int | None:
    """First (0-indexed) round whose mean accuracy reaches ``target``; None if never."""
    if len(series) == 0:
        raise ValueError("empty metrics series")
    for i, v in enumerate(series):
        val = v.mean_acc if isinstance(v, RoundMetrics) else v
        if val >= target:
            return i
    return None


def read_rounds(run_dir: str | Path) -> list[dict]:
    with open(Path(run_dir) / "rounds.csv", newline="") as f:
        return list(csv.DictReader(f))


def report(run_dirs: Iterable[str | Path], target: float = 0.8, out: str | Path | None = None) -> list[dict]:
    """One row per run: final accuracy, rounds to ``target`` and total uplink summed from ledger.csv."""
    rows = []
    for rd in run_dirs:
        rd = Path(rd)
        try:
            rounds = read_rounds(rd)
            with open(rd / "ledger.csv", newline="") as f:
                ledger = list(csv.DictReader(f))
        except FileNotFoundError as exc:
            log.warning("skipping %s: %s", rd, exc)
            continue
        if not rounds:
            log.warning("skipping %s: empty rounds.csv", rd)
            continue
        scheme = ""
        echo = rd / "config.echo.json"
        if echo.exists():
            scheme = json.loads(echo.read_text()).get("scheme", "")
        elif ledger:
            scheme = ledger[0]["scheme"]
        series = [float(r["mean_acc"]) for r in rounds]
        hit = rounds_to_target(series, target)
        rows.append({"run": str(rd), "scheme": scheme, "rounds": int(rounds[-1]["round"]),
                     "final_mean_acc": rounds[-1]["mean_acc"], "final_std_acc": rounds[-1]["std_acc"],
                     "target": repr(float(target)), "rounds_to_target": "" if hit is None else hit,
                     "total_uplink": sum(int(e["total"]) for e in ledger)})
    if out is not None:
        with open(out, "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            wr.writeheader()
            wr.writerows(rows)
    return rows
