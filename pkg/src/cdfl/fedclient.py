"""Per-client round: personalized model, pseudo-labels, local model, representative selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .clustering import KMeansResult, SelectedSet, kmeans, select_representatives
from .dataio import ClientDataset
from .losses import LossWeights, clustering_loss, contrastive_batch, kd_batch, local_total
from .model import ModelParams, embed, forward_vars
from .numerics import SgdState
from .rng import stream
from .training import train, train_ce


@dataclass(frozen=True)
class ClientConfig:
    local_epochs: int = 5
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    weights: LossWeights = field(default_factory=LossWeights)
    m: int = 7
    restrict_to_cluster: bool = True
    persist_personalized: bool = False
    kmeans_max_iters: int = 50
    kmeans_tol: float = 1e-8

    def sgd(self) -> SgdState:
        return SgdState(self.lr, self.momentum, self.weight_decay)


@dataclass(eq=False)
class ClientState:
    client_id: int
    dataset: ClientDataset  # samples carry their pixelized z
    master_seed: int = 0
    theta_p: ModelParams | None = None
    theta_l: ModelParams | None = None
    last_selected: SelectedSet | None = None
    last_pseudo: KMeansResult | None = None
    last_refresh: KMeansResult | None = None

    def __post_init__(self):
        self._x = self.dataset.originals() if self.dataset.n else None
        self._z = self.dataset.pixelized() if self.dataset.n else None
        self._y = self.dataset.labels

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def z(self) -> np.ndarray:
        return self._z

    @property
    def y(self) -> np.ndarray:
        return self._y

    def rng(self, purpose: str, round_idx: int) -> np.random.Generator:
        return stream(self.master_seed, purpose, round_idx, self.client_id)

    def seed_for(self, purpose: str, round_idx: int) -> int:
        return int(self.rng(purpose, round_idx).integers(2 ** 62))


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    client_id: int
    theta_l: ModelParams
    selected: SelectedSet
    n: int


def train_personalized(state: ClientState, theta_init: ModelParams, epochs: int, batch_size: int,
                       sgd: SgdState, round_idx: int = 0) -> ModelParams:
    """Cross-entropy on original images; batch order from the client's 'personal' stream."""
    if state.dataset.n == 0:
        raise ValueError("empty client dataset")
    return train_ce(theta_init, state.x, state.y, epochs, batch_size, sgd, state.rng("personal", round_idx))


def compute_pseudo_labels(state: ClientState, theta_global: ModelParams, round_idx: int = 0,
                          max_iters: int = 50, tol: float = 1e-8) -> KMeansResult:
    """k-means with k = |C_i| over global-model embeddings of the pixelized images."""
    k = len(state.dataset.classes_present)
    emb = embed(theta_global, state.z)
    return kmeans(emb, k, seed=state.seed_for("kmeans", round_idx), max_iters=max_iters, tol=tol)


def local_batch_loss(state: ClientState, theta_p: ModelParams, pseudo: KMeansResult, w: LossWeights):
    """Batch objective CE(z) + l1*contrastive(z, x) + l2*KD(z, teacher(x)) + l3*clustering(z)."""
    arch = theta_p.arch
    x, z, y = state.x, state.z, state.y

    def fn(tape, pv, idx):
        emb_z, logits_z = forward_vars(arch, pv, z[idx])
        ce = nx.softmax_cross_entropy(logits_z, y[idx])
        con = kd = cl = None
        if len(idx) >= 2:
            if w.lambda1:
                emb_x, _ = forward_vars(arch, pv, x[idx])
                con = contrastive_batch(emb_z, emb_x, w.tau)
            if w.lambda2:
                kd = kd_batch(emb_z, embed(theta_p, x[idx]), w.tau)
        if w.lambda3:
            cl = clustering_loss(emb_z, pseudo.labels[idx], pseudo.centroids)
        return local_total(ce, con, kd, cl, w)

    return fn


def train_local(state: ClientState, theta_init: ModelParams, theta_p: ModelParams, pseudo: KMeansResult,
                w: LossWeights, epochs: int, batch_size: int, sgd: SgdState, round_idx: int = 0) -> ModelParams:
    """Local model on pixelized images; theta_p is a frozen teacher (never updated here).

    Batches of one sample skip the contrastive and distillation terms.
    """
    if state.dataset.n == 0:
        raise ValueError("empty client dataset")
    fn = local_batch_loss(state, theta_p, pseudo, w)
    return train(theta_init, state.dataset.n, fn, epochs, batch_size, sgd, state.rng("local", round_idx))


def refresh_centroids(state: ClientState, theta_l: ModelParams, pseudo: KMeansResult,
                      max_iters: int = 50, tol: float = 1e-8) -> KMeansResult:
    """k-means over local-model embeddings, warm-started from the pseudo-label centroids."""
    return kmeans(embed(theta_l, state.z), len(pseudo.centroids), max_iters=max_iters, tol=tol,
                  init=pseudo.centroids)


def client_round(state: ClientState, theta_global: ModelParams, cfg: ClientConfig, round_idx: int = 0,
                 contribute: bool = True) -> ClientUpdate | None:
    """One full client round. Models are always refreshed; an update is returned only if contributing."""
    if state.dataset.n == 0:
        return None
    p_init = state.theta_p if (cfg.persist_personalized and state.theta_p is not None) else theta_global
    theta_p = train_personalized(state, p_init, cfg.local_epochs, cfg.batch_size, cfg.sgd(), round_idx)
    pseudo = compute_pseudo_labels(state, theta_global, round_idx, cfg.kmeans_max_iters, cfg.kmeans_tol)
    theta_l = train_local(state, theta_global, theta_p, pseudo, cfg.weights, cfg.local_epochs,
                          cfg.batch_size, cfg.sgd(), round_idx)
    refreshed = refresh_centroids(state, theta_l, pseudo, cfg.kmeans_max_iters, cfg.kmeans_tol)
    emb = embed(theta_l, state.z)
    selected = select_representatives(emb, state.dataset.samples, refreshed.centroids, refreshed.labels,
                                      cfg.m, state.client_id, cfg.restrict_to_cluster)
    state.theta_p, state.theta_l = theta_p, theta_l
    state.last_pseudo, state.last_refresh, state.last_selected = pseudo, refreshed, selected
    if not contribute:
        return None
    return ClientUpdate(state.client_id, theta_l, selected, state.dataset.n)
