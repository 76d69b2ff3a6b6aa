"""FedAvg, FedProx and SOLO on the same model, data and RNG discipline as CDFL.

Client training here draws its batch order from the same 'local' stream the
CDFL local model uses, so a CDFL run with every extra term disabled follows
exactly the FedAvg trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .fedclient import ClientState, ClientUpdate
from .fedserver import aggregate
from .losses import proximal_term
from .model import ModelParams, accuracy_arrays, forward_vars
from .numerics import SgdState
from .training import train, train_ce

BASELINES = ("fedavg", "fedprox", "solo")


@dataclass(frozen=True)
class BaselineConfig:
    scheme: str = "fedavg"
    prox_mu: float = 0.01
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    solo_epochs: int = 100

    def __post_init__(self):
        if self.scheme not in BASELINES:
            raise ValueError(f"scheme must be one of {BASELINES}")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be non-negative")

    def sgd(self) -> SgdState:
        return SgdState(self.lr, self.momentum, self.weight_decay)


def fedavg_local(state: ClientState, theta: ModelParams, cfg: BaselineConfig, round_idx: int) -> ModelParams:
    return train_ce(theta, state.x, state.y, cfg.epochs, cfg.batch_size, cfg.sgd(), state.rng("local", round_idx))


def fedprox_local(state: ClientState, theta: ModelParams, prox_mu: float, cfg: BaselineConfig,
                  round_idx: int) -> ModelParams:
    """CE + (prox_mu/2)||w - theta||^2 on original images; prox_mu = 0 is exactly FedAvg."""
    if prox_mu < 0:
        raise ValueError("prox_mu must be non-negative")
    if prox_mu == 0:
        return fedavg_local(state, theta, cfg, round_idx)
    anchor = {k: v.copy() for k, v in theta.tensors.items()}
    x, y, arch = state.x, state.y, theta.arch

    def fn(tape, pv, idx):
        _, logits = forward_vars(arch, pv, x[idx])
        return nx.add(nx.softmax_cross_entropy(logits, y[idx]), proximal_term(pv, anchor, prox_mu))

    return train(theta, state.dataset.n, fn, cfg.epochs, cfg.batch_size, cfg.sgd(), state.rng("local", round_idx))


def baseline_round(clients: Sequence[ClientState], theta: ModelParams, cfg: BaselineConfig,
                   round_idx: int) -> tuple[ModelParams, dict[int, ModelParams]]:
    """One FedAvg/FedProx round over the given (connected) clients.

    Returns the aggregated global model and each client's trained model.
    """
    updates, trained = [], {}
    for st in sorted(clients, key=lambda s: s.client_id):
        if st.dataset.n == 0:
            continue
        if cfg.scheme == "fedprox":
            local = fedprox_local(st, theta, cfg.prox_mu, cfg, round_idx)
        else:
            local = fedavg_local(st, theta, cfg, round_idx)
        st.theta_l = local
        trained[st.client_id] = local
        updates.append(ClientUpdate(st.client_id, local, None, st.dataset.n))
    new, _ = aggregate(updates, previous=theta)
    return new, trained


def fedavg_round(clients: Sequence[ClientState], theta: ModelParams, cfg: BaselineConfig,
                 round_idx: int = 1) -> ModelParams:
    return baseline_round(clients, theta, cfg, round_idx)[0]


def solo_train(state: ClientState, theta_init: ModelParams, cfg: BaselineConfig,
               test_x: np.ndarray | None = None, test_y: np.ndarray | None = None) -> tuple[ModelParams, float | None]:
    """Isolated CE training for ``cfg.solo_epochs``; returns the model and its test accuracy if given."""
    theta = train_ce(theta_init, state.x, state.y, cfg.solo_epochs, cfg.batch_size, cfg.sgd(),
                     state.rng("solo", 0))
    state.theta_l = theta
    acc = accuracy_arrays(theta, test_x, test_y) if test_x is not None else None
    return theta, acc
