"""Minibatch SGD loop shared by clients, server fine-tuning and baselines."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import numerics as nx
from .model import ArchConfig, ModelParams, forward_vars
from .numerics import GradTape, SgdState, Var

BatchLoss = Callable[[GradTape, dict[str, Var], np.ndarray], Var]


def train(params: ModelParams, n: int, loss_fn: BatchLoss, epochs: int, batch_size: int,
          sgd: SgdState, rng: np.random.Generator) -> ModelParams:
    """Run ``epochs`` passes; each pass shuffles 0..n-1 with ``rng`` and steps per batch.

    ``loss_fn(tape, param_vars, batch_indices)`` builds the batch objective.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    tensors = dict(params.tensors)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            tape = GradTape()
            pv = {k: tape.watch(v, k) for k, v in tensors.items()}
            loss = loss_fn(tape, pv, idx)
            grads = nx.backward(tape, loss)
            tensors = nx.sgd_step(tensors, grads, sgd)
    return params.replace_tensors(tensors)


def ce_loss(arch: ArchConfig, x: np.ndarray, y: np.ndarray) -> BatchLoss:
    """Plain cross-entropy on rows of ``x``."""
    def fn(tape, pv, idx):
        _, logits = forward_vars(arch, pv, x[idx])
        return nx.softmax_cross_entropy(logits, y[idx])
    return fn


def train_ce(params: ModelParams, x: np.ndarray, y: np.ndarray, epochs: int, batch_size: int,
             sgd: SgdState, rng: np.random.Generator) -> ModelParams:
    return train(params, len(y), ce_loss(params.arch, x, y), epochs, batch_size, sgd, rng)
