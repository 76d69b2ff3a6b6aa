"""Scalar objectives for client, server and baseline training.

All batch losses are means over the batch so the weighting coefficients do
not depend on batch size. Inputs may be taped ``Var``s or plain arrays; the
result is always a ``Var`` (take ``float(v.value)`` for the number).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Var


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1   # contrastive
    lambda2: float = 0.1   # distillation
    lambda3: float = 0.05  # clustering
    tau: float = 0.5
    prox_mu: float = 0.0   # FedProx only

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.prox_mu) < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def _v(x) -> Var:
    return x if isinstance(x, Var) else nx.constant(x)


def cross_entropy(logits, y) -> Var:
    """-log softmax(logits)[y]; a (B, C) batch gives the batch mean."""
    logits = _v(logits)
    if logits.value.ndim == 1:
        logits = nx.reshape(logits, (1, -1))
        y = [int(y)]
    return nx.softmax_cross_entropy(logits, np.asarray(y))


def cosine(u, v) -> Var:
    u, v = _v(u), _v(v)
    if u.value.ndim == 1:
        u = nx.reshape(u, (1, -1))
    if v.value.ndim == 1:
        v = nx.reshape(v, (1, -1))
    # l2_normalize_rows rejects zero vectors
    return nx.total(nx.mul(nx.l2_normalize_rows(u), nx.l2_normalize_rows(v)))


def cosine_matrix(a, b) -> Var:
    """Pairwise cosine similarities cos(a_j, b_k), shape (len(a), len(b))."""
    return nx.matmul(nx.l2_normalize_rows(_v(a)), nx.transpose(nx.l2_normalize_rows(_v(b))))


def contrastive_batch(anchors, positives, tau: float) -> Var:
    """In-batch InfoNCE: positive of anchor j is positives[j], negatives are positives[k], k != j.

    Equivalent to softmax cross-entropy over the row cos(a_j, p_.)/tau with target j.
    """
    anchors, positives = _v(anchors), _v(positives)
    b = anchors.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (no negatives otherwise)")
    if positives.shape[0] != b:
        raise ValueError("anchors and positives must have equal batch size")
    if not tau > 0:
        raise ValueError("tau must be positive")
    return nx.softmax_cross_entropy(nx.scale(cosine_matrix(anchors, positives), 1.0 / tau), np.arange(b))


def kd_batch(anchors, teachers, tau: float) -> Var:
    """Same kernel as :func:`contrastive_batch` with teacher embeddings, detached from any tape."""
    t = teachers.value if isinstance(teachers, Var) else teachers
    return contrastive_batch(anchors, nx.constant(t), tau)


def clustering_loss(embeddings, pseudo_labels, centroids) -> Var:
    """Mean distance from each embedding to its assigned (constant) centroid."""
    e = _v(embeddings)
    c = np.asarray(centroids.value if isinstance(centroids, Var) else centroids, dtype=np.float64)
    lab = np.asarray(pseudo_labels, dtype=np.int64)
    if c.ndim == 1:
        c = c[:, None]
    if e.value.ndim == 1:
        e = nx.reshape(e, (-1, 1))
    if lab.shape != (e.shape[0],):
        raise ValueError("one pseudo-label per embedding required")
    if lab.size and (lab.min() < 0 or lab.max() >= len(c)):
        raise ValueError("pseudo-label references a missing centroid")
    return nx.mean(nx.row_norms(nx.sub(e, nx.constant(c[lab]))))


def local_total(ce, con, kd, cl, w: LossWeights) -> Var:
    """ce + lambda1*con + lambda2*kd + lambda3*cl.

    Terms whose weight is zero (or that are None) are left out entirely, so a
    zero-weight objective has exactly the graph, and gradients, of ``ce``.
    """
    out = _v(ce)
    for term, lam in ((con, w.lambda1), (kd, w.lambda2), (cl, w.lambda3)):
        if term is not None and lam != 0:
            out = nx.add(out, nx.scale(_v(term), lam))
    return out


def proximal_term(params: Mapping[str, Var], anchor: Mapping[str, np.ndarray], mu: float) -> Var:
    """(mu/2) * ||theta - theta_anchor||^2 summed over all tensors."""
    acc = None
    for k, p in params.items():
        d = nx.sub(p, nx.constant(anchor[k]))
        s = nx.total(nx.mul(d, d))
        acc = s if acc is None else nx.add(acc, s)
    return nx.scale(acc, mu / 2.0)
