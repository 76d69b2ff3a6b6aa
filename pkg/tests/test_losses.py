import math

import numpy as np
import pytest

from cdfl import losses
from cdfl import numerics as nx
from cdfl.losses import LossWeights


def _naive_info_nce(a, p, tau):
    b = len(a)
    total = 0.0
    for j in range(b):
        def cos(u, v):
            return sum(x * y for x, y in zip(u, v)) / (math.sqrt(sum(x * x for x in u)) * math.sqrt(sum(y * y for y in v)))
        num = math.exp(cos(a[j], p[j]) / tau)
        den = sum(math.exp(cos(a[j], p[k]) / tau) for k in range(b))
        total += -math.log(num / den)
    return total / b


def test_cross_entropy_confident():
    v = losses.cross_entropy(np.array([10.0, 0, 0, 0]), 0).value
    assert float(v) == pytest.approx(math.log(1 + 3 * math.exp(-10)), rel=1e-12)


def test_cross_entropy_uniform():
    assert float(losses.cross_entropy(np.zeros(4), 2).value) == pytest.approx(math.log(4))


def test_contrastive_two_sample_example():
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = losses.contrastive_batch(a, a.copy(), 0.5).value
    assert float(v) == pytest.approx(math.log(1 + math.exp(-2)), abs=1e-12)
    assert float(v) == pytest.approx(0.126928, abs=1e-6)


@pytest.mark.parametrize("tau", [0.1, 0.5, 2.0])
def test_contrastive_matches_double_loop(rng, tau):
    a, p = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    got = float(losses.contrastive_batch(a, p, tau).value)
    assert got == pytest.approx(_naive_info_nce(a, p, tau), rel=1e-12)


def test_contrastive_rejects_single_sample():
    with pytest.raises(ValueError):
        losses.contrastive_batch(np.ones((1, 3)), np.ones((1, 3)), 0.5)


def test_cosine_bounds_and_zero(rng):
    u, v = rng.normal(size=4), rng.normal(size=4)
    c = float(losses.cosine(u, v).value)
    assert -1 <= c <= 1
    assert float(losses.cosine(u, 3 * u).value) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        losses.cosine(np.zeros(3), v[:3])


def test_kd_teacher_is_detached(rng):
    tape = nx.GradTape()
    a = tape.watch(rng.normal(size=(4, 3)), "a")
    t = tape.watch(rng.normal(size=(4, 3)), "t")
    g = nx.backward(tape, losses.kd_batch(a, t, 0.5))
    assert np.array_equal(g["t"], np.zeros((4, 3)))
    assert np.abs(g["a"]).sum() > 0


def test_clustering_loss_by_hand():
    e = np.array([[3.0, 4.0], [1.0, 1.0]])
    c = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert float(losses.clustering_loss(e, [0, 1], c).value) == pytest.approx(2.5)
    assert float(losses.clustering_loss(c, [0, 1], c).value) == 0.0
    with pytest.raises(ValueError):
        losses.clustering_loss(e, [0, 2], c)


def test_zero_weights_give_exactly_ce(rng):
    tape = nx.GradTape()
    w = tape.watch(rng.normal(size=(3, 4)), "w")
    logits = nx.matmul(nx.constant(rng.normal(size=(5, 3))), w)
    ce = nx.softmax_cross_entropy(logits, [0, 1, 2, 3, 0])
    extra = nx.total(nx.mul(w, w))
    total = losses.local_total(ce, extra, extra, extra, LossWeights(0, 0, 0))
    assert total is ce


def test_local_total_weighting():
    w = LossWeights(0.1, 0.2, 0.3)
    v = losses.local_total(nx.constant(1.0), nx.constant(2.0), nx.constant(3.0), nx.constant(4.0), w)
    assert float(v.value) == pytest.approx(1 + 0.2 + 0.6 + 1.2)


def test_proximal_term(rng):
    p = {"a": nx.constant(np.array([1.0, 2.0])), "b": nx.constant(np.array(3.0))}
    anchor = {"a": np.array([0.0, 0.0]), "b": np.array(1.0)}
    assert float(losses.proximal_term(p, anchor, 0.5).value) == pytest.approx(0.25 * (1 + 4 + 4))


def test_invalid_weights():
    with pytest.raises(ValueError):
        LossWeights(lambda1=-0.1)
    with pytest.raises(ValueError):
        LossWeights(tau=0)
