import numpy as np
import pytest

from cdfl import dataio, model
from cdfl.baselines import BaselineConfig, baseline_round, fedavg_local, fedprox_local, solo_train
from cdfl.dataio import ClientDataset
from cdfl.fedclient import ClientState


def _clients(ds, groups):
    out = []
    for cid, classes in enumerate(groups):
        samples = tuple(s for s in ds.samples if s.y in classes)
        out.append(ClientState(cid, ClientDataset(cid, samples, ds.num_classes), 0))
    return out


def test_fedprox_zero_mu_is_fedavg(separable, small_arch):
    st = _clients(separable, [{0, 1}])[0]
    theta = model.init(0, small_arch)
    cfg = BaselineConfig(epochs=1, batch_size=8)
    assert fedprox_local(st, theta, 0.0, cfg, 1).equal(fedavg_local(st, theta, cfg, 1))


def test_fedprox_stays_closer_to_anchor(separable, small_arch):
    st = _clients(separable, [{0, 1}])[0]
    theta = model.init(0, small_arch)
    cfg = BaselineConfig(epochs=2, batch_size=8, lr=0.05)

    def drift(m):
        return sum(np.sum((m.tensors[k] - theta.tensors[k]) ** 2) for k in theta.tensors)

    assert drift(fedprox_local(st, theta, 5.0, cfg, 1)) < drift(fedavg_local(st, theta, cfg, 1))


def test_baseline_round_aggregates(separable, small_arch):
    clients = _clients(separable, [{0}, {1, 2}, {3}])
    theta = model.init(0, small_arch)
    new, trained = baseline_round(clients, theta, BaselineConfig(epochs=1, batch_size=8), 1)
    assert sorted(trained) == [0, 1, 2]
    w = np.array([c.dataset.n for c in clients], dtype=float)
    w /= w.sum()
    want = sum(wi * trained[i].tensors["head.b"] for i, wi in enumerate(w))
    np.testing.assert_allclose(new.tensors["head.b"], want, atol=1e-15)


def test_solo_reports_accuracy(separable, small_arch):
    st = _clients(separable, [{0, 1, 2, 3}])[0]
    cfg = BaselineConfig("solo", epochs=1, batch_size=8, solo_epochs=3, lr=0.05)
    theta, acc = solo_train(st, model.init(0, small_arch), cfg, st.x, st.y)
    assert 0.0 <= acc <= 1.0 and st.theta_l is theta


def test_invalid_config():
    with pytest.raises(ValueError):
        BaselineConfig("scaffold")
    with pytest.raises(ValueError):
        BaselineConfig(prox_mu=-1)
