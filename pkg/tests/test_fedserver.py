import numpy as np
import pytest

from cdfl import model
from cdfl.clustering import SelectedSet
from cdfl.dataio import Image
from cdfl.fedclient import ClientUpdate
from cdfl.fedserver import (OverheadLedger, RoundStats, ServerState, StoredSet, aggregate, load_server_state,
                            rank_and_select, round_half_up, save_server_state, selection_size, server_finetune,
                            split_selected, uplink_overhead, uplink_parts)
from cdfl.numerics import SgdState


def _selected(n, labels=None, cid=0):
    labels = labels if labels is not None else [i % 2 for i in range(n)]
    z = tuple(Image(np.full((1, 4, 4), i / max(n, 1))) for i in range(n))
    return SelectedSet(cid, tuple(range(n)), z, tuple(labels), ())


def test_round_half_up():
    assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 0.49, 0.5 * 3)] == [1, 2, 3, 0, 2]
    assert selection_size(0.5, 8) == 4 and selection_size(0.01, 8) == 1


def test_aggregate_weighted_mean(small_arch):
    a, b = model.init(0, small_arch), model.init(1, small_arch)
    out, flagged = aggregate([ClientUpdate(1, b, None, 30), ClientUpdate(0, a, None, 10)])
    assert not flagged
    for k in a.tensors:
        np.testing.assert_allclose(out.tensors[k], 0.25 * a.tensors[k] + 0.75 * b.tensors[k], atol=1e-15)


def test_aggregate_even_weights_equal_mean(small_arch):
    ms = [model.init(i, small_arch) for i in range(3)]
    out, _ = aggregate([ClientUpdate(i, m, None, 5) for i, m in enumerate(ms)])
    k = "embed.w"
    np.testing.assert_allclose(out.tensors[k], np.mean([m.tensors[k] for m in ms], axis=0), atol=1e-14)


def test_aggregate_empty_keeps_previous(small_arch):
    prev = model.init(0, small_arch)
    out, flagged = aggregate([], prev)
    assert flagged and out is prev
    with pytest.raises(ValueError):
        aggregate([])


def test_split_stratified_and_complete():
    sel = _selected(10, [0] * 5 + [1] * 5)
    s = split_selected(sel, 0.2, np.random.default_rng(0))
    assert len(s.val_y) == 2 and sorted(s.val_y.tolist()) == [0, 1]
    assert len(s.train_y) + len(s.val_y) == 10
    both = np.concatenate([s.train_x, s.val_x]).reshape(10, -1)[:, 0]
    assert sorted(both.tolist()) == sorted(sel.pixels().reshape(10, -1)[:, 0].tolist())


def test_split_edge_sizes():
    one = split_selected(_selected(1), 0.2, np.random.default_rng(0))
    assert len(one.val_y) == 1 and len(one.train_y) == 0
    two = split_selected(_selected(2), 0.9, np.random.default_rng(0))
    assert len(two.val_y) == 1 and len(two.train_y) == 1
    with pytest.raises(ValueError):
        split_selected(_selected(0), 0.2, np.random.default_rng(0))


def test_rank_and_select(small_arch):
    theta = model.init(0, small_arch)
    x = np.random.default_rng(0).uniform(size=(6, 1, 16, 16))
    pred = model.predict(theta, x)
    wrong = (pred + 1) % 4
    store = {
        0: StoredSet(0, x[:0], pred[:0], x[:3], wrong[:3]),
        1: StoredSet(1, x[:0], pred[:0], x[:3], pred[:3]),
        2: StoredSet(2, x[:0], pred[:0], x[3:], pred[3:]),
    }
    assert rank_and_select(theta, store, 0.5, 4) == (1, 2)   # client 3 has no set: ranks last
    assert rank_and_select(theta, store, 0.25, 4) == (1,)    # tie 1 vs 2 goes to the lower id
    assert rank_and_select(theta, store, 0.5, 4, pool=[0, 3]) == (0,)


def test_finetune_noop_on_empty_store(small_arch):
    theta = model.init(0, small_arch)
    assert server_finetune(theta, {}, 2, 8, SgdState(), np.random.default_rng(0)) is theta


def test_table_overheads():
    st = RoundStats(24_100_000, num_clients=100, participation=0.8)
    assert uplink_overhead("fedavg", st) == 1_928_000_000
    assert uplink_overhead("scaffold", st) == 3_856_000_000
    assert uplink_overhead("fedprox", st) == uplink_overhead("fedavg", st)
    assert uplink_overhead("solo", st) == 0
    hkd = RoundStats(100, num_clients=10, participation=0.5, num_classes=4, embed_dim=8)
    assert uplink_overhead("fedhkd", hkd) == 5 * (100 + 4 * 12)


def test_cdfl_overhead_by_hand():
    st = RoundStats(1000, image_size=256, selected_sizes=(5, 7, 0, 12, 3))
    assert uplink_parts("cdfl", st) == (5000, 27 * 256)
    assert uplink_overhead("cdfl", RoundStats(1000, image_size=256, selected_sizes=(12,) * 5)) == 5 * (1000 + 12 * 256)
    with pytest.raises(ValueError):
        uplink_overhead("nope", st)


def test_ledger_accumulates():
    led = OverheadLedger()
    led.record(1, "fedavg", RoundStats(10, n_connected=3), 3)
    led.record(2, "fedavg", RoundStats(10, n_connected=2), 2)
    assert led.total() == 50 and led.entries[0].formula == "pN|theta|"


def test_server_state_round_trip(tmp_path, small_arch):
    s = split_selected(_selected(6), 0.2, np.random.default_rng(1), round_received=3)
    state = ServerState(model.init(0, small_arch), 4, {2: s}, (1, 2), 5)
    save_server_state(state, tmp_path)
    back = load_server_state(tmp_path)
    assert back.theta_global.equal(state.theta_global)
    assert back.chosen == (1, 2) and back.round == 5 and back.num_clients == 4
    assert back.store[2].digest() == s.digest() and back.store[2].round_received == 3
