import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdfl import dataio
from cdfl.dataio import Image, PartitionSpec


def test_image_validates_masks():
    with pytest.raises(ValueError):
        Image(np.zeros((1, 4, 4)), ((0, 0, 5, 2),))
    with pytest.raises(ValueError):
        Image(np.zeros((4, 4)))


def test_synth_shapes_and_labels():
    ds = dataio.synth_generate(3, 5, 16, 0.1, seed=1)
    assert len(ds) == 15 and ds.image_shape == (1, 16, 16)
    assert np.bincount(ds.labels).tolist() == [5, 5, 5]
    px = ds.originals()
    assert px.min() >= 0 and px.max() <= 1
    assert np.array_equal(np.round(px * 65535) / 65535, px)
    for s in ds.samples:
        assert s.x.mask_regions == (dataio.face_box(16),)


def test_synth_deterministic():
    a = dataio.synth_generate(4, 3, 16, 0.2, seed=9).originals()
    b = dataio.synth_generate(4, 3, 16, 0.2, seed=9).originals()
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != dataio.synth_generate(4, 3, 16, 0.2, seed=10).originals().tobytes()


def test_largest_remainder_sums():
    out = dataio._largest_remainder(np.array([1.0, 1.0, 1.0]), 10)
    assert out.tolist() == [4, 3, 3]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(0.05, 10), st.integers(0, 10_000), st.integers(2, 5))
def test_partition_is_a_partition(n_clients, alpha, seed, n_classes):
    labels = np.arange(60) % n_classes
    parts = dataio.dirichlet_partition(labels, PartitionSpec(n_clients, alpha, seed))
    assert len(parts) == n_clients
    flat = sorted(i for p in parts for i in p)
    assert flat == list(range(60))
    assert all(len(p) >= 1 for p in parts)


def test_partition_deterministic_and_skewed():
    labels = np.arange(400) % 4
    a = dataio.dirichlet_partition(labels, PartitionSpec(8, 0.1, 3))
    b = dataio.dirichlet_partition(labels, PartitionSpec(8, 0.1, 3))
    assert a == b
    # small alpha concentrates each client on few classes
    dominant = [np.bincount(labels[p], minlength=4).max() / len(p) for p in a]
    assert np.mean(dominant) > 0.6


def test_partition_rejects_too_few_samples():
    with pytest.raises(ValueError):
        dataio.dirichlet_partition([0, 1], PartitionSpec(3, 1.0))
    with pytest.raises(ValueError):
        PartitionSpec(2, 0.0)


def test_train_test_split_stratified():
    ds = dataio.synth_generate(4, 10, 16, 0.1)
    tr, te = dataio.train_test_split(ds, 0.25, seed=0)
    assert len(tr) + len(te) == 40
    assert np.bincount(te.labels).tolist() == [3, 3, 3, 3]  # round_half_up(2.5)
    ids = {s.sample_id for s in tr.samples} | {s.sample_id for s in te.samples}
    assert len(ids) == 40


def test_single_sample_class_stays_in_train():
    ds = dataio.synth_generate(2, 1, 16, 0.1)
    tr, te = dataio.train_test_split(ds, 0.5, seed=0)
    assert len(tr) == 2 and len(te) == 0


def test_disk_round_trip(tmp_path):
    ds = dataio.synth_generate(3, 4, 16, 0.3, seed=2)
    dataio.save_dataset(ds, tmp_path / "d")
    back = dataio.load_dataset(tmp_path / "d")
    assert back.num_classes == 3
    assert [s.sample_id for s in back.samples] == [s.sample_id for s in ds.samples]
    assert back.labels.tolist() == ds.labels.tolist()
    assert back.originals().tobytes() == ds.originals().tobytes()
    assert [s.x.mask_regions for s in back.samples] == [s.x.mask_regions for s in ds.samples]


def test_rgb_round_trip(tmp_path):
    ds = dataio.synth_generate(2, 2, 8, 0.1, seed=0, channels=3)
    dataio.save_dataset(ds, tmp_path)
    assert (tmp_path / "images" / "s00000.ppm").exists()
    assert dataio.load_dataset(tmp_path).originals().tobytes() == ds.originals().tobytes()


def test_partition_file_round_trip(tmp_path):
    ds = dataio.synth_generate(4, 5, 16, 0.1)
    parts = dataio.dirichlet_partition(ds.labels, PartitionSpec(3, 0.5, 1))
    dataio.write_partition(ds, parts, tmp_path / "p.csv")
    assert dataio.read_partition(ds, tmp_path / "p.csv") == parts
    clients = dataio.client_datasets(ds, parts)
    assert sum(c.n for c in clients) == 20
    assert clients[1].client_id == 1
