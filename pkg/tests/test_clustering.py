import warnings

import numpy as np
import pytest

from _oracles import nearest_centroid, random_instance, select_all_sorted
from cdfl import clustering
from cdfl.dataio import Image, Sample


def _samples(n, with_z=True):
    img = Image(np.zeros((1, 2, 2)))
    return [Sample(f"s{i}", img, i % 3, img if with_z else None) for i in range(n)]


@pytest.mark.parametrize("integer", [False, True])
def test_select_and_assign_match_bruteforce(integer):
    rng = np.random.default_rng(11 + integer)
    for _ in range(40):
        pts, cen, m = random_instance(rng, integer)
        labels = clustering.assign_pseudo_labels(pts, cen)
        assert labels.tolist() == nearest_centroid(pts, cen)
        for restrict in (True, False):
            sel = clustering.select_representatives(pts, _samples(len(pts)), cen, labels, m,
                                                    restrict_to_cluster=restrict)
            union, picks = select_all_sorted(pts, cen, labels, m, restrict)
            assert sel.indices == union and sel.per_cluster == picks


def test_tie_goes_to_lower_index():
    pts = np.array([[1.0], [-1.0], [1.0]])
    cen = np.array([[0.0]])
    sel = clustering.select_representatives(pts, _samples(3), cen, [0, 0, 0], 2)
    assert sel.indices == (0, 1)
    assert clustering.assign_pseudo_labels([[0.0]], [[1.0], [-1.0]]).tolist() == [0]


def test_selection_needs_pixelized():
    with pytest.raises(ValueError):
        clustering.select_representatives(np.zeros((2, 1)), _samples(2, False), np.zeros((1, 1)), [0, 0], 1)


def test_small_cluster_gives_all_members():
    pts = np.array([[0.0], [0.1], [10.0]])
    sel = clustering.select_representatives(pts, _samples(3), [[0.0], [10.0]], [0, 0, 1], 5)
    assert sel.per_cluster == ((0, 1), (2,))
    assert sel.labels().tolist() == [0, 1, 2]


def test_lloyd_objective_non_increasing():
    rng = np.random.default_rng(5)
    for t in range(30):
        x = rng.normal(size=(int(rng.integers(5, 60)), 3))
        res = clustering.kmeans(x, int(rng.integers(1, 5)), seed=t)
        h = np.array(res.sse_history)
        assert np.all(np.diff(h) <= 1e-12 * max(1.0, h[0]))


def test_k_equals_one_is_mean(rng):
    x = rng.normal(size=(40, 4))
    res = clustering.kmeans(x, 1)
    np.testing.assert_allclose(res.centroids[0], x.mean(axis=0), atol=1e-10)
    want = np.linalg.norm(x - x.mean(axis=0), axis=1).sum()
    assert res.objective == pytest.approx(want, rel=1e-12)


def test_k_clamped_warns():
    with pytest.warns(RuntimeWarning):
        res = clustering.kmeans(np.arange(3.0), 5)
    assert res.k_clamped and len(res.centroids) == 3


def test_no_empty_clusters_with_duplicates():
    x = np.array([[0.0]] * 5 + [[1.0]] * 5)
    res = clustering.kmeans(x, 3, seed=0)
    assert len(set(res.labels.tolist())) == 3


def test_warm_start_and_determinism(rng):
    x = rng.normal(size=(30, 2))
    a, b = clustering.kmeans(x, 3, seed=4), clustering.kmeans(x, 3, seed=4)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    warm = clustering.kmeans(x, 3, init=a.centroids)
    assert warm.n_iter <= 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(ValueError):
            clustering.kmeans(x, 3, init=np.zeros((3, 5)))


def test_separated_blobs_recovered():
    rng = np.random.default_rng(0)
    centers = np.array([[0, 0], [10, 0], [0, 10]], dtype=float)
    x = np.concatenate([c + 0.1 * rng.normal(size=(20, 2)) for c in centers])
    res = clustering.kmeans(x, 3, seed=1)
    groups = [set(res.labels[i * 20:(i + 1) * 20].tolist()) for i in range(3)]
    assert all(len(g) == 1 for g in groups) and len(set.union(*groups)) == 3
