import itertools

import numpy as np
import pytest

from cgt.autodiff import ContractError
from cgt.community import DataError, default_cluster_count, kmeans, same_cluster


def _blobs(rng, per=5):
    a = rng.normal(size=(per, 2)) * 0.5 + 10
    b = rng.normal(size=(per, 2)) * 0.5 - 10
    return np.vstack([a, b]), np.array([0] * per + [1] * per)


def test_two_blobs_recovered(rng):
    X, truth = _blobs(rng)
    c = kmeans(X, 2, seed=0)
    # same partition up to relabeling
    assert len({(a, b) for a, b in zip(c.assign, truth)}) == 2
    for k in range(2):
        assert np.allclose(c.centroids[k], X[c.assign == k].mean(0), atol=1e-9)


def test_m_equals_one_and_n(rng):
    X = rng.normal(size=(7, 3))
    c = kmeans(X, 1)
    assert np.all(c.assign == 0) and np.allclose(c.centroids[0], X.mean(0))
    c = kmeans(X, 7)
    assert sorted(c.assign.tolist()) == list(range(7)) and c.inertia == pytest.approx(0.0, abs=1e-12)


def test_errors(rng):
    with pytest.raises(ContractError):
        kmeans(rng.normal(size=(3, 2)), 4)
    with pytest.raises(ContractError):
        kmeans(rng.normal(size=(3, 2)), 0)
    X = rng.normal(size=(3, 2))
    X[1, 0] = np.nan
    with pytest.raises(DataError):
        kmeans(X, 2)


def test_determinism_and_inertia_descent(rng):
    X = rng.normal(size=(60, 4))
    a, b = kmeans(X, 5, seed=9), kmeans(X, 5, seed=9)
    assert np.array_equal(a.assign, b.assign) and np.array_equal(a.centroids, b.centroids)
    assert a.history[-1] <= a.history[0] + 1e-12
    assert all(x >= y - 1e-9 for x, y in zip(a.history[1:], a.history[2:]))


def test_duplicate_points_do_not_break_seeding():
    X = np.zeros((5, 2))
    c = kmeans(X, 3)
    assert c.inertia == 0.0 and set(c.assign) <= {0, 1, 2}


def test_same_cluster_is_equivalence(rng):
    X = rng.normal(size=(12, 2))
    c = kmeans(X, 3, seed=1)
    n = len(X)
    for i in range(n):
        assert same_cluster(c, i, i)
    for i, j in itertools.product(range(n), repeat=2):
        assert same_cluster(c, i, j) == same_cluster(c, j, i)
    for i, j, k in itertools.product(range(n), repeat=3):
        if same_cluster(c, i, j) and same_cluster(c, j, k):
            assert same_cluster(c, i, k)
    one = kmeans(X, 1)
    assert all(same_cluster(one, i, j) for i in range(n) for j in range(n))
    each = kmeans(X, n)
    assert not any(same_cluster(each, i, j) for i in range(n) for j in range(n) if i != j)


def test_default_cluster_count():
    assert default_cluster_count(100, 7) == 7
    assert default_cluster_count(10, 0) == 4
