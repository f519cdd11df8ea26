"""SpatialIndex queries against a brute-force KNN oracle."""

import numpy as np
import pytest

from annot3d.errors import ValidationError
from annot3d.knn import SpatialIndex


def brute_force_knn(positions: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    """Exhaustive scan; ties on distance broken by smaller id."""
    d2 = np.sum((positions - q) ** 2, axis=1)
    order = np.lexsort((np.arange(len(positions)), d2))
    return order[: min(k, len(positions))]


def test_single_point_index():
    idx = SpatialIndex(np.array([[1.0, 2.0, 3.0]]))
    assert list(idx.query_one([9.0, 9.0, 9.0], k=4)) == [0]


def test_coincident_query_point_first():
    pts = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]], dtype=float)
    idx = SpatialIndex(pts)
    got = idx.query_one([1.0, 1.0, 1.0], k=2)
    assert got[0] == 1


def test_matches_brute_force_oracle(rng):
    pts = rng.uniform(-3, 3, size=(2000, 3))
    idx = SpatialIndex(pts)
    queries = rng.uniform(-3, 3, size=(100, 3))
    got = idx.query(queries, k=7)
    for i, q in enumerate(queries):
        expected = brute_force_knn(pts, q, 7)
        assert np.array_equal(got[i], expected), f"query {i} mismatch"


def test_tie_breaking_matches_oracle_on_grid(rng):
    # Integer grid positions create massive exact-distance ties.
    g = np.stack(np.meshgrid(np.arange(5), np.arange(5), np.arange(5),
                             indexing="ij"), axis=-1).reshape(-1, 3).astype(float)
    perm = rng.permutation(len(g))
    pts = g[perm]
    idx = SpatialIndex(pts)
    queries = np.array([[2, 2, 2], [0, 0, 0], [2.5, 2.5, 2.5], [1, 2, 3],
                        [4, 4, 4], [0.5, 0, 0]], dtype=float)
    for k in (1, 2, 5, 8, 27):
        got = idx.query(queries, k=k)
        for i, q in enumerate(queries):
            expected = brute_force_knn(pts, q, k)
            assert np.array_equal(got[i], expected), (k, i)


def test_duplicate_positions_tie_by_id():
    pts = np.array([[1, 1, 1], [0, 0, 0], [1, 1, 1], [1, 1, 1]], dtype=float)
    idx = SpatialIndex(pts)
    got = idx.query_one([1, 1, 1], k=2)
    assert list(got) == [0, 2]


def test_k_larger_than_size():
    pts = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    idx = SpatialIndex(pts)
    got = idx.query_one([0.1, 0, 0], k=10)
    assert list(got) == [0, 1]


def test_custom_ids():
    pts = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    idx = SpatialIndex(pts, ids=np.array([42, 7]))
    assert list(idx.query_one([0.9, 0, 0], k=2)) == [7, 42]


def test_empty_rejected():
    with pytest.raises(ValidationError):
        SpatialIndex(np.zeros((0, 3)))
    with pytest.raises(ValidationError):
        SpatialIndex(np.zeros((3, 3))).query(np.zeros(3), k=0)
