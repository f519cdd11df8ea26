"""K-nearest-neighbor index over element positions.

Backed by scipy's cKDTree with one extra guarantee the tree alone does
not give: results are sorted by (distance, element id), so queries are
fully deterministic even when several elements sit at exactly the same
distance. Ties at the k-th distance are resolved by re-querying the tie
radius and keeping the smallest ids.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError


class SpatialIndex:
    """Nearest-neighbor queries over (N,3) positions with stable ties."""

    def __init__(self, positions: np.ndarray, ids: Optional[np.ndarray] = None):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3 or len(positions) == 0:
            raise ValidationError("spatial index needs a non-empty (N,3) position array")
        self.positions = positions
        self.ids = (np.arange(len(positions), dtype=np.int64) if ids is None
                    else np.asarray(ids, dtype=np.int64))
        if len(self.ids) != len(positions):
            raise ValidationError("ids must match positions")
        self._tree = cKDTree(positions)

    def __len__(self) -> int:
        return len(self.positions)

    def _resolve_tie(self, q: np.ndarray, k: int, dmax: float) -> np.ndarray:
        """Smallest-id k-set when several points sit at the k-th distance."""
        cand = np.asarray(self._tree.query_ball_point(q, r=dmax * (1 + 1e-12)),
                          dtype=np.int64)
        d2 = np.einsum("ij,ij->i", self.positions[cand] - q, self.positions[cand] - q)
        order = np.lexsort((cand, d2))
        return cand[order[:k]]

    def query(self, points: np.ndarray, k: int) -> np.ndarray:
        """Element ids of the min(k, N) nearest positions per query point.

        points: (3,) or (Q,3). Returns (Q, k_eff) int64 ids ordered by
        non-decreasing distance, ties by smaller id.
        """
        if k < 1:
            raise ValidationError("k must be >= 1")
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(self.positions)
        k_eff = min(k, n)
        # One extra neighbor reveals whether the k-th distance is tied with
        # anything outside the returned set.
        k_probe = min(k_eff + 1, n)
        dists, rows = self._tree.query(points, k=k_probe)
        # cKDTree squeezes the neighbor axis when k == 1.
        dists = np.asarray(dists, dtype=np.float64).reshape(len(points), k_probe)
        rows = np.asarray(rows, dtype=np.int64).reshape(len(points), k_probe)

        out = np.empty((len(points), k_eff), dtype=np.int64)
        for i in range(len(points)):
            d, r = dists[i], rows[i]
            boundary_tie = k_probe > k_eff and (d[k_eff] == d[k_eff - 1])
            if boundary_tie and d[k_eff] > 0:
                out[i] = self._resolve_tie(points[i], k_eff, float(d[k_eff]))
            elif boundary_tie:
                # All candidates coincide with the query point: take smallest ids
                # among every zero-distance point.
                cand = np.asarray(self._tree.query_ball_point(points[i], r=0.0),
                                  dtype=np.int64)
                out[i] = np.sort(cand)[:k_eff]
            else:
                order = np.lexsort((r[:k_eff], d[:k_eff]))
                out[i] = r[:k_eff][order]
        return self.ids[out]

    def query_one(self, point: np.ndarray, k: int) -> np.ndarray:
        """1D convenience wrapper around query()."""
        return self.query(point, k)[0]


def build_spatial_index(positions: np.ndarray,
                        ids: Optional[np.ndarray] = None) -> SpatialIndex:
    return SpatialIndex(positions, ids)
