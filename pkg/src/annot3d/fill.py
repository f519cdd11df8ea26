"""KNN label filling.

Unlabeled elements take the majority label of their K nearest labeled
neighbors. The uncertainty-aware variant additionally re-labels elements
whose fused-vote uncertainty exceeds a threshold th_u, voting with
per-source weights instead of plain counts.

Both variants run in a single pass from the original source set: filled
elements never vote, so the result is independent of element iteration
order and labels cannot bleed across large empty regions.

Weighting rules: "confidence" (default) weighs each source by 1 - u, so
reliable neighbors dominate. "paper-literal" weighs by u itself, kept
selectable for comparison experiments even though it up-weights the
least reliable neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import MismatchError, ValidationError
from .fusion import UncertaintyMap
from .knn import SpatialIndex
from .labels import LabelMap

WEIGHTING_RULES = ("confidence", "paper-literal")


@dataclass(frozen=True)
class FillConfig:
    k: int = 5
    th_u: Optional[float] = None
    weighting: str = "confidence"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError("K must be a positive integer")
        object.__setattr__(self, "k", int(self.k))
        if self.th_u is not None and not (0.0 <= self.th_u <= 1.0):
            raise ValidationError(f"th_u must lie in [0,1], got {self.th_u}")
        if self.weighting not in WEIGHTING_RULES:
            raise ValidationError(
                f"unknown weighting rule '{self.weighting}' (use one of {WEIGHTING_RULES})")


def _positions_array(positions) -> np.ndarray:
    pts = np.asarray(positions, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValidationError("positions must be a non-empty (N,3) array")
    return pts


def _check_extent(labels: LabelMap, n: int) -> None:
    if labels.num_elements is not None and labels.num_elements != n:
        raise MismatchError(
            f"label map covers {labels.num_elements} elements, positions give {n}")
    if labels.labels and max(labels.labels) >= n:
        raise MismatchError("label map references elements beyond the position array")


def _weighted_vote(positions: np.ndarray, sources: np.ndarray,
                   source_labels: np.ndarray, weights: np.ndarray,
                   targets: np.ndarray, k: int) -> np.ndarray:
    """Label per target: argmax of the weight histogram over the K nearest
    sources, ties resolved toward the smallest label id."""
    index = SpatialIndex(positions[sources])
    neighbors = index.query(positions[targets], k=min(k, len(sources)))  # (T,kk)
    uniq_labels, label_col = np.unique(source_labels, return_inverse=True)
    num_t, kk = neighbors.shape
    hist = np.zeros((num_t, len(uniq_labels)))
    present = np.zeros_like(hist, dtype=bool)
    rows = np.repeat(np.arange(num_t), kk)
    cols = label_col[neighbors].reshape(-1)
    np.add.at(hist, (rows, cols), weights[neighbors].reshape(-1))
    present[rows, cols] = True
    hist[~present] = -np.inf
    # argmax returns the first maximum; columns are sorted by label id.
    return uniq_labels[np.argmax(hist, axis=1)]


def fill_unlabeled(labels: LabelMap, positions, config: Optional[FillConfig] = None) -> LabelMap:
    """Assign every unlabeled element the majority label of its K nearest
    labeled elements (ties toward the smallest label id)."""
    config = config or FillConfig()
    pts = _positions_array(positions)
    n = len(pts)
    _check_extent(labels, n)
    if not labels.labels:
        raise ValidationError("cannot fill: no labeled elements")
    sources = np.fromiter(sorted(labels.labels), dtype=np.int64)
    if len(sources) == n:
        return LabelMap(labels.scene_id, labels.kind, dict(labels.labels),
                        num_elements=n)
    mask = np.ones(n, dtype=bool)
    mask[sources] = False
    targets = np.nonzero(mask)[0]
    source_labels = np.fromiter((labels.labels[int(s)] for s in sources),
                                dtype=np.int64, count=len(sources))
    chosen = _weighted_vote(pts, sources, source_labels,
                            np.ones(len(sources)), targets, config.k)
    merged = dict(labels.labels)
    merged.update({int(t): int(l) for t, l in zip(targets, chosen)})
    return LabelMap(labels.scene_id, labels.kind, merged, num_elements=n)


def fill_with_uncertainty(labels: LabelMap, uncertainty: UncertaintyMap,
                          positions, config: FillConfig) -> LabelMap:
    """Re-label unlabeled and high-uncertainty elements from confident
    neighbors.

    Sources are labeled elements with u <= th_u; targets are the rest
    (unlabeled, plus labeled with u > th_u). A labeled element absent from
    the uncertainty map counts as fully confident (u = 0). Each target
    takes the argmax of the weighted histogram over its K nearest sources.
    """
    if config is None or config.th_u is None:
        raise ValidationError("fill_with_uncertainty needs a config with th_u set")
    pts = _positions_array(positions)
    n = len(pts)
    _check_extent(labels, n)
    if labels.kind != uncertainty.kind:
        raise MismatchError(
            f"label map is over '{labels.kind}' elements, uncertainty over "
            f"'{uncertainty.kind}'")
    if not labels.labels:
        raise ValidationError("cannot fill: no labeled elements")

    labeled = np.fromiter(sorted(labels.labels), dtype=np.int64)
    u = np.fromiter((uncertainty.u_of(int(e)) for e in labeled),
                    dtype=np.float64, count=len(labeled))
    confident = u <= config.th_u
    sources = labeled[confident]
    if len(sources) == 0:
        raise ValidationError(
            f"no confident sources at th_u={config.th_u}: every labeled "
            "element exceeds the threshold")
    if config.weighting == "confidence":
        weights = 1.0 - u[confident]
    else:
        weights = u[confident].copy()

    target_mask = np.ones(n, dtype=bool)
    target_mask[sources] = False
    targets = np.nonzero(target_mask)[0]
    merged = {int(s): labels.labels[int(s)] for s in sources}
    if len(targets):
        source_labels = np.fromiter((labels.labels[int(s)] for s in sources),
                                    dtype=np.int64, count=len(sources))
        chosen = _weighted_vote(pts, sources, source_labels, weights,
                                targets, config.k)
        merged.update({int(t): int(l) for t, l in zip(targets, chosen)})
    return LabelMap(labels.scene_id, labels.kind, merged, num_elements=n)
