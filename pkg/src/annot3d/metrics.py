"""Area-weighted segmentation metrics.

Per-class IoU weighs every element by its area (face area for meshes;
unit weight for points and voxels), so a mislabeled big wall counts for
more than a mislabeled shelf corner:

    IoU(c) = A_TP / (A_TP + A_FN + A_FP)

with A_TP the area where gt = pred = c, A_FN the gt-c area predicted as
anything else (including unlabeled), and A_FP the area predicted c where
the ground truth says otherwise. Unlabeled predictions therefore hurt
recall but never precision. Classes without any ground-truth area are
excluded from the mean and reported as "-".

The threshold sweep restricts ground truth and prediction to elements
whose vote uncertainty is at or below each threshold and re-scores; its
rows serialize to CSV as `th,miou,perc_area`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import MismatchError, ValidationError
from .fusion import UncertaintyMap
from .labels import VOID_LABEL, LabelMap, LabelTaxonomy, default_taxonomy

AREA_SOURCES = ("face-areas", "unit-counts")


@dataclass(frozen=True)
class ClassScore:
    label_id: int
    name: str
    a_tp: float
    a_fn: float
    a_fp: float

    @property
    def gt_area(self) -> float:
        return self.a_tp + self.a_fn

    @property
    def iou(self) -> Optional[float]:
        """None when the class has no ground-truth area (reported "-")."""
        if self.gt_area <= 0.0:
            return None
        return self.a_tp / (self.a_tp + self.a_fn + self.a_fp)


@dataclass(frozen=True)
class MetricsReport:
    scene_id: str
    kind: str
    area_source: str
    classes: Tuple[ClassScore, ...]
    miou: float
    perc_area: float

    @property
    def num_included(self) -> int:
        return sum(1 for c in self.classes if c.iou is not None)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "element_kind": self.kind,
            "area_source": self.area_source,
            "miou": self.miou,
            "perc_area": self.perc_area,
            "num_classes_included": self.num_included,
            "classes": [
                {"id": c.label_id, "name": c.name, "a_tp": c.a_tp,
                 "a_fn": c.a_fn, "a_fp": c.a_fp, "iou": c.iou}
                for c in self.classes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def format_table(report: MetricsReport) -> str:
    """Aligned text table, one row per class plus a summary footer."""
    rows = [("Class", "IoU", "A_TP", "A_FN", "A_FP")]
    for c in report.classes:
        iou_repr = "-" if c.iou is None else f"{c.iou:.4f}"
        rows.append((c.name, iou_repr, f"{c.a_tp:.4f}", f"{c.a_fn:.4f}", f"{c.a_fp:.4f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.append("")
    lines.append(f"mIoU: {report.miou:.4f}  (over {report.num_included} classes)")
    lines.append(f"Perc.Area: {report.perc_area:.2f}")
    return "\n".join(lines) + "\n"


def _areas_array(areas, n_hint: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(areas, dtype=np.float64)
    if arr.ndim != 1 or len(arr) == 0:
        raise ValidationError("areas must be a non-empty 1-D array")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValidationError("areas must be positive and finite")
    if n_hint is not None and len(arr) != n_hint:
        raise MismatchError(f"areas cover {len(arr)} elements, maps declare {n_hint}")
    return arr


def unit_areas(n: int) -> np.ndarray:
    """Uniform weights for point and voxel scenes."""
    if n < 1:
        raise ValidationError("need at least one element")
    return np.ones(n, dtype=np.float64)


def _paired_arrays(gt: LabelMap, pred: LabelMap, areas) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if gt.kind != pred.kind:
        raise MismatchError(f"gt is over '{gt.kind}', pred over '{pred.kind}'")
    if gt.scene_id != pred.scene_id:
        raise MismatchError(f"gt scene '{gt.scene_id}' != pred scene '{pred.scene_id}'")
    n_declared = gt.num_elements if gt.num_elements is not None else pred.num_elements
    arr = _areas_array(areas, n_declared)
    n = len(arr)
    return gt.to_array(n), pred.to_array(n), arr


def confusion_areas(gt: LabelMap, pred: LabelMap, areas,
                    taxonomy: Optional[LabelTaxonomy] = None) -> List[ClassScore]:
    """Per-class (A_TP, A_FN, A_FP) over all non-void taxonomy classes."""
    taxonomy = taxonomy or default_taxonomy()
    gt_arr, pred_arr, area = _paired_arrays(gt, pred, areas)
    scores = []
    for c in range(1, taxonomy.num_classes):
        gt_c = gt_arr == c
        pred_c = pred_arr == c
        a_tp = float(area[gt_c & pred_c].sum())
        a_fn = float(area[gt_c & ~pred_c].sum())
        a_fp = float(area[~gt_c & pred_c].sum())
        scores.append(ClassScore(c, taxonomy.name_of(c), a_tp, a_fn, a_fp))
    return scores


def class_iou(gt: LabelMap, pred: LabelMap, areas, label_id: int,
              taxonomy: Optional[LabelTaxonomy] = None) -> float:
    """Area-weighted IoU of one class; error when the class appears in
    neither map (the ratio is undefined there)."""
    taxonomy = taxonomy or default_taxonomy()
    if not (1 <= label_id < taxonomy.num_classes):
        raise ValidationError(f"label id {label_id} is not a non-void class")
    score = confusion_areas(gt, pred, areas, taxonomy)[label_id - 1]
    denom = score.a_tp + score.a_fn + score.a_fp
    if denom <= 0.0:
        raise ValidationError(
            f"class {label_id} absent from both maps; IoU undefined")
    return score.a_tp / denom


def perc_area(label_map: LabelMap, areas) -> float:
    """Percentage of total area carrying a non-void label."""
    arr = _areas_array(areas, label_map.num_elements)
    labeled = label_map.to_array(len(arr)) != VOID_LABEL
    return 100.0 * float(arr[labeled].sum()) / float(arr.sum())


def mean_iou(gt: LabelMap, pred: LabelMap, areas,
             taxonomy: Optional[LabelTaxonomy] = None,
             area_source: str = "face-areas") -> MetricsReport:
    """mIoU over classes with ground-truth area, plus the per-class table
    and the prediction's Perc.Area."""
    taxonomy = taxonomy or default_taxonomy()
    if area_source not in AREA_SOURCES:
        raise ValidationError(f"unknown area source '{area_source}'")
    scores = confusion_areas(gt, pred, areas, taxonomy)
    included = [s.iou for s in scores if s.iou is not None]
    if not included:
        raise ValidationError("no class has ground-truth area; mIoU undefined")
    return MetricsReport(
        scene_id=gt.scene_id,
        kind=gt.kind,
        area_source=area_source,
        classes=tuple(scores),
        miou=float(np.mean(included)),
        perc_area=perc_area(pred, areas),
    )


class SweepRow(NamedTuple):
    th: float
    miou: Optional[float]
    perc_area: float


def _restrict(label_map: LabelMap, keep: np.ndarray, n: int) -> LabelMap:
    kept = {e: l for e, l in label_map.labels.items() if keep[e]}
    return LabelMap(label_map.scene_id, label_map.kind, kept, num_elements=n)


def uncertainty_sweep(gt: LabelMap, pred: LabelMap, u: UncertaintyMap, areas,
                      thresholds: Sequence[float],
                      taxonomy: Optional[LabelTaxonomy] = None,
                      area_source: str = "face-areas") -> List[SweepRow]:
    """Score gt against pred at several uncertainty cutoffs.

    For each threshold both maps are restricted to elements whose vote
    uncertainty is <= th (elements without an uncertainty entry count as
    fully confident); rows report that restriction's mIoU and the
    restricted prediction's Perc.Area. A restriction that leaves no
    ground-truth class is reported with miou = None.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValidationError("threshold list must not be empty")
    taxonomy = taxonomy or default_taxonomy()
    gt_arr, pred_arr, area = _paired_arrays(gt, pred, areas)
    n = len(area)
    u_dense = np.zeros(n, dtype=np.float64)
    for e, entry in u.entries.items():
        if e >= n:
            raise MismatchError(f"uncertainty entry {e} beyond scene size {n}")
        u_dense[e] = entry.u
    rows = []
    for th in sorted(thresholds):
        keep = u_dense <= th
        gt_r = _restrict(gt, keep, n)
        pred_r = _restrict(pred, keep, n)
        try:
            report = mean_iou(gt_r, pred_r, area, taxonomy, area_source)
            rows.append(SweepRow(th, report.miou, report.perc_area))
        except ValidationError:
            rows.append(SweepRow(th, None, perc_area(pred_r, area)))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    """`th,miou,perc_area` rows; undefined mIoU serializes as nan."""
    lines = ["th,miou,perc_area"]
    for row in rows:
        miou_repr = "nan" if row.miou is None else repr(row.miou)
        lines.append(f"{row.th!r},{miou_repr},{row.perc_area!r}")
    return "\n".join(lines) + "\n"


def parse_sweep_csv(text: str) -> List[SweepRow]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "th,miou,perc_area":
        raise ValidationError("sweep CSV must start with 'th,miou,perc_area'")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 3:
            raise ValidationError(f"malformed sweep row: {ln!r}")
        miou = float(parts[1])
        rows.append(SweepRow(float(parts[0]),
                             None if np.isnan(miou) else miou,
                             float(parts[2])))
    return rows
