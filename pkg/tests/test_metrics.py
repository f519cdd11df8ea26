import numpy as np
import pytest

from annot3d.errors import MismatchError, ValidationError
from annot3d.fusion import UncertaintyEntry, UncertaintyMap
from annot3d.labels import LabelMap, default_taxonomy
from annot3d.metrics import (class_iou, confusion_areas, format_table,
                             mean_iou, parse_sweep_csv, perc_area,
                             sweep_to_csv, uncertainty_sweep, unit_areas)


def oracle_confusion(gt_dict, pred_dict, areas, num_classes):
    """Per-class confusion areas accumulated one element at a time."""
    out = {c: [0.0, 0.0, 0.0] for c in range(1, num_classes)}
    for e in range(len(areas)):
        g = gt_dict.get(e, 0)
        p = pred_dict.get(e, 0)
        a = areas[e]
        for c in range(1, num_classes):
            if g == c and p == c:
                out[c][0] += a
            elif g == c:
                out[c][1] += a
            elif p == c:
                out[c][2] += a
    return out


def make_map(scene, labels, n):
    return LabelMap(scene, "face", labels, num_elements=n)


def test_identity_prediction_scores_one(rng):
    n = 60
    labels = {e: int(rng.integers(1, 12)) for e in range(n)}
    gt = make_map("m", labels, n)
    areas = rng.uniform(0.1, 2.0, size=n)
    report = mean_iou(gt, gt, areas)
    assert report.miou == 1.0
    assert report.perc_area == 100.0
    for c in report.classes:
        if c.iou is not None:
            assert c.iou == 1.0
    present = {l for l in labels.values()}
    for c in present:
        assert class_iou(gt, gt, areas, c) == 1.0


def test_equal_area_example():
    # gt = (c,c,c,d), pred = (c,c,d,d) on unit areas.
    gt = make_map("m", {0: 3, 1: 3, 2: 3, 3: 7}, 4)
    pred = make_map("m", {0: 3, 1: 3, 2: 7, 3: 7}, 4)
    areas = unit_areas(4)
    assert abs(class_iou(gt, pred, areas, 3) - 2.0 / 3.0) < 1e-12
    assert abs(class_iou(gt, pred, areas, 7) - 1.0 / 2.0) < 1e-12


def test_area_weighted_example():
    # Faces with areas (1,3), gt = (c,c), pred = (c,other): 1/(1+3).
    gt = make_map("m", {0: 2, 1: 2}, 2)
    pred = make_map("m", {0: 2, 1: 5}, 2)
    areas = np.array([1.0, 3.0])
    assert abs(class_iou(gt, pred, areas, 2) - 0.25) < 1e-9


def test_confusion_matches_oracle(rng):
    n = 300
    gt_labels = {e: int(rng.integers(1, 12)) for e in range(n) if rng.random() < 0.9}
    pred_labels = {e: int(rng.integers(1, 12)) for e in range(n) if rng.random() < 0.8}
    areas = rng.uniform(0.05, 3.0, size=n)
    gt = make_map("m", gt_labels, n)
    pred = make_map("m", pred_labels, n)
    tax = default_taxonomy()
    scores = confusion_areas(gt, pred, areas, tax)
    expected = oracle_confusion(gt_labels, pred_labels, areas, tax.num_classes)
    for s in scores:
        e_tp, e_fn, e_fp = expected[s.label_id]
        assert abs(s.a_tp - e_tp) < 1e-9
        assert abs(s.a_fn - e_fn) < 1e-9
        assert abs(s.a_fp - e_fp) < 1e-9
    report = mean_iou(gt, pred, areas)
    included = [tp / (tp + fn + fp) for tp, fn, fp in expected.values()
                if tp + fn > 0]
    assert abs(report.miou - np.mean(included)) < 1e-12


def test_unlabeled_predictions_hit_recall_not_precision():
    gt = make_map("m", {0: 1, 1: 1, 2: 2}, 3)
    pred = make_map("m", {2: 2}, 3)  # elements 0,1 left void
    areas = np.array([1.0, 2.0, 4.0])
    scores = {s.label_id: s for s in confusion_areas(gt, pred, areas)}
    assert scores[1].a_fn == 3.0
    assert scores[1].a_fp == 0.0
    assert scores[2].iou == 1.0
    # A prediction onto gt-void area is a false positive for its class.
    pred_fp = make_map("m", {0: 1, 1: 1, 2: 2}, 3)
    gt_partial = make_map("m", {1: 1, 2: 2}, 3)
    s = {x.label_id: x for x in confusion_areas(gt_partial, pred_fp, areas)}
    assert s[1].a_fp == 1.0


def test_zero_gt_class_reported_dash(rng):
    gt = make_map("m", {0: 1, 1: 1}, 3)
    pred = make_map("m", {0: 1, 1: 1, 2: 4}, 3)  # class 4 never in gt
    areas = unit_areas(3)
    report = mean_iou(gt, pred, areas)
    by_id = {c.label_id: c for c in report.classes}
    assert by_id[4].iou is None
    assert by_id[4].a_fp == 1.0
    assert report.num_included == 1
    assert report.miou == 1.0
    table = format_table(report)
    lines = [ln for ln in table.splitlines() if ln.startswith("Floor")]
    assert lines and lines[0].split()[1] == "-"
    with pytest.raises(ValidationError):
        class_iou(gt, make_map("m", {}, 3), areas, 4)


def test_all_void_prediction_scores_zero(rng):
    n = 40
    gt = make_map("m", {e: 1 + e % 3 for e in range(n)}, n)
    pred = make_map("m", {}, n)
    areas = rng.uniform(0.5, 1.5, size=n)
    report = mean_iou(gt, pred, areas)
    assert report.miou == 0.0
    assert report.perc_area == 0.0
    with pytest.raises(ValidationError):
        mean_iou(pred, gt, areas)  # gt with no labels at all


def test_perc_area_examples():
    m_all = make_map("m", {0: 1, 1: 2, 2: 3}, 3)
    m_none = make_map("m", {}, 3)
    m_half = make_map("m", {0: 1, 1: 1}, 3)
    areas = np.array([1.0, 1.0, 2.0])
    assert perc_area(m_all, areas) == 100.0
    assert perc_area(m_none, areas) == 0.0
    assert perc_area(m_half, areas) == 50.0


def test_area_scale_invariance(rng):
    n = 150
    gt = make_map("m", {e: int(rng.integers(1, 12)) for e in range(n)}, n)
    pred = make_map("m", {e: int(rng.integers(1, 12)) for e in range(n)}, n)
    areas = rng.uniform(0.2, 2.0, size=n)
    base = mean_iou(gt, pred, areas)
    scaled = mean_iou(gt, pred, areas * 3.7)
    assert abs(base.miou - scaled.miou) < 1e-12
    assert abs(base.perc_area - scaled.perc_area) < 1e-9


def test_confusion_completeness(rng):
    n = 200
    gt_labels = {e: int(rng.integers(1, 12)) for e in range(n) if rng.random() < 0.7}
    gt = make_map("m", gt_labels, n)
    pred = make_map("m", {e: int(rng.integers(1, 12)) for e in range(n)}, n)
    areas = rng.uniform(0.1, 1.0, size=n)
    scores = confusion_areas(gt, pred, areas)
    total = sum(s.a_tp + s.a_fn for s in scores)
    labeled_area = areas[[e in gt_labels for e in range(n)]].sum()
    assert abs(total - labeled_area) < 1e-9


def test_pairing_validation(rng):
    areas = unit_areas(3)
    gt = make_map("m", {0: 1}, 3)
    with pytest.raises(MismatchError):
        mean_iou(gt, LabelMap("other", "face", {0: 1}, num_elements=3), areas)
    with pytest.raises(MismatchError):
        mean_iou(gt, LabelMap("m", "point", {0: 1}, num_elements=3), areas)
    with pytest.raises(MismatchError):
        mean_iou(gt, make_map("m", {0: 1}, 3), unit_areas(5))
    with pytest.raises(ValidationError):
        mean_iou(gt, make_map("m", {0: 1}, 3), np.array([1.0, -1.0, 1.0]))


def test_sweep_thresholds():
    # Elements 0..6 correct (u = 0), elements 7,8 wrong (u = 0.9),
    # element 9 correct class 2 (u = 0).
    n = 10
    gt_labels = {e: 1 for e in range(9)}
    gt_labels[9] = 2
    pred_labels = dict(gt_labels)
    pred_labels[7] = 2
    pred_labels[8] = 2
    gt = make_map("m", gt_labels, n)
    pred = make_map("m", pred_labels, n)
    entries = {e: UncertaintyEntry(0.0, 0.0, 2) for e in range(n)}
    entries[7] = UncertaintyEntry(0.9, 1.0, 2)
    entries[8] = UncertaintyEntry(0.9, 1.0, 2)
    umap = UncertaintyMap("m", "face", entries)
    areas = unit_areas(n)
    rows = uncertainty_sweep(gt, pred, umap, areas, [1.0, 0.5])
    assert [r.th for r in rows] == [0.5, 1.0]
    assert rows[0].miou == 1.0
    assert rows[0].perc_area == 80.0
    unrestricted = mean_iou(gt, pred, areas)
    assert rows[1].miou == unrestricted.miou
    assert rows[1].miou < 1.0
    assert rows[1].perc_area == 100.0
    assert rows[0].perc_area <= rows[1].perc_area


def test_sweep_monotone_perc_area(rng):
    n = 120
    gt = make_map("m", {e: int(rng.integers(1, 12)) for e in range(n)}, n)
    pred = make_map("m", {e: int(rng.integers(1, 12)) for e in range(n)}, n)
    umap = UncertaintyMap("m", "face", {
        e: UncertaintyEntry(float(rng.random()), 0.5, 2) for e in range(n)})
    areas = rng.uniform(0.1, 2.0, size=n)
    rows = uncertainty_sweep(gt, pred, umap, areas, np.linspace(0, 1, 11))
    percs = [r.perc_area for r in rows]
    assert all(b >= a - 1e-12 for a, b in zip(percs, percs[1:]))


def test_sweep_empty_restriction_flagged():
    gt = make_map("m", {0: 1, 1: 1}, 2)
    pred = make_map("m", {0: 1, 1: 1}, 2)
    umap = UncertaintyMap("m", "face", {
        0: UncertaintyEntry(0.6, 0.5, 2), 1: UncertaintyEntry(0.7, 0.5, 2)})
    rows = uncertainty_sweep(gt, pred, umap, unit_areas(2), [0.0, 1.0])
    assert rows[0].miou is None
    assert rows[0].perc_area == 0.0
    assert rows[1].miou == 1.0
    with pytest.raises(ValidationError):
        uncertainty_sweep(gt, pred, umap, unit_areas(2), [])


def test_sweep_csv_round_trip(rng):
    n = 50
    gt = make_map("m", {e: 1 + e % 4 for e in range(n)}, n)
    pred = make_map("m", {e: 1 + (e + (e % 7 == 0)) % 4 for e in range(n)}, n)
    umap = UncertaintyMap("m", "face", {
        e: UncertaintyEntry(float(rng.random()), 0.4, 3) for e in range(n)})
    rows = uncertainty_sweep(gt, pred, umap, unit_areas(n), [0.0, 0.35, 0.8, 1.0])
    text = sweep_to_csv(rows)
    assert text.splitlines()[0] == "th,miou,perc_area"
    parsed = parse_sweep_csv(text)
    assert parsed == rows
    with pytest.raises(ValidationError):
        parse_sweep_csv("bad,header\n1,2\n")


def test_report_json_fields(rng):
    n = 30
    gt = make_map("m", {e: 1 + e % 2 for e in range(n)}, n)
    report = mean_iou(gt, gt, unit_areas(n), area_source="unit-counts")
    payload = report.to_dict()
    assert payload["element_kind"] == "face"
    assert payload["area_source"] == "unit-counts"
    assert payload["miou"] == 1.0
    assert len(payload["classes"]) == 11
    names = {c["name"] for c in payload["classes"]}
    assert {"Bed", "Wall", "Window"} <= names
    with pytest.raises(ValidationError):
        mean_iou(gt, gt, unit_areas(n), area_source="bogus")
