"""Combining several annotators' label maps into one.

Fusion is a per-element majority vote over the non-void labels; ties go
to the smallest label id so the result never depends on iteration order.
Disagreement is quantified per element as normalized Shannon entropy of
the vote distribution:

    u_e = H(p) / ln(min(n_e, C))

with n_e the number of votes on element e and C the number of non-void
classes. A single vote or a unanimous vote gives u_e = 0; an even split
between min(n_e, C) labels gives u_e = 1.

Uncertainty maps are written as `<name>.uncert.csv` (columns element_id,
u, raw_entropy, n_votes) plus a `.uncert.json` sidecar naming the scene
and element kind.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Tuple, Union

from .errors import FormatError, MismatchError, ValidationError
from .labels import (ELEMENT_KINDS, AnnotationSet, LabelMap, LabelTaxonomy,
                     default_taxonomy)


class UncertaintyEntry(NamedTuple):
    u: float
    raw_entropy: float
    n_votes: int


@dataclass(frozen=True)
class VoteHistogram:
    """Per-element tally of non-void votes across annotators."""

    scene_id: str
    kind: str
    counts: Dict[int, Dict[int, int]]
    num_elements: Optional[int] = None

    def n_votes(self, element_id: int) -> int:
        return sum(self.counts.get(element_id, {}).values())

    def __len__(self) -> int:
        return len(self.counts)

    def majority(self) -> LabelMap:
        """Most frequent label per element, ties to the smallest id."""
        fused = {}
        for element, hist in self.counts.items():
            top = max(hist.values())
            fused[element] = min(l for l, c in hist.items() if c == top)
        return LabelMap(self.scene_id, self.kind, fused,
                        num_elements=self.num_elements)

    def normalized_entropy(self, num_classes: int) -> "UncertaintyMap":
        """Entropy-based disagreement per voted element; num_classes is the
        non-void class count of the taxonomy."""
        if num_classes < 1:
            raise ValidationError("need at least one non-void class")
        entries = {}
        for element, hist in self.counts.items():
            n = sum(hist.values())
            raw = 0.0
            if len(hist) > 1:
                # Accumulate in label order so the float result does not
                # depend on vote insertion order.
                for label in sorted(hist):
                    p = hist[label] / n
                    raw -= p * math.log(p)
            denom_arg = min(n, num_classes)
            if n <= 1 or len(hist) == 1 or denom_arg <= 1:
                u = 0.0
            else:
                u = raw / math.log(denom_arg)
            entries[element] = UncertaintyEntry(u, raw, n)
        return UncertaintyMap(self.scene_id, self.kind, entries)


def build_histograms(annotations: AnnotationSet) -> VoteHistogram:
    """Tally each annotator's non-void labels per element."""
    counts: Dict[int, Dict[int, int]] = {}
    nums = {m.num_elements for m in annotations.maps() if m.num_elements is not None}
    if len(nums) > 1:
        raise MismatchError(f"annotators disagree on element count: {sorted(nums)}")
    for _, label_map in annotations.entries:
        for element, label in label_map.labels.items():
            hist = counts.setdefault(element, {})
            hist[label] = hist.get(label, 0) + 1
    return VoteHistogram(annotations.scene_id, annotations.kind, counts,
                         num_elements=nums.pop() if nums else None)


def integrate(annotations: AnnotationSet) -> LabelMap:
    """Fused label map: per-element majority vote, ties to smallest id."""
    return build_histograms(annotations).majority()


def uncertainty(annotations: AnnotationSet,
                taxonomy: Optional[LabelTaxonomy] = None) -> "UncertaintyMap":
    """Per-element normalized vote entropy for every voted element."""
    taxonomy = taxonomy or default_taxonomy()
    return build_histograms(annotations).normalized_entropy(taxonomy.non_void_count)


@dataclass(frozen=True)
class UncertaintyMap:
    """element index -> (u, raw_entropy, n_votes) for voted elements.

    Elements absent from the map were never voted on; consumers treat
    them as u = 0 unless they have their own convention.
    """

    scene_id: str
    kind: str
    entries: Dict[int, UncertaintyEntry]

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise ValidationError(f"unknown element kind '{self.kind}'")
        clean = {}
        for element, entry in self.entries.items():
            entry = UncertaintyEntry(float(entry[0]), float(entry[1]), int(entry[2]))
            if not (0.0 <= entry.u <= 1.0 + 1e-12):
                raise ValidationError(f"u out of [0,1] for element {element}: {entry.u}")
            if entry.n_votes < 1:
                raise ValidationError(f"element {element} has no votes")
            clean[int(element)] = entry
        object.__setattr__(self, "entries", clean)

    def __len__(self) -> int:
        return len(self.entries)

    def u_of(self, element_id: int, default: float = 0.0) -> float:
        entry = self.entries.get(element_id)
        return default if entry is None else entry.u


def _uncert_sidecar_path(csv_path: Union[str, Path]) -> Path:
    p = Path(csv_path)
    if p.name.endswith(".uncert.csv"):
        return p.with_name(p.name[: -len(".csv")] + ".json")
    return p.with_suffix(".json")


def save_uncertainty(umap: UncertaintyMap, path: Union[str, Path]) -> None:
    """Write `<name>.uncert.csv` plus its JSON sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element_id", "u", "raw_entropy", "n_votes"])
        for element in sorted(umap.entries):
            entry = umap.entries[element]
            writer.writerow([element, repr(entry.u), repr(entry.raw_entropy),
                             entry.n_votes])
    sidecar = {"scene_id": umap.scene_id, "element_kind": umap.kind}
    _uncert_sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")


def load_uncertainty(path: Union[str, Path]) -> UncertaintyMap:
    path = Path(path)
    sidecar_path = _uncert_sidecar_path(path)
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except OSError as e:
        raise FormatError(f"cannot read uncertainty sidecar '{sidecar_path}': "
                          f"{e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed uncertainty sidecar '{sidecar_path}': {e}") from e
    for key in ("scene_id", "element_kind"):
        if key not in sidecar:
            raise FormatError(f"uncertainty sidecar missing '{key}'")
    entries = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["element_id", "u", "raw_entropy", "n_votes"]:
            raise FormatError(f"{path}: expected header 'element_id,u,raw_entropy,n_votes'")
        for row in reader:
            if not row:
                continue
            try:
                entries[int(row[0])] = UncertaintyEntry(float(row[1]), float(row[2]),
                                                        int(row[3]))
            except (ValueError, IndexError):
                raise FormatError(f"{path}: malformed row {row!r}") from None
    return UncertaintyMap(str(sidecar["scene_id"]), str(sidecar["element_kind"]), entries)
