"""Label taxonomy, per-element label maps, and their file formats.

Label id 0 is reserved for "unlabeled/void" everywhere: a LabelMap stores
only non-zero entries, so absence of an entry means label 0. Label maps
are written as `<name>.labels.csv` (header `element_id,label_id`) plus a
JSON sidecar `<name>.labels.json` carrying scene id, element kind and the
taxonomy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import FormatError, MismatchError, ValidationError

VOID_LABEL = 0

ELEMENT_KINDS = ("face", "point", "voxel")


@dataclass(frozen=True)
class LabelClass:
    id: int
    name: str
    color: Tuple[int, int, int]


@dataclass(frozen=True)
class LabelTaxonomy:
    """Contiguous label ids starting at 0 (= void), each with a unique
    name and palette color."""

    classes: Tuple[LabelClass, ...]

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ValidationError("taxonomy ids must be unique and contiguous from 0")
        colors = [tuple(c.color) for c in self.classes]
        if len(set(colors)) != len(colors):
            raise ValidationError("taxonomy palette colors must be unique")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def non_void_count(self) -> int:
        """Class count excluding the void id; the |C| of entropy normalization."""
        return len(self.classes) - 1

    def has(self, label_id: int) -> bool:
        return 0 <= label_id < len(self.classes)

    def name_of(self, label_id: int) -> str:
        return self.classes[label_id].name

    def color_of(self, label_id: int) -> Tuple[int, int, int]:
        return tuple(self.classes[label_id].color)

    def palette(self) -> np.ndarray:
        """(num_classes, 3) uint8 palette indexed by label id."""
        return np.array([c.color for c in self.classes], dtype=np.uint8)

    def to_dict(self) -> dict:
        return {"classes": [{"id": c.id, "name": c.name, "color": list(c.color)}
                            for c in self.classes]}

    @classmethod
    def from_dict(cls, payload: dict) -> "LabelTaxonomy":
        try:
            classes = tuple(
                LabelClass(int(c["id"]), str(c["name"]), tuple(int(v) for v in c["color"]))
                for c in payload["classes"])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed taxonomy payload: {e}") from e
        return cls(classes)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "LabelTaxonomy":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def default_taxonomy() -> LabelTaxonomy:
    """The shipped eigen13-style indoor taxonomy (void + 11 classes)."""
    payload = json.loads(resources.files("annot3d.data").joinpath("eigen13.json").read_text())
    return LabelTaxonomy.from_dict(payload)


@dataclass(frozen=True)
class LabelMap:
    """element index -> label id over one scene.

    Entries with value 0 are never stored; num_elements is the element
    count of the scene when known (None = validated on first pairing
    with a scene).
    """

    scene_id: str
    kind: str
    labels: Dict[int, int] = field(default_factory=dict)
    num_elements: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise ValidationError(f"unknown element kind '{self.kind}'")
        clean = {int(e): int(l) for e, l in self.labels.items() if int(l) != VOID_LABEL}
        if clean:
            if min(clean) < 0:
                raise ValidationError("negative element index in label map")
            if self.num_elements is not None and max(clean) >= self.num_elements:
                raise ValidationError(
                    f"element index {max(clean)} out of range [0, {self.num_elements})")
        object.__setattr__(self, "labels", clean)

    def get(self, element_id: int) -> int:
        return self.labels.get(element_id, VOID_LABEL)

    def __len__(self) -> int:
        return len(self.labels)

    def validate_against(self, taxonomy: LabelTaxonomy) -> None:
        for e, l in self.labels.items():
            if not taxonomy.has(l):
                raise ValidationError(f"label id {l} (element {e}) not in taxonomy")

    def to_array(self, num_elements: Optional[int] = None) -> np.ndarray:
        """Dense (N,) int32 array of label ids, 0 where unlabeled."""
        n = num_elements if num_elements is not None else self.num_elements
        if n is None:
            raise ValidationError("label map has no element count; pass num_elements")
        out = np.zeros(n, dtype=np.int32)
        if self.labels:
            ids = np.fromiter(self.labels.keys(), dtype=np.int64, count=len(self.labels))
            vals = np.fromiter(self.labels.values(), dtype=np.int32, count=len(self.labels))
            if ids.max() >= n:
                raise ValidationError(f"element index {ids.max()} out of range [0, {n})")
            out[ids] = vals
        return out

    @classmethod
    def from_array(cls, scene_id: str, kind: str, arr: np.ndarray) -> "LabelMap":
        arr = np.asarray(arr)
        nz = np.nonzero(arr)[0]
        return cls(scene_id, kind, {int(e): int(arr[e]) for e in nz}, num_elements=len(arr))


def _sidecar_path(csv_path: Union[str, Path]) -> Path:
    p = Path(csv_path)
    if p.name.endswith(".labels.csv"):
        return p.with_name(p.name[: -len(".csv")] + ".json")
    return p.with_suffix(".json")


def save_label_map(label_map: LabelMap, path: Union[str, Path],
                   taxonomy: Optional[LabelTaxonomy] = None) -> None:
    """Write `<name>.labels.csv` plus its `.labels.json` sidecar."""
    taxonomy = taxonomy or default_taxonomy()
    label_map.validate_against(taxonomy)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element_id", "label_id"])
        for e in sorted(label_map.labels):
            writer.writerow([e, label_map.labels[e]])
    sidecar = {
        "scene_id": label_map.scene_id,
        "element_kind": label_map.kind,
        "taxonomy": taxonomy.to_dict()["classes"],
    }
    if label_map.num_elements is not None:
        sidecar["num_elements"] = label_map.num_elements
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")


def load_label_sidecar(path: Union[str, Path]) -> dict:
    """The parsed sidecar of a `.labels.csv` file (scene_id, element_kind,
    taxonomy, optional num_elements)."""
    sidecar_path = _sidecar_path(path)
    try:
        payload = json.loads(sidecar_path.read_text())
    except OSError as e:
        raise FormatError(f"cannot read label sidecar '{sidecar_path}': {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed label sidecar '{sidecar_path}': {e}") from e
    return payload


def load_label_map(path: Union[str, Path],
                   taxonomy: Optional[LabelTaxonomy] = None,
                   num_elements: Optional[int] = None) -> LabelMap:
    """Read a label map; entries are validated against the sidecar
    taxonomy (or an explicit one)."""
    sidecar = load_label_sidecar(path)
    tax = taxonomy or LabelTaxonomy.from_dict({"classes": sidecar["taxonomy"]})
    labels: Dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["element_id", "label_id"]:
            raise FormatError(f"{path}: expected header 'element_id,label_id'")
        for row in reader:
            if not row:
                continue
            try:
                e, l = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise FormatError(f"{path}: malformed row {row!r}") from None
            if not tax.has(l):
                raise ValidationError(f"{path}: unknown label id {l} (element {e})")
            labels[e] = l
    n = num_elements if num_elements is not None else sidecar.get("num_elements")
    return LabelMap(str(sidecar["scene_id"]), str(sidecar["element_kind"]), labels,
                    num_elements=n)


@dataclass(frozen=True)
class AnnotationSet:
    """Per-annotator label maps over one scene; n = annotator count."""

    entries: Tuple[Tuple[str, LabelMap], ...]

    def __post_init__(self):
        if len(self.entries) < 1:
            raise ValidationError("annotation set needs at least one annotator")
        scene_ids = {m.scene_id for _, m in self.entries}
        kinds = {m.kind for _, m in self.entries}
        if len(scene_ids) != 1 or len(kinds) != 1:
            raise MismatchError(
                f"annotation set mixes scenes {scene_ids} or element kinds {kinds}")

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def scene_id(self) -> str:
        return self.entries[0][1].scene_id

    @property
    def kind(self) -> str:
        return self.entries[0][1].kind

    def maps(self) -> Sequence[LabelMap]:
        return [m for _, m in self.entries]

    @classmethod
    def from_maps(cls, maps: Iterable[LabelMap],
                  annotators: Optional[Sequence[str]] = None) -> "AnnotationSet":
        maps = list(maps)
        names = list(annotators) if annotators else [f"annotator-{i}" for i in range(len(maps))]
        return cls(tuple(zip(names, maps)))
