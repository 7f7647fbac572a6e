"""Multi-annotator edge labels: storage, fusion, variance targets and class balance."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

INDEX_NAME = "index.json"


class InvalidInputError(ValueError):
    """Raised when an input violates an operation's preconditions."""


class LabelState(enum.IntEnum):
    IGNORE = -1
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True)
class AnnotationSet:
    """K binary edge maps of identical shape for one image."""

    image_id: str
    maps: np.ndarray  # (K, H, W) uint8 in {0, 1}

    def __post_init__(self):
        maps = np.asarray(self.maps)
        if maps.ndim == 2:
            maps = maps[None]
        if maps.ndim != 3 or maps.shape[0] < 1:
            raise InvalidInputError(
                f"annotation set {self.image_id!r} needs at least one H×W map, got shape {maps.shape}"
            )
        if maps.size and not np.isin(maps, (0, 1)).all():
            raise InvalidInputError(f"annotation set {self.image_id!r} has non-binary values")
        maps = maps.astype(np.uint8, copy=True)
        maps.setflags(write=False)
        object.__setattr__(self, "maps", maps)

    @classmethod
    def from_maps(cls, image_id: str, maps) -> "AnnotationSet":
        maps = list(maps)
        if not maps:
            raise InvalidInputError(f"annotation set {image_id!r} is empty")
        shapes = {np.shape(m) for m in maps}
        if len(shapes) != 1:
            raise InvalidInputError(f"annotation maps of {image_id!r} differ in shape: {sorted(shapes)}")
        return cls(image_id, np.stack([np.asarray(m) for m in maps]))

    @property
    def K(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]

    def mean(self) -> np.ndarray:
        return self.maps.mean(axis=0, dtype=np.float64)


@dataclass(frozen=True)
class FusedLabel:
    states: np.ndarray  # (H, W) int8 holding LabelState values
    threshold: float

    @property
    def positive(self) -> np.ndarray:
        return self.states == LabelState.POSITIVE

    @property
    def negative(self) -> np.ndarray:
        return self.states == LabelState.NEGATIVE

    @property
    def ignore(self) -> np.ndarray:
        return self.states == LabelState.IGNORE


@dataclass(frozen=True)
class WeightMap:
    alpha: float
    weights: np.ndarray
    degenerate: bool = field(default=False)


def _as_annotation_set(annotations) -> AnnotationSet:
    if isinstance(annotations, AnnotationSet):
        return annotations
    if annotations is None or len(annotations) == 0:
        raise InvalidInputError("empty annotation set")
    return AnnotationSet.from_maps("<anonymous>", annotations)


def fuse_majority(annotations, threshold: float = 0.3) -> FusedLabel:
    """Majority-vote fusion into positive / negative / ignore states.

    A pixel is positive when the annotator mean reaches ``threshold``,
    negative when no annotator marked it, and ignored otherwise.
    """
    if not 0.0 < threshold <= 1.0:
        raise InvalidInputError(f"threshold must lie in (0, 1], got {threshold}")
    ann = _as_annotation_set(annotations)
    counts = ann.maps.sum(axis=0, dtype=np.int64)
    # counts / K is correctly rounded, so 3/10 compares equal to a literal 0.3.
    mean = counts / ann.K
    states = np.full(ann.shape, LabelState.IGNORE, dtype=np.int8)
    states[mean >= threshold] = LabelState.POSITIVE
    states[counts == 0] = LabelState.NEGATIVE
    return FusedLabel(states=states, threshold=float(threshold))


def label_variance(annotations) -> np.ndarray:
    """Per-pixel population variance across the K binary maps, p(1-p)."""
    ann = _as_annotation_set(annotations)
    return ann.maps.astype(np.float64).var(axis=0)


def sample_annotation(annotations, rng: np.random.Generator) -> np.ndarray:
    """Draw one of the K maps uniformly at random."""
    ann = _as_annotation_set(annotations)
    k = int(rng.integers(ann.K))
    return ann.maps[k]


def sample_annotation_index(annotations, rng: np.random.Generator) -> int:
    ann = _as_annotation_set(annotations)
    return int(rng.integers(ann.K))


def weight_map(label, ignore=None) -> WeightMap:
    """Class-balance weights for a binary label.

    Positives get ``alpha = n_neg / (n_neg + n_pos)`` and negatives
    ``1 - alpha``. Pixels flagged in ``ignore`` get weight 0 and are left out
    of both counts. A label without positives (or without negatives) is
    marked degenerate; with no positives every weight is zero.
    """
    label = np.asarray(label)
    if label.size and not np.isin(label, (0, 1)).all():
        raise InvalidInputError("weight_map expects a binary label")
    pos = label == 1
    neg = label == 0
    if ignore is not None:
        ignore = np.asarray(ignore, dtype=bool)
        pos = pos & ~ignore
        neg = neg & ~ignore
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    weights = np.zeros(label.shape, dtype=np.float64)
    if n_pos == 0:
        return WeightMap(alpha=1.0, weights=weights, degenerate=True)
    alpha = n_neg / (n_neg + n_pos)
    weights[pos] = alpha
    weights[neg] = 1.0 - alpha
    return WeightMap(alpha=alpha, weights=weights, degenerate=n_neg == 0)


def fused_training_label(fused: FusedLabel) -> tuple[np.ndarray, np.ndarray]:
    """Binary label and class-balance weights for the fused-label baseline."""
    label = fused.positive.astype(np.uint8)
    return label, weight_map(label, ignore=fused.ignore).weights


# --- on-disk layout -----------------------------------------------------------
#
# <root>/index.json            {"images": {image_id: {"image": rel, "annotations": rel_dir}}}
# <root>/images/<id>.png       RGB image
# <root>/annotations/<id>/*.png  K single-channel PNGs with values 0/255


def write_binary_png(path, mask) -> None:
    Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255)).save(path, optimize=False)


def read_binary_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:
        arr = arr[..., 0]
    return (arr > 127).astype(np.uint8)


def load_annotation_dir(image_id: str, directory) -> AnnotationSet:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise InvalidInputError(f"no annotation PNGs in {directory}")
    return AnnotationSet.from_maps(image_id, [read_binary_png(p) for p in files])


def save_annotation_dir(annotations: AnnotationSet, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, m in enumerate(annotations.maps):
        path = directory / f"annotator_{k:02d}.png"
        write_binary_png(path, m)
        paths.append(path)
    return paths


def read_index(root) -> dict[str, dict[str, str]]:
    root = Path(root)
    path = root / INDEX_NAME if root.is_dir() else root
    with open(path) as f:
        data = json.load(f)
    return data["images"]


def write_index(root, entries: dict[str, dict[str, str]], extra: dict | None = None) -> Path:
    root = Path(root)
    payload = {"images": {k: entries[k] for k in sorted(entries)}}
    if extra:
        payload.update(extra)
    path = root / INDEX_NAME
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
    return path


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


@dataclass(frozen=True)
class Sample:
    image_id: str
    image: np.ndarray  # (H, W, 3) uint8
    annotations: AnnotationSet


def load_dataset(root) -> list[Sample]:
    """Load every (image, annotations) pair listed in the index, sorted by id."""
    root = Path(root)
    base = root if root.is_dir() else root.parent
    entries = read_index(root)
    samples = []
    for image_id in sorted(entries):
        entry = entries[image_id]
        image = load_image(base / entry["image"])
        ann = load_annotation_dir(image_id, base / entry["annotations"])
        if image.shape[:2] != ann.shape:
            raise InvalidInputError(
                f"{image_id}: image {image.shape[:2]} and annotations {ann.shape} differ in size"
            )
        samples.append(Sample(image_id, image, ann))
    return samples
