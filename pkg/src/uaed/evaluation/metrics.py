"""Threshold sweeps and ODS / OIS / AP aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..annotations import AnnotationSet, InvalidInputError
from .matching import MATCHERS, correspond, max_distance
from .nms import binary_thin

DEFAULT_TOLERANCE = 0.0075
RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class EvalConfig:
    tolerance: float = DEFAULT_TOLERANCE
    n_thresholds: int = 99
    matcher: str = "greedy"
    thin: bool = False  # morphological thinning of each binarized map

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be positive")
        if self.n_thresholds < 1:
            raise InvalidInputError("n_thresholds must be >= 1")
        if self.matcher not in MATCHERS:
            raise InvalidInputError(f"unknown matcher {self.matcher!r}")

    @property
    def thresholds(self) -> np.ndarray:
        n = self.n_thresholds
        return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


@dataclass
class MatchCounts:
    thresholds: np.ndarray
    tp_pred: np.ndarray
    n_pred: np.ndarray
    tp_gt: np.ndarray
    n_gt: np.ndarray
    image_id: str = ""

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "thresholds": self.thresholds.tolist(),
            "tp_pred": self.tp_pred.tolist(),
            "n_pred": self.n_pred.tolist(),
            "tp_gt": self.tp_gt.tolist(),
            "n_gt": self.n_gt.tolist(),
        }


@dataclass
class EvalResult:
    ods_f: float
    ods_threshold: float
    ois_f: float
    ap: float
    pr_points: list[tuple[float, float, float]] = field(default_factory=list)
    ods_precision: float = 0.0
    ods_recall: float = 0.0
    ois_precision: float = 0.0
    ois_recall: float = 0.0
    n_images: int = 0

    def to_dict(self) -> dict:
        return {
            "ods_f": self.ods_f,
            "ods_threshold": self.ods_threshold,
            "ods_precision": self.ods_precision,
            "ods_recall": self.ods_recall,
            "ois_f": self.ois_f,
            "ois_precision": self.ois_precision,
            "ois_recall": self.ois_recall,
            "ap": self.ap,
            "n_images": self.n_images,
            "pr_points": [
                {"recall": r, "precision": p, "threshold": t} for r, p, t in self.pr_points
            ],
        }


def sweep(prob_thinned: np.ndarray, annotations: AnnotationSet, config: EvalConfig | None = None) -> MatchCounts:
    """Binarize at every threshold (``prob >= t``) and accumulate correspondence counts."""
    config = config or EvalConfig()
    prob = np.asarray(prob_thinned, dtype=np.float64)
    if prob.shape != annotations.shape:
        raise InvalidInputError(f"prediction {prob.shape} and annotations {annotations.shape} differ in shape")
    radius = max_distance(prob.shape, config.tolerance)
    ths = config.thresholds
    n = len(ths)
    out = {k: np.zeros(n, dtype=np.int64) for k in ("tp_pred", "n_pred", "tp_gt", "n_gt")}
    for i, t in enumerate(ths):
        binary = prob >= t
        if config.thin:
            binary = binary_thin(binary)
        c = correspond(binary, annotations, radius, config.matcher)
        out["tp_pred"][i] = c.tp_pred
        out["n_pred"][i] = c.n_pred
        out["tp_gt"][i] = c.tp_gt
        out["n_gt"][i] = c.n_gt
    return MatchCounts(thresholds=ths, image_id=annotations.image_id, **out)


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def f_measure(precision, recall):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    s = precision + recall
    return np.divide(2.0 * precision * recall, s, out=np.zeros_like(s), where=s > 0)


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Mean interpolated precision over recall levels 0, 0.01, ..., 1.

    Interpolated precision at level r is the best precision among sweep
    points with recall >= r, and 0 when no point reaches r.
    """
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    reach = recall[None, :] >= RECALL_GRID[:, None] - 1e-12
    interp = np.where(reach, precision[None, :], 0.0).max(axis=1)
    return float(interp.mean())


def compute_metrics(per_image: list[MatchCounts]) -> EvalResult:
    if not per_image:
        raise InvalidInputError("compute_metrics needs at least one image")
    ths = per_image[0].thresholds
    for c in per_image:
        if not np.array_equal(c.thresholds, ths):
            raise InvalidInputError("all images must share one threshold grid")
    tp_pred = np.sum([c.tp_pred for c in per_image], axis=0)
    n_pred = np.sum([c.n_pred for c in per_image], axis=0)
    tp_gt = np.sum([c.tp_gt for c in per_image], axis=0)
    n_gt = np.sum([c.n_gt for c in per_image], axis=0)
    P = _ratio(tp_pred, n_pred)
    R = _ratio(tp_gt, n_gt)
    F = f_measure(P, R)
    best = int(np.argmax(F))

    # OIS: each image contributes its counts at its own best threshold
    ois = np.zeros(4, dtype=np.float64)
    for c in per_image:
        f_img = f_measure(_ratio(c.tp_pred, c.n_pred), _ratio(c.tp_gt, c.n_gt))
        j = int(np.argmax(f_img))
        ois += (c.tp_pred[j], c.n_pred[j], c.tp_gt[j], c.n_gt[j])
    ois_p = float(_ratio(ois[0], ois[1]))
    ois_r = float(_ratio(ois[2], ois[3]))

    return EvalResult(
        ods_f=float(F[best]),
        ods_threshold=float(ths[best]),
        ods_precision=float(P[best]),
        ods_recall=float(R[best]),
        ois_f=float(f_measure(ois_p, ois_r)),
        ois_precision=ois_p,
        ois_recall=ois_r,
        ap=average_precision(R, P),
        pr_points=[(float(r), float(p), float(t)) for r, p, t in zip(R, P, ths)],
        n_images=len(per_image),
    )
