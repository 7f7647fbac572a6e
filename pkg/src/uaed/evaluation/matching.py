"""Pixel correspondence between a binary prediction and human edge maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..annotations import AnnotationSet, InvalidInputError
from . import kernels

MATCHERS = ("greedy", "exact")


@dataclass(frozen=True)
class Correspondence:
    tp_pred: int
    n_pred: int
    tp_gt: int
    n_gt: int


def _pairs(pred: np.ndarray, gt: np.ndarray, max_dist: float):
    pi, gi, d2 = kernels.candidate_pairs(pred, gt, float(max_dist))
    # nearest pairs first; ties by predicted then human raster index
    order = np.lexsort((gi, pi, d2))
    return np.ascontiguousarray(pi[order]), np.ascontiguousarray(gi[order]), d2[order]


def match_greedy(
    pred: np.ndarray, gt: np.ndarray, max_dist: float, augment: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """One-to-one matching: closest free pair first, then augmenting-path repair.

    The nearest-first pass alone can strand pixels whose only partner was
    taken by a closer pair. The repair pass re-routes along augmenting paths
    until the matching has maximum cardinality; ``augment=False`` skips it.
    Returns boolean maps of matched predicted and matched human pixels.
    """
    pred = np.ascontiguousarray(pred, dtype=np.uint8)
    gt = np.ascontiguousarray(gt, dtype=np.uint8)
    pi, gi, d2 = _pairs(pred, gt, max_dist)
    match_p, match_g = kernels.greedy_assign(pi, gi, pred.size)
    if augment and len(pi):
        # CSR adjacency per predicted pixel, nearest candidates first
        order = np.lexsort((gi, d2, pi))
        adj = np.ascontiguousarray(gi[order])
        indptr = np.zeros(pred.size + 1, dtype=np.int64)
        np.cumsum(np.bincount(pi, minlength=pred.size), out=indptr[1:])
        kernels.augment(indptr, adj, match_p, match_g)
    return (
        (np.asarray(match_p) >= 0).reshape(pred.shape),
        (np.asarray(match_g) >= 0).reshape(pred.shape),
    )


def match_exact(pred: np.ndarray, gt: np.ndarray, max_dist: float) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-cardinality matching within ``max_dist``, minimum total distance among those."""
    pred = np.ascontiguousarray(pred, dtype=np.uint8)
    gt = np.ascontiguousarray(gt, dtype=np.uint8)
    pi, gi, d2 = kernels.candidate_pairs(pred, gt, float(max_dist))
    m_pred = np.zeros(pred.size, dtype=bool)
    m_gt = np.zeros(gt.size, dtype=bool)
    if len(pi):
        rows, row_of = np.unique(pi, return_inverse=True)
        cols, col_of = np.unique(gi, return_inverse=True)
        dist = np.sqrt(d2.astype(np.float64))
        # every valid pair beats any invalid one, so cardinality is maximised first
        big = 1.0 + float(dist.sum())
        cost = np.zeros((len(rows), len(cols)))
        cost[row_of, col_of] = dist - big
        r, c = linear_sum_assignment(cost)
        valid = cost[r, c] < 0
        m_pred[rows[r[valid]]] = True
        m_gt[cols[c[valid]]] = True
    return m_pred.reshape(pred.shape), m_gt.reshape(gt.shape)


def correspond(pred_binary, annotations, max_dist_px: float, matcher: str = "greedy") -> Correspondence:
    """Match a binary prediction against every annotation of an image.

    A predicted pixel is a true positive if some annotation matches it.
    Human-side counts are summed over all K annotations.
    """
    if matcher not in MATCHERS:
        raise InvalidInputError(f"unknown matcher {matcher!r}")
    if not isinstance(annotations, AnnotationSet):
        annotations = AnnotationSet.from_maps("<anonymous>", annotations)
    pred = np.asarray(pred_binary).astype(bool)
    if pred.shape != annotations.shape:
        raise InvalidInputError(f"prediction {pred.shape} and annotations {annotations.shape} differ in shape")
    fn = match_greedy if matcher == "greedy" else match_exact
    acc_pred = np.zeros(pred.shape, dtype=bool)
    tp_gt = n_gt = 0
    for gt in annotations.maps:
        m_pred, m_gt = fn(pred, gt, max_dist_px)
        acc_pred |= m_pred
        tp_gt += int(m_gt.sum())
        n_gt += int(gt.sum())
    return Correspondence(tp_pred=int(acc_pred.sum()), n_pred=int(pred.sum()), tp_gt=tp_gt, n_gt=n_gt)


def max_distance(shape: tuple[int, int], tolerance: float) -> float:
    H, W = shape
    return float(tolerance * np.hypot(H, W))
