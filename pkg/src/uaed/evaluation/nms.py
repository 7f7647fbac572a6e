"""Edge thinning by non-maximum suppression along the estimated edge normal."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

from . import kernels


def edge_normal(prob: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Per-pixel edge-normal angle (radians, x = columns, y = rows).

    Uses the Hessian of a Gaussian-smoothed copy: the normal of a ridge is
    the eigenvector whose eigenvalue has the largest magnitude. This stays
    correct on the flanks of a ridge, where first derivatives would point
    along the normal too but vanish on the crest.
    """
    smooth = ndimage.gaussian_filter(np.asarray(prob, dtype=np.float64), sigma, mode="nearest")
    gy, gx = np.gradient(smooth)
    gyy, gyx = np.gradient(gy)
    gxy, gxx = np.gradient(gx)
    hxy = 0.5 * (gxy + gyx)
    half_diff = 0.5 * (gxx - gyy)
    root = np.sqrt(half_diff**2 + hxy**2)
    mean = 0.5 * (gxx + gyy)
    theta_plus = 0.5 * np.arctan2(2.0 * hxy, gxx - gyy)
    use_minus = np.abs(mean - root) > np.abs(mean + root)
    return np.where(use_minus, theta_plus + 0.5 * np.pi, theta_plus)


def _suppress_once(E: np.ndarray, radius: int, sigma: float) -> np.ndarray:
    theta = edge_normal(E, sigma)
    cos_t = np.ascontiguousarray(np.cos(theta))
    sin_t = np.ascontiguousarray(np.sin(theta))
    return kernels.nms_suppress(E, cos_t, sin_t, int(radius))


def nms_thin(prob_map: np.ndarray, radius: int = 1, sigma: float = 2.0) -> np.ndarray:
    """Keep pixels that are local maxima along their normal; survivors keep their value.

    The first pass takes normals from the input map. Passes repeat with
    normals from the thinned map until the support stops shrinking, which
    makes the operation idempotent. Support only ever shrinks, so this ends.
    """
    E = np.ascontiguousarray(prob_map, dtype=np.float64)
    support = int(np.count_nonzero(E > 0))
    while support:
        E = _suppress_once(E, radius, sigma)
        remaining = int(np.count_nonzero(E > 0))
        if remaining == support:
            break
        support = remaining
    if not support:
        return np.zeros_like(E)
    return E


def binary_thin(mask: np.ndarray) -> np.ndarray:
    """Morphological thinning of a binarized edge map (optional, for thick real-data labels)."""
    return thin(np.asarray(mask, dtype=bool)).astype(np.uint8)
