"""Training objectives.

All losses are sums over the pixels of one image; for batched ``(B, H, W)``
inputs the per-image sums are averaged over the batch.

Pixel weights ``M`` come from :func:`uaed.annotations.weight_map` of the
annotation sampled for the current step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .annotations import InvalidInputError
from .model import SQRT_EPS

WEIGHTING_MODES = ("progressive", "kendall", "fixed_exp", "gt_variance", "none")
ABLATION_MODES = ("kendall", "fixed_exp", "gt_variance")


@dataclass(frozen=True)
class LossConfig:
    total_epochs: int = 15
    weighting_mode: str = "progressive"
    eps_clamp: float = 1e-6

    def __post_init__(self):
        if self.total_epochs < 1:
            raise InvalidInputError("total_epochs must be >= 1")
        if self.weighting_mode not in WEIGHTING_MODES:
            raise InvalidInputError(f"unknown weighting mode {self.weighting_mode!r}")
        if not 0.0 < self.eps_clamp <= 1e-3:
            raise InvalidInputError("eps_clamp must lie in (0, 1e-3]")

    def beta(self, t: float) -> float:
        if not 0 <= t <= self.total_epochs:
            raise InvalidInputError(f"epoch t={t} outside [0, {self.total_epochs}]")
        return t / self.total_epochs


@dataclass
class LossReport:
    l_bvar: torch.Tensor
    l_edge: torch.Tensor
    l_uedge: torch.Tensor
    total: torch.Tensor
    beta_t: float

    def to_record(self) -> dict:
        return {
            "beta_t": self.beta_t,
            "l_bvar": float(self.l_bvar.detach()),
            "l_edge": float(self.l_edge.detach()),
            "l_uedge": float(self.l_uedge.detach()),
            "total": float(self.total.detach()),
        }

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(x).all()) for x in (self.l_bvar, self.l_edge, self.l_uedge, self.total))


def _reduce(per_pixel: torch.Tensor) -> torch.Tensor:
    if per_pixel.dim() <= 2:
        return per_pixel.sum()
    return per_pixel.sum(dim=(-2, -1)).mean()


def _check_shapes(*tensors: torch.Tensor) -> None:
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise InvalidInputError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def _check_binary(label: torch.Tensor) -> None:
    if not bool(((label == 0) | (label == 1)).all()):
        raise InvalidInputError("label must be binary")


def balanced_mse_variance(var_pred, var_target, weights) -> torch.Tensor:
    """sum_j M_j (var_pred_j - var_target_j)^2"""
    var_pred, var_target, weights = (torch.as_tensor(x) for x in (var_pred, var_target, weights))
    _check_shapes(var_pred, var_target, weights)
    return _reduce(weights * (var_pred - var_target) ** 2)


def bce_map(pred, label, weights, eps_clamp: float = 1e-6) -> torch.Tensor:
    """Per-pixel balanced BCE terms ``-M_j [y log p + (1 - y) log(1 - p)]``."""
    pred, label, weights = (torch.as_tensor(x) for x in (pred, label, weights))
    _check_shapes(pred, label, weights)
    _check_binary(label)
    label = label.to(pred.dtype)
    p = pred.clamp(eps_clamp, 1.0 - eps_clamp)
    return -weights * (label * torch.log(p) + (1.0 - label) * torch.log1p(-p))


def balanced_bce(pred, label, weights, eps_clamp: float = 1e-6) -> torch.Tensor:
    return _reduce(bce_map(pred, label, weights, eps_clamp))


def uncertainty_weighted_edge_loss(
    pred, label, weights, sigma_hat, t: float, config: LossConfig, detach_weight: bool = True
) -> torch.Tensor:
    """sum_j exp(beta_t * sigma_hat_j) * bce_j with beta_t = t / T.

    The weight is treated as a constant of the step unless ``detach_weight``
    is False (used to check the derivative of the raw expression).
    """
    sigma_hat = torch.as_tensor(sigma_hat)
    beta = config.beta(t)
    if bool((sigma_hat < 0).any()):
        raise InvalidInputError("sigma_hat must be non-negative")
    terms = bce_map(pred, label, weights, config.eps_clamp)
    _check_shapes(terms, sigma_hat)
    w = torch.exp(beta * sigma_hat)
    if detach_weight:
        w = w.detach()
    return _reduce(w * terms)


def ablation_weighting(
    pred,
    label,
    weights,
    sigma_hat,
    sigma_gt,
    t: float,
    mode: str,
    config: LossConfig | None = None,
    detach_weight: bool = True,
) -> torch.Tensor:
    """Alternative uncertainty weightings of the balanced BCE.

    kendall:     sum_j exp(-sigma_hat_j) bce_j + 2 sigma_hat_j  (learned attenuation; never detached)
    fixed_exp:   sum_j exp(sigma_hat_j) bce_j
    gt_variance: sum_j exp(beta_t sigma_j) bce_j, sigma_j the annotator standard deviation
    """
    if mode not in ABLATION_MODES:
        raise InvalidInputError(f"unknown ablation mode {mode!r}")
    config = config or LossConfig()
    beta = config.beta(t)
    terms = bce_map(pred, label, weights, config.eps_clamp)
    sigma_hat = torch.as_tensor(sigma_hat)
    if mode == "kendall":
        _check_shapes(terms, sigma_hat)
        return _reduce(torch.exp(-sigma_hat) * terms + 2.0 * sigma_hat)
    if mode == "fixed_exp":
        _check_shapes(terms, sigma_hat)
        w = torch.exp(sigma_hat)
        if detach_weight:
            w = w.detach()
        return _reduce(w * terms)
    sigma_gt = torch.as_tensor(sigma_gt, dtype=terms.dtype)
    _check_shapes(terms, sigma_gt)
    return _reduce(torch.exp(beta * sigma_gt) * terms)


def total_loss(
    pred,
    var_pred,
    label,
    var_target,
    weights,
    t: float,
    config: LossConfig,
    detach_weight: bool = True,
) -> LossReport:
    """Assemble every term and the training objective for ``config.weighting_mode``.

    progressive / ablation modes: total = weighted edge loss + L_bvar
    none:                         total = L_edge + L_bvar (l_uedge reported equal to L_edge)
    """
    beta = config.beta(t)
    var_pred = torch.as_tensor(var_pred)
    if bool((var_pred < 0).any()):
        raise InvalidInputError("var_pred must be non-negative")
    sigma_hat = torch.sqrt(var_pred + SQRT_EPS)
    l_bvar = balanced_mse_variance(var_pred, var_target, weights)
    l_edge = balanced_bce(pred, label, weights, config.eps_clamp)
    mode = config.weighting_mode
    if mode == "progressive":
        l_uedge = uncertainty_weighted_edge_loss(pred, label, weights, sigma_hat, t, config, detach_weight)
    elif mode == "none":
        l_uedge = l_edge
    else:
        sigma_gt = torch.sqrt(torch.as_tensor(var_target, dtype=var_pred.dtype))
        l_uedge = ablation_weighting(pred, label, weights, sigma_hat, sigma_gt, t, mode, config, detach_weight)
    return LossReport(l_bvar=l_bvar, l_edge=l_edge, l_uedge=l_uedge, total=l_uedge + l_bvar, beta_t=beta)
