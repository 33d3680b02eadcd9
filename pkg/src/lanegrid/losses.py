"""Training objectives for the row-anchor formulation.

Everything takes the raw (C, h, w+1) logit tensor P. All losses are sums
over lanes/anchors as written (not means), except the auxiliary
segmentation term which is a per-pixel mean; magnitudes therefore scale
with C and h. All functions return scalar autodiff Tensors and are
differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .grid import GridTarget


@dataclass(frozen=True)
class LossConfig:
    """Coefficients: total = cls + alpha*(sim + lambda*shp) + beta*seg."""

    lambda_shape: float = 1.0
    alpha_structural: float = 1.0
    beta_segmentation: float = 1.0
    sim_on_probabilities: bool = False  # ablation: L1 on softmax outputs instead of logits

    def __post_init__(self):
        if self.lambda_shape < 0 or self.alpha_structural < 0 or self.beta_segmentation < 0:
            raise ValueError("loss coefficients must be >= 0")


def _as_tensor(p) -> Tensor:
    return p if isinstance(p, Tensor) else Tensor(p)


def cls_loss(p, target: GridTarget) -> Tensor:
    """Group-classification loss: summed cross entropy over all (lane, anchor).

    Softmax runs over all w+1 classes including background; the target is
    the one-hot of the stored class index.
    """
    p = _as_tensor(p)
    c, h, classes = p.shape
    if target.classes.shape != (c, h) or target.num_cells + 1 != classes:
        raise ValueError(
            f"target ({target.classes.shape}, w={target.num_cells}) does not "
            f"match prediction {p.shape}"
        )
    log_prob = ad.log_softmax_lastdim(p)
    picked = ad.mul(log_prob, Tensor(target.onehot()))
    return ad.scale(ad.sum(picked), -1.0)


def sim_loss(p, on_probabilities: bool = False) -> Tensor:
    """Continuity term: L1 between classification vectors of adjacent anchors.

    Applied to the raw logits by default (all w+1 components). The
    probability-space variant exists only for ablation runs.
    """
    p = _as_tensor(p)
    if p.shape[1] < 2:
        raise ValueError("sim_loss needs at least 2 row anchors")
    if on_probabilities:
        p = ad.softmax_lastdim(p)
    h = p.shape[1]
    upper = ad.narrow(p, 1, 0, h - 1)
    lower = ad.narrow(p, 1, 1, h - 1)
    return ad.sum(ad.abs(ad.sub(upper, lower)))


def expected_locations(p) -> Tensor:
    """Differentiable localization: (C, h) expected cell index.

    Background is excluded: softmax runs over lane cells 1..w only and the
    result is sum_k k * prob_k. Gradients flow through the softmax and the
    weighted sum. Presence is not decided here; the structural losses apply
    to every anchor.
    """
    p = _as_tensor(p)
    if p.shape[-1] < 3:
        raise ValueError("expected_locations needs w >= 2 lane cells")
    w = p.shape[-1] - 1
    lane_logits = ad.narrow(p, 2, 0, w)
    prob = ad.softmax_lastdim(lane_logits)
    kgrid = np.broadcast_to(np.arange(1.0, w + 1.0), prob.shape).copy()
    return ad.sum(ad.mul(prob, Tensor(kgrid)), axis=2)


def shp_loss(p) -> Tensor:
    """Shape term: L1 of second-order differences of expected locations.

    Zero for straight lanes. Computed over all anchors regardless of
    background status; the formula carries no presence mask.
    """
    p = _as_tensor(p)
    h = p.shape[1]
    if h < 3:
        raise ValueError("shp_loss needs at least 3 row anchors")
    loc = expected_locations(p)
    first = ad.sub(ad.narrow(loc, 1, 0, h - 1), ad.narrow(loc, 1, 1, h - 1))
    second = ad.sub(ad.narrow(first, 1, 0, h - 2), ad.narrow(first, 1, 1, h - 2))
    return ad.sum(ad.abs(second))


def structural_loss(p, cfg: LossConfig) -> Tensor:
    """sim + lambda * shp."""
    p = _as_tensor(p)
    total = sim_loss(p, on_probabilities=cfg.sim_on_probabilities)
    if cfg.lambda_shape != 0.0:
        total = ad.add(total, ad.scale(shp_loss(p), cfg.lambda_shape))
    return total


def seg_loss(seg_logits, seg_target: np.ndarray) -> Tensor:
    """Auxiliary segmentation: mean per-pixel cross entropy over C+1 classes.

    seg_logits is (C+1, hs, ws); seg_target is an integer (hs, ws) map with
    0 = background and 1..C = lane slots.
    """
    seg_logits = _as_tensor(seg_logits)
    classes, hs, ws = seg_logits.shape
    target = np.asarray(seg_target)
    if target.shape != (hs, ws):
        raise ValueError(f"seg target {target.shape} does not match logits {seg_logits.shape}")
    if target.min() < 0 or target.max() >= classes:
        raise ValueError(f"seg target classes must lie in [0, {classes - 1}]")
    onehot = np.zeros((hs, ws, classes))
    ii, jj = np.meshgrid(np.arange(hs), np.arange(ws), indexing="ij")
    onehot[ii, jj, target] = 1.0
    log_prob = ad.log_softmax_lastdim(ad.transpose(seg_logits, (1, 2, 0)))
    picked = ad.mul(log_prob, Tensor(onehot))
    return ad.scale(ad.sum(picked), -1.0 / (hs * ws))


def total_loss(
    p,
    target: GridTarget,
    cfg: LossConfig,
    seg_logits=None,
    seg_target=None,
) -> Tensor:
    """cls + alpha * structural + beta * seg.

    The segmentation term is included only when both seg arguments are
    given (the auxiliary branch exists only while training); passing one
    without the other is an error.
    """
    if (seg_logits is None) != (seg_target is None):
        raise ValueError("seg_logits and seg_target must be given together")
    total = cls_loss(p, target)
    if cfg.alpha_structural != 0.0:
        total = ad.add(total, ad.scale(structural_loss(p, cfg), cfg.alpha_structural))
    if seg_logits is not None and cfg.beta_segmentation != 0.0:
        total = ad.add(total, ad.scale(seg_loss(seg_logits, seg_target), cfg.beta_segmentation))
    return total
