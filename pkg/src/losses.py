"""
Losses Module

Composite segmentation objective:

    L_Final = w_dice * L_Dice + w_focal * L_Focal + beta * L_C

L_Dice is the squared-denominator soft Dice loss averaged over foreground
classes, L_Focal the alpha/gamma focal loss over every class-pixel pair, and
L_C the cross-modality contrastive loss over the fixed pairs (T1, T1c) and
(T2, FLAIR). Negatives for a pair come from that pair's 2N views only.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

import numpy as np

from config import FocalParams, LossWeights
from data.modality import ModalityId, PresenceMask
from errors import BatchAlignmentError, ContractError, DegenerateProjectionError, DimensionError
from gradcore import (
    Tensor,
    add,
    clamp,
    concat_channels,
    div,
    log,
    masked_logsumexp,
    matmul,
    mean,
    mul,
    pow_scalar,
    reduce_sum,
    reshape,
    sqrt,
    sub,
    transpose,
)

logger = logging.getLogger(__name__)

DICE_SMOOTH = 1e-6
NORMALIZATION_TOLERANCE = 1e-3
CONTRASTIVE_PAIRS: Tuple[Tuple[ModalityId, ModalityId], ...] = (
    (ModalityId.T1, ModalityId.T1C),
    (ModalityId.T2, ModalityId.FLAIR),
)
# How the per-pair terms combine into L_C: "sum" or "mean"
CONTRASTIVE_PAIR_REDUCTION = "sum"


@dataclass
class LossBreakdown:
    final: float
    dice: float
    focal: float
    contrastive: float
    beta: float

    def as_record(self) -> dict:
        return {"L_Final": self.final, "L_Dice": self.dice, "L_Focal": self.focal, "L_C": self.contrastive}


def _check_prediction(kind: str, pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"{kind}: prediction {pred.shape} and target {target.shape} differ")
    if pred.ndim != 4:
        raise DimensionError(f"{kind}: expected [N,C,H,W], got {pred.shape}")
    deviation = np.abs(pred.data.astype(np.float64).sum(axis=1) - 1.0).max()
    if deviation > NORMALIZATION_TOLERANCE:
        raise ContractError(f"{kind}: prediction channels do not sum to 1 (max deviation {deviation:.3e})")


def dice_loss(pred: Tensor, target_onehot: Tensor) -> Tensor:
    """1 - (2 sum(y p) + s) / (sum(y^2) + sum(p^2) + s) per foreground class, averaged.

    Sums run over batch and pixels; class 0 is background and excluded.
    """
    _check_prediction("dice_loss", pred, target_onehot)
    classes = pred.shape[1]
    axes = (0, 2, 3)
    intersection = reduce_sum(mul(pred, target_onehot), axis=axes)
    pred_sq = reduce_sum(mul(pred, pred), axis=axes)
    target_sq = reduce_sum(mul(target_onehot, target_onehot), axis=axes)
    ratio = div(add(mul(intersection, 2.0), DICE_SMOOTH), add(add(target_sq, pred_sq), DICE_SMOOTH))
    weights = np.full(classes, 1.0 / (classes - 1))
    weights[0] = 0.0
    return reduce_sum(mul(sub(1.0, ratio), weights))


def focal_loss(pred: Tensor, target_onehot: Tensor, fp: Optional[FocalParams] = None) -> Tensor:
    """Binary focal loss over every class-pixel pair, averaged over N*C*H*W terms."""
    fp = fp or FocalParams()
    _check_prediction("focal_loss", pred, target_onehot)
    p = clamp(pred, fp.clamp_eps, 1.0 - fp.clamp_eps)
    one_minus_p = sub(1.0, p)
    positive = mul(mul(pow_scalar(one_minus_p, fp.gamma), target_onehot), log(p))
    negative = mul(mul(pow_scalar(p, fp.gamma), sub(1.0, target_onehot)), log(one_minus_p))
    terms = add(mul(positive, fp.alpha), mul(negative, 1.0 - fp.alpha))
    return mul(mean(terms), -1.0)


def _cosine_matrix(views: Tensor, temperature: float) -> Tensor:
    if views.ndim != 2:
        raise DimensionError(f"Contrastive views must be [2N, D], got {views.shape}")
    norms_sq = reduce_sum(mul(views, views), axis=1, keepdims=True)
    if np.any(norms_sq.data == 0):
        rows = np.flatnonzero(norms_sq.data[:, 0] == 0).tolist()
        raise DegenerateProjectionError(f"Contrastive views {rows} have zero norm")
    unit = div(views, sqrt(norms_sq))
    similarity = matmul(unit, transpose(unit))
    return similarity if temperature == 1.0 else div(similarity, temperature)


def _row_losses(views: Tensor, positives: np.ndarray, temperature: float) -> Tensor:
    """l(v_r, v_positives[r]) for every row r of views."""
    rows = views.shape[0]
    if rows < 2:
        raise DimensionError(f"Contrastive loss needs at least 2 views, got {rows}")
    similarity = _cosine_matrix(views, temperature)
    not_self = ~np.eye(rows, dtype=bool)
    log_denominator = masked_logsumexp(similarity, not_self)
    selector = np.zeros((rows, rows))
    selector[np.arange(rows), positives] = 1.0
    positive_sim = reduce_sum(mul(similarity, selector), axis=1)
    return sub(log_denominator, positive_sim)


def pair_contrastive_term(anchor: int, views: Tensor, positive: int, temperature: float = 1.0) -> Tensor:
    """-log(exp(sim(v_i, v_j)) / sum over k != i of exp(sim(v_i, v_k))) with cosine sim."""
    rows = views.shape[0]
    if anchor == positive:
        raise ContractError(f"pair_contrastive_term: anchor and positive are both row {anchor}")
    if not (0 <= anchor < rows and 0 <= positive < rows):
        raise ContractError(f"pair_contrastive_term: rows {anchor}, {positive} outside [0, {rows})")
    similarity = _cosine_matrix(views, temperature)
    log_denominator = masked_logsumexp(similarity, ~np.eye(rows, dtype=bool))
    pick = np.zeros(rows)
    pick[anchor] = 1.0
    selector = np.zeros((rows, rows))
    selector[anchor, positive] = 1.0
    return sub(reduce_sum(mul(log_denominator, pick)), reduce_sum(mul(similarity, selector)))


def _stack_rows(a: Tensor, b: Tensor) -> Tensor:
    n, d = a.shape
    stacked = concat_channels([reshape(a, (1, n, d, 1)), reshape(b, (1, b.shape[0], d, 1))])
    return reshape(stacked, (n + b.shape[0], d))


def batch_contrastive(proj_x: Tensor, proj_y: Tensor, temperature: float = 1.0) -> Tensor:
    """(1/2N) sum over instances of l(v_ix, v_iy) + l(v_iy, v_ix).

    Views are the 2N rows of this pair; row i of x pairs with row i of y.

    Raises:
        BatchAlignmentError: Row counts or widths differ
    """
    if proj_x.ndim != 2 or proj_y.ndim != 2 or proj_x.shape != proj_y.shape:
        raise BatchAlignmentError(f"batch_contrastive: projections {proj_x.shape} and {proj_y.shape} differ")
    n = proj_x.shape[0]
    if n == 1:
        logger.warning("batch_contrastive with a single instance has no negatives and is identically 0")
    views = _stack_rows(proj_x, proj_y)
    positives = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    return mean(_row_losses(views, positives, temperature))


def total_contrastive(projections: Mapping[ModalityId, Tensor], presence: PresenceMask,
                      temperature: float = 1.0) -> Tensor:
    """L_C over the fixed modality pairs; pairs with an absent member contribute 0."""
    terms = []
    for x, y in CONTRASTIVE_PAIRS:
        if x in presence and y in presence:
            if x not in projections or y not in projections:
                raise ContractError(f"total_contrastive: missing projection for {x.value} or {y.value}")
            terms.append(batch_contrastive(projections[x], projections[y], temperature))
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    if CONTRASTIVE_PAIR_REDUCTION == "mean":
        total = mul(total, 1.0 / len(terms))
    return total


def final_loss(pred: Tensor, target_onehot: Tensor, projections: Mapping[ModalityId, Tensor],
               presence: PresenceMask, lw: LossWeights, fp: FocalParams) -> Tuple[Tensor, LossBreakdown]:
    """Weighted composite and its logged components.

    With beta == 0 the contrastive term is not evaluated and logged as 0.
    The logged L_Final is the value of the returned tensor, so the ledger
    recombination check tests the loss that was actually differentiated.
    """
    dice = dice_loss(pred, target_onehot)
    focal = focal_loss(pred, target_onehot, fp)
    total = add(mul(dice, lw.w_dice), mul(focal, lw.w_focal))
    contrastive_value = 0.0
    if lw.beta > 0:
        contrastive = total_contrastive(projections, presence, lw.temperature)
        contrastive_value = contrastive.item()
        total = add(total, mul(contrastive, lw.beta))
    recombined = lw.w_dice * dice.item() + lw.w_focal * focal.item() + lw.beta * contrastive_value
    if abs(recombined - total.item()) > 1e-4 * max(1.0, abs(recombined)):
        logger.warning("Composite loss %.8f drifts from its recombination %.8f", total.item(), recombined)
    breakdown = LossBreakdown(total.item(), dice.item(), focal.item(), contrastive_value, lw.beta)
    return total, breakdown
