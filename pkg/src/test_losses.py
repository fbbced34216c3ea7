"""
Tests for the Dice, focal and contrastive losses against scalar-loop references.
"""

import math

import numpy as np
import pytest

from config import FocalParams, LossWeights
from data import ModalityId, PresenceMask
from errors import BatchAlignmentError, ContractError, DegenerateProjectionError, DimensionError
from gradcore import Tensor, gradcheck, precision, softmax_channels
from losses import (
    batch_contrastive,
    dice_loss,
    final_loss,
    focal_loss,
    pair_contrastive_term,
    total_contrastive,
)


def _softmax(logits):
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _onehot(labels, classes):
    return (labels[:, None, :, :] == np.arange(classes)[None, :, None, None]).astype(np.float64)


def _random_case(seed, n=2, classes=4, size=5):
    rng = np.random.default_rng(seed)
    probs = _softmax(rng.normal(size=(n, classes, size, size)))
    labels = rng.integers(0, classes, size=(n, size, size))
    return probs, _onehot(labels, classes)


def _dice_reference(p, y, smooth=1e-6):
    n, classes, height, width = p.shape
    losses = []
    for c in range(1, classes):
        inter = pred_sq = target_sq = 0.0
        for i in range(n):
            for h in range(height):
                for w in range(width):
                    inter += y[i, c, h, w] * p[i, c, h, w]
                    pred_sq += p[i, c, h, w] ** 2
                    target_sq += y[i, c, h, w] ** 2
        losses.append(1.0 - (2.0 * inter + smooth) / (target_sq + pred_sq + smooth))
    return sum(losses) / len(losses)


def _focal_reference(p, y, alpha=0.25, gamma=2.0, eps=1e-7):
    total = 0.0
    for index in np.ndindex(p.shape):
        q = min(max(p[index], eps), 1.0 - eps)
        t = y[index]
        total += alpha * (1.0 - q) ** gamma * t * math.log(q)
        total += (1.0 - alpha) * q ** gamma * (1.0 - t) * math.log(1.0 - q)
    return -total / p.size


def _cosine(a, b):
    return float(np.dot(a, b) / (math.sqrt(np.dot(a, a)) * math.sqrt(np.dot(b, b))))


def _pair_reference(views, i, j, temperature=1.0):
    denominator = sum(math.exp(_cosine(views[i], views[k]) / temperature)
                      for k in range(len(views)) if k != i)
    return -math.log(math.exp(_cosine(views[i], views[j]) / temperature) / denominator)


def _batch_reference(x, y, temperature=1.0):
    n = len(x)
    views = np.concatenate([x, y])
    total = 0.0
    for i in range(n):
        total += _pair_reference(views, i, i + n, temperature)
        total += _pair_reference(views, i + n, i, temperature)
    return total / (2 * n)


@pytest.mark.parametrize("seed", range(100))
def test_dice_loss_matches_reference(seed):
    probs, target = _random_case(seed)
    with precision(np.float64):
        value = dice_loss(Tensor(probs), Tensor(target)).item()
    assert value == pytest.approx(_dice_reference(probs, target), abs=1e-10)


def test_dice_loss_is_zero_for_a_perfect_prediction():
    _, target = _random_case(0)
    with precision(np.float64):
        value = dice_loss(Tensor(target), Tensor(target)).item()
    assert value == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(100))
def test_focal_loss_matches_reference(seed):
    probs, target = _random_case(seed)
    with precision(np.float64):
        value = focal_loss(Tensor(probs), Tensor(target)).item()
    assert value == pytest.approx(_focal_reference(probs, target), rel=1e-9)


def test_focal_loss_uses_the_given_parameters():
    probs, target = _random_case(7)
    fp = FocalParams(alpha=0.6, gamma=0.5)
    with precision(np.float64):
        value = focal_loss(Tensor(probs), Tensor(target), fp).item()
    assert value == pytest.approx(_focal_reference(probs, target, alpha=0.6, gamma=0.5), rel=1e-9)


def test_segmentation_losses_reject_bad_predictions():
    probs, target = _random_case(1)
    with pytest.raises(ContractError):
        dice_loss(Tensor(probs * 2.0), Tensor(target))
    with pytest.raises(ContractError):
        focal_loss(Tensor(probs * 0.5), Tensor(target))
    with pytest.raises(DimensionError):
        dice_loss(Tensor(probs), Tensor(target[:, :3]))


@pytest.mark.parametrize("seed", range(20))
def test_segmentation_loss_gradients_through_softmax(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(2, 4, 3, 3))
    target = _onehot(rng.integers(0, 4, size=(2, 3, 3)), 4)

    dice = gradcheck(lambda z: dice_loss(softmax_channels(z), Tensor(target)), [logits])
    focal = gradcheck(lambda z: focal_loss(softmax_channels(z), Tensor(target)), [logits])
    assert dice.passed, dice.max_abs_error
    assert focal.passed, focal.max_abs_error


@pytest.mark.parametrize("seed", range(100))
def test_pair_contrastive_term_matches_reference(seed):
    rng = np.random.default_rng(seed)
    views = rng.normal(size=(6, 4))
    anchor, positive = rng.choice(6, size=2, replace=False)
    with precision(np.float64):
        value = pair_contrastive_term(int(anchor), Tensor(views), int(positive), temperature=0.5).item()
    assert value == pytest.approx(_pair_reference(views, anchor, positive, 0.5), rel=1e-9)


def test_pair_contrastive_term_rejects_self_pairs_and_bad_rows():
    views = Tensor(np.eye(3))
    with pytest.raises(ContractError):
        pair_contrastive_term(1, views, 1)
    with pytest.raises(ContractError):
        pair_contrastive_term(0, views, 3)


@pytest.mark.parametrize("seed", range(100))
def test_batch_contrastive_matches_reference(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 5))
    y = rng.normal(size=(3, 5))
    with precision(np.float64):
        value = batch_contrastive(Tensor(x), Tensor(y)).item()
    assert value == pytest.approx(_batch_reference(x, y), rel=1e-9)


def test_batch_contrastive_of_identical_views_is_log_three():
    # four identical rows: every similarity is 1, so each term is -log(e / 3e)
    rows = np.ones((2, 3))
    with precision(np.float64):
        value = batch_contrastive(Tensor(rows), Tensor(rows)).item()
    assert value == pytest.approx(math.log(3.0), abs=1e-12)


def test_batch_contrastive_of_one_instance_is_zero():
    with precision(np.float64):
        value = batch_contrastive(Tensor([[1.0, 2.0]]), Tensor([[-3.0, 0.5]])).item()
    assert value == pytest.approx(0.0, abs=1e-12)


def test_batch_contrastive_rejects_misaligned_and_degenerate_projections():
    with pytest.raises(BatchAlignmentError):
        batch_contrastive(Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4))))
    with pytest.raises(BatchAlignmentError):
        batch_contrastive(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 5))))
    degenerate = np.ones((2, 4))
    degenerate[1] = 0.0
    with pytest.raises(DegenerateProjectionError):
        batch_contrastive(Tensor(np.ones((2, 4))), Tensor(degenerate))


@pytest.mark.parametrize("seed", range(20))
def test_batch_contrastive_gradients(seed):
    rng = np.random.default_rng(seed)
    result = gradcheck(lambda a, b: batch_contrastive(a, b, temperature=0.7),
                       [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))])
    assert result.passed, result.max_abs_error


def _projections(seed, n=3, d=4):
    rng = np.random.default_rng(seed)
    return {m: rng.normal(size=(n, d)) for m in ModalityId}


def test_total_contrastive_sums_the_present_pairs():
    raw = _projections(0)
    with precision(np.float64):
        projections = {m: Tensor(v) for m, v in raw.items()}
        full = total_contrastive(projections, PresenceMask.full()).item()
        without_t1 = total_contrastive(projections, PresenceMask.without([ModalityId.T1])).item()
        neither = total_contrastive(projections, PresenceMask.without([ModalityId.T1C, ModalityId.FLAIR])).item()
    anatomy = _batch_reference(raw[ModalityId.T1], raw[ModalityId.T1C])
    fluid = _batch_reference(raw[ModalityId.T2], raw[ModalityId.FLAIR])
    assert full == pytest.approx(anatomy + fluid, rel=1e-9)
    assert without_t1 == pytest.approx(fluid, rel=1e-9)
    assert neither == 0.0


def test_total_contrastive_needs_projections_of_present_pairs():
    projections = {ModalityId.T1: Tensor(np.ones((2, 3)))}
    with pytest.raises(ContractError):
        total_contrastive(projections, PresenceMask.full())


def test_final_loss_without_contrastive_term():
    probs, target = _random_case(3)
    lw = LossWeights(w_dice=0.5, w_focal=0.5, beta=0.0)
    with precision(np.float64):
        total, breakdown = final_loss(Tensor(probs), Tensor(target), {}, PresenceMask.full(), lw, FocalParams())
    assert breakdown.contrastive == 0.0
    assert breakdown.final == total.item()
    assert breakdown.final == pytest.approx(0.5 * breakdown.dice + 0.5 * breakdown.focal, abs=1e-12)
    assert breakdown.dice == pytest.approx(_dice_reference(probs, target), abs=1e-10)


def test_final_loss_recombines_its_components():
    probs, target = _random_case(4, n=3)
    raw = _projections(4)
    lw = LossWeights(w_dice=0.3, w_focal=0.7, beta=0.5)
    with precision(np.float64):
        projections = {m: Tensor(v) for m, v in raw.items()}
        total, breakdown = final_loss(Tensor(probs), Tensor(target), projections, PresenceMask.full(), lw,
                                      FocalParams())
    expected_contrastive = (_batch_reference(raw[ModalityId.T1], raw[ModalityId.T1C])
                            + _batch_reference(raw[ModalityId.T2], raw[ModalityId.FLAIR]))
    assert breakdown.contrastive == pytest.approx(expected_contrastive, rel=1e-9)
    assert breakdown.final == total.item()
    expected_final = 0.3 * breakdown.dice + 0.7 * breakdown.focal + 0.5 * breakdown.contrastive
    assert breakdown.final == pytest.approx(expected_final, abs=1e-12)
    assert set(breakdown.as_record()) == {"L_Final", "L_Dice", "L_Focal", "L_C"}


@pytest.mark.parametrize("seed", range(10))
def test_final_loss_in_single_precision_recombines_within_ledger_tolerance(seed):
    probs, target = _random_case(seed, n=3)
    projections = {m: Tensor(v) for m, v in _projections(seed).items()}
    lw = LossWeights(w_dice=0.5, w_focal=0.5, beta=1.0)
    total, breakdown = final_loss(Tensor(probs), Tensor(target), projections, PresenceMask.full(), lw,
                                  FocalParams())
    assert total.data.dtype == np.float32
    assert breakdown.final == total.item()
    recombined = 0.5 * breakdown.dice + 0.5 * breakdown.focal + 1.0 * breakdown.contrastive
    assert abs(breakdown.final - recombined) <= 1e-6


def _rotation(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


@pytest.mark.parametrize("seed", range(20))
def test_batch_contrastive_invariances(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 5))
    y = rng.normal(size=(4, 5))
    rotation = _rotation(rng, 5)
    order = rng.permutation(4)
    with precision(np.float64):
        value = batch_contrastive(Tensor(x), Tensor(y)).item()
        rotated = batch_contrastive(Tensor(x @ rotation), Tensor(y @ rotation)).item()
        swapped = batch_contrastive(Tensor(y), Tensor(x)).item()
        permuted = batch_contrastive(Tensor(x[order]), Tensor(y[order])).item()
    assert rotated == pytest.approx(value, rel=1e-10)
    assert swapped == pytest.approx(value, rel=1e-10)
    assert permuted == pytest.approx(value, rel=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_segmentation_losses_ignore_batch_order(seed):
    probs, target = _random_case(seed, n=4)
    order = np.random.default_rng(seed + 1000).permutation(4)
    with precision(np.float64):
        dice = dice_loss(Tensor(probs), Tensor(target)).item()
        focal = focal_loss(Tensor(probs), Tensor(target)).item()
        dice_permuted = dice_loss(Tensor(probs[order]), Tensor(target[order])).item()
        focal_permuted = focal_loss(Tensor(probs[order]), Tensor(target[order])).item()
    assert dice_permuted == pytest.approx(dice, rel=1e-12)
    assert focal_permuted == pytest.approx(focal, rel=1e-12)
