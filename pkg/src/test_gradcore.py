"""
Tests for the tape, the differentiable primitives and Adam.

Every primitive is checked against central finite differences in float64
over 20 seeded random instances.
"""

import functools

import numpy as np
import pytest

from errors import ConfigurationError, ContractError, DegenerateBatchError, DimensionError, EmptyFusionError
from gradcore import (
    AdamState,
    RunningStats,
    Tape,
    Tensor,
    active_tape,
    adam_step,
    add,
    batchnorm1d,
    batchnorm2d,
    clamp,
    concat_channels,
    conv2d,
    div,
    elemwise_max_n,
    exp,
    gather_rows,
    global_avgpool,
    gradcheck,
    linear,
    log,
    masked_logsumexp,
    matmul,
    maxpool2d,
    mean,
    mul,
    pow_scalar,
    precision,
    reduce_sum,
    relu,
    reshape,
    softmax_channels,
    sqrt,
    sub,
    subsample2d,
    transpose,
    upsample_nearest,
    zero_grad,
)
from gradcore.ops import _emit

SEEDS = range(20)


def _away_from_zero(rng, shape, margin=0.1):
    """Values in +-[margin, 1] so kinks at 0 stay outside the finite-difference step."""
    return rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape, spacing=0.01):
    """Pairwise distinct values at least `spacing` apart, in random order."""
    count = int(np.prod(shape))
    return (rng.permutation(count) * spacing - count * spacing / 2).reshape(shape)


def _case_inputs(name, rng):
    if name == "add":
        return (lambda a, b: add(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(1, 4))]
    if name == "sub":
        return (lambda a, b: sub(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))]
    if name == "mul":
        return (lambda a, b: mul(a, b)), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4,))]
    if name == "div":
        return (lambda a, b: div(a, b)), [rng.normal(size=(3, 4)), rng.uniform(0.5, 1.5, size=(3, 4))]
    if name == "pow":
        return (lambda a: pow_scalar(a, 2.0)), [rng.normal(size=(3, 4))]
    if name == "exp":
        return (lambda a: exp(a)), [rng.normal(size=(3, 4))]
    if name == "log":
        return (lambda a: log(a)), [rng.uniform(0.5, 2.0, size=(3, 4))]
    if name == "sqrt":
        return (lambda a: sqrt(a)), [rng.uniform(0.5, 2.0, size=(3, 4))]
    if name == "clamp":
        x = _away_from_zero(rng, (3, 4))
        return (lambda a: clamp(a, -0.5, 0.5)), [np.where(np.abs(np.abs(x) - 0.5) < 0.05, x * 0.5, x)]
    if name == "relu":
        return (lambda a: relu(a)), [_away_from_zero(rng, (2, 3, 4))]
    if name == "reshape":
        return (lambda a: reshape(a, (4, 3))), [rng.normal(size=(3, 4))]
    if name == "sum":
        return (lambda a: reduce_sum(a, axis=1)), [rng.normal(size=(3, 4))]
    if name == "mean":
        return (lambda a: mean(a, axis=(0, 2), keepdims=True)), [rng.normal(size=(2, 3, 4))]
    if name == "matmul":
        return (lambda a, b: matmul(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]
    if name == "transpose":
        return (lambda a: transpose(a)), [rng.normal(size=(3, 4))]
    if name == "gather_rows":
        return (lambda a: gather_rows(a, [2, 0, 2])), [rng.normal(size=(3, 4))]
    if name == "concat":
        return (lambda a, b: concat_channels([a, b])), [rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 2, 3, 3))]
    if name == "masked_logsumexp":
        mask = rng.random((4, 5)) < 0.6
        mask[:, 0] = True
        return (lambda a: masked_logsumexp(a, mask)), [rng.normal(size=(4, 5))]
    if name == "conv2d":
        return (lambda x, w, b: conv2d(x, w, b, stride=1, padding=1)), \
            [rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3,))]
    if name == "conv2d_strided":
        return (lambda x, w, b: conv2d(x, w, b, stride=2, padding=1)), \
            [rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2,))]
    if name == "conv2d_asymmetric":
        return (lambda x, w, b: conv2d(x, w, b, stride=2, padding=(1, 0))), \
            [rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3,))]
    if name == "subsample2d":
        return (lambda a: subsample2d(a)), [rng.normal(size=(2, 3, 6, 4))]
    if name == "batchnorm2d":
        running = RunningStats(2)
        return (lambda x, g, b: batchnorm2d(x, g, b, running, training=True)), \
            [rng.normal(size=(3, 2, 3, 3)), rng.uniform(0.5, 1.5, size=(2,)), rng.normal(size=(2,))]
    if name == "batchnorm1d":
        running = RunningStats(3)
        return (lambda x, g, b: batchnorm1d(x, g, b, running, training=True)), \
            [rng.normal(size=(4, 3)), rng.uniform(0.5, 1.5, size=(3,)), rng.normal(size=(3,))]
    if name == "elemwise_max_n":
        stacked = _distinct(rng, (3, 2, 2, 3, 3))
        return (lambda a, b, c: elemwise_max_n([a, b, c])), [stacked[0], stacked[1], stacked[2]]
    if name == "global_avgpool":
        return (lambda a: global_avgpool(a)), [rng.normal(size=(2, 3, 4, 4))]
    if name == "linear":
        return (lambda x, w, b: linear(x, w, b)), \
            [rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2,))]
    if name == "softmax":
        return (lambda a: softmax_channels(a)), [rng.normal(size=(2, 4, 3, 3))]
    if name == "maxpool2d":
        return (lambda a: maxpool2d(a)), [_distinct(rng, (2, 2, 4, 4))]
    if name == "upsample":
        return (lambda a: upsample_nearest(a)), [rng.normal(size=(2, 2, 3, 3))]
    raise KeyError(name)


CASES = ["add", "sub", "mul", "div", "pow", "exp", "log", "sqrt", "clamp", "relu", "reshape", "sum", "mean",
         "matmul", "transpose", "gather_rows", "concat", "masked_logsumexp", "conv2d", "conv2d_strided",
         "conv2d_asymmetric", "batchnorm2d", "batchnorm1d", "elemwise_max_n", "global_avgpool", "linear",
         "softmax", "maxpool2d", "subsample2d", "upsample"]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", CASES)
def test_gradients_match_finite_differences(name, seed):
    fn, inputs = _case_inputs(name, np.random.default_rng(seed))
    result = gradcheck(fn, inputs, seed=seed)
    assert result.passed, f"{name}: max abs {result.max_abs_error:.3e}, max rel {result.max_rel_error:.3e}"


@pytest.mark.parametrize("seed", range(10))
def test_elemwise_max_is_a_fold_of_pairwise_max(seed):
    rng = np.random.default_rng(seed)
    inputs = [Tensor(rng.normal(size=(2, 8, 16, 16))) for _ in range(4)]
    fused = elemwise_max_n(inputs).data
    left = functools.reduce(np.maximum, [t.data for t in inputs])
    right = functools.reduce(lambda acc, t: np.maximum(t, acc), [t.data for t in reversed(inputs)])
    np.testing.assert_array_equal(fused, left)
    np.testing.assert_array_equal(fused, right)
    np.testing.assert_array_equal(elemwise_max_n([inputs[0]]).data, inputs[0].data)


def test_elemwise_max_ties_route_gradient_to_first_input():
    a = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    tape = Tape()
    with tape.recording():
        loss = reduce_sum(elemwise_max_n([a, b]))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, np.ones((1, 1, 2, 2)))
    np.testing.assert_array_equal(b.grad, np.zeros((1, 1, 2, 2)))


def test_elemwise_max_rejects_empty_and_mismatched_inputs():
    with pytest.raises(EmptyFusionError):
        elemwise_max_n([])
    with pytest.raises(DimensionError):
        elemwise_max_n([Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 4, 4)))])


def test_ops_outside_recording_do_not_touch_the_tape():
    tape = Tape()
    x = Tensor(np.ones(3), requires_grad=True)
    assert active_tape() is None
    y = mul(x, 2.0)
    assert len(tape) == 0
    assert y.node_id is None
    with tape.recording():
        assert active_tape() is tape
        mul(x, 2.0)
        mul(Tensor(np.ones(3)), 2.0)  # no input requires grad
    assert len(tape) == 1
    assert active_tape() is None


def test_backward_accumulates_until_zeroed():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    tape = Tape()
    for _ in range(2):
        with tape.recording():
            loss = reduce_sum(mul(x, x))
        tape.backward(loss)
        tape.clear()
    np.testing.assert_allclose(x.grad, 2 * 2.0 * x.data)
    zero_grad({"x": x})
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_backward_needs_a_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    tape = Tape()
    with tape.recording():
        y = mul(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_default_precision_is_float32_and_switchable():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
        assert mul(Tensor([1.0]), 3.0).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_batchnorm_needs_two_values_per_channel_in_training():
    x = Tensor(np.ones((1, 3)))
    with pytest.raises(DegenerateBatchError):
        batchnorm1d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), RunningStats(3), training=True)
    # running statistics make single-instance inference possible
    out = batchnorm1d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), RunningStats(3), training=False)
    assert out.shape == (1, 3)


def test_conv2d_output_extent():
    x = Tensor(np.zeros((2, 3, 9, 7)))
    w = Tensor(np.zeros((4, 3, 3, 3)))
    b = Tensor(np.zeros(4))
    assert conv2d(x, w, b, stride=1, padding=1).shape == (2, 4, 9, 7)
    assert conv2d(x, w, b, stride=2, padding=1).shape == (2, 4, 5, 4)
    with pytest.raises(DimensionError):
        conv2d(x, Tensor(np.zeros((4, 2, 3, 3))), b)

    even = Tensor(np.zeros((2, 3, 8, 8)))
    assert conv2d(even, w, b, stride=2, padding=(1, 0)).shape == (2, 4, 4, 4)
    with pytest.raises(ConfigurationError):
        conv2d(even, w, b, stride=2, padding=1)
    with pytest.raises(ConfigurationError):
        conv2d(even, w, b, stride=1, padding=(1, -1))


def test_subsample2d_keeps_every_other_pixel():
    x = Tensor(np.arange(2 * 1 * 4 * 6).reshape(2, 1, 4, 6))
    out = subsample2d(x)
    assert out.shape == (2, 1, 2, 3)
    np.testing.assert_array_equal(out.data, x.data[:, :, ::2, ::2])
    with pytest.raises(DimensionError):
        subsample2d(Tensor(np.zeros((4, 6))))
    with pytest.raises(ConfigurationError):
        subsample2d(x, factor=0)


def test_softmax_channels_sums_to_one():
    rng = np.random.default_rng(3)
    probs = softmax_channels(Tensor(rng.normal(scale=5.0, size=(2, 4, 5, 5)))).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_adam_first_step_moves_by_learning_rate():
    param = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    param.grad = np.array([0.3, -4.0, 1e-2], dtype=np.float32)
    state = AdamState(lr=1e-3)
    adam_step({"p": param}, state)
    # bias-corrected first step is lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 0.5]) - 1e-3 * np.sign([0.3, -4.0, 1e-2])
    np.testing.assert_allclose(param.data, expected, atol=1e-6)
    assert state.step_count == 1
    np.testing.assert_allclose(state.m["p"], 0.1 * param.grad, rtol=1e-6)
    np.testing.assert_allclose(state.v["p"], 0.001 * param.grad ** 2, rtol=1e-5)


def test_adam_skip_leaves_values_and_moments_untouched():
    moving = Tensor(np.ones(2), requires_grad=True)
    frozen = Tensor(np.ones(2), requires_grad=True)
    state = AdamState(lr=0.1)
    state.m["frozen"] = np.full(2, 0.5, dtype=np.float32)
    state.v["frozen"] = np.full(2, 0.25, dtype=np.float32)
    moving.grad = np.ones(2, dtype=np.float32)
    frozen.grad = None
    adam_step({"moving": moving, "frozen": frozen}, state, skip={"frozen"})
    np.testing.assert_array_equal(frozen.data, np.ones(2, dtype=np.float32))
    np.testing.assert_array_equal(state.m["frozen"], np.full(2, 0.5, dtype=np.float32))
    np.testing.assert_array_equal(state.v["frozen"], np.full(2, 0.25, dtype=np.float32))
    assert np.all(moving.data < 1.0)


def test_adam_requires_gradients_for_updated_parameters():
    with pytest.raises(ContractError):
        adam_step({"p": Tensor(np.ones(2), requires_grad=True)}, AdamState())


def _scaled(factor, backward_error):
    """x * factor whose recorded gradient is off by a relative `backward_error`."""
    def op(x):
        return _emit("scaled", (x,), x.data * factor, lambda g: (g * factor * (1.0 + backward_error),))
    return op


@pytest.mark.parametrize("factor, backward_error, passed", [
    (1.0, 0.0, True),
    (1e3, 5e-3, False),
    (3e-3, 2e-2, False),
    (1e-6, 0.5, True),
])
def test_gradcheck_bounds_absolute_and_relative_error_separately(factor, backward_error, passed):
    x = np.random.default_rng(0).uniform(0.5, 1.0, size=(3,))
    result = gradcheck(_scaled(factor, backward_error), [x])
    assert result.passed is passed, (result.max_abs_error, result.max_rel_error)
    if backward_error and factor >= 1e-3:
        assert result.max_rel_error == pytest.approx(backward_error / (1.0 + backward_error), rel=1e-4)
