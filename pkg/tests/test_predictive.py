import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predvision.predictive import (
    BLOCK_FEEDBACK, BLOCK_NORTH, BLOCK_PREV, BLOCK_SIMPLE, ComplexState, ComplexWeights,
    LearningConstants, N_BLOCKS, assemble_context, complex_activate, complex_learn,
    learning_rate, normalize_complex, prediction_error,
)
from predvision.sparse_coding import NumericError


def test_learning_rate_schedule():
    assert learning_rate(0) == pytest.approx(1e-4)
    assert learning_rate(100000) == pytest.approx(1.0 / 20000.0)
    assert learning_rate(10, LearningConstants(rate_offset=1.0, rate_divisor=1.0)) == \
        pytest.approx(1.0 / 11.0)


def test_context_layout():
    J = 3
    a = np.array([1.0, 2.0, 3.0])
    north = np.array([7.0, 8.0, 9.0])
    p0 = assemble_context(a, np.zeros(J), {"north": north}, feedback=np.ones(J))
    assert p0.shape == (N_BLOCKS * J,)
    np.testing.assert_array_equal(p0[BLOCK_SIMPLE * J:(BLOCK_SIMPLE + 1) * J], a)
    np.testing.assert_array_equal(p0[BLOCK_NORTH * J:(BLOCK_NORTH + 1) * J], north)
    np.testing.assert_array_equal(p0[BLOCK_FEEDBACK * J:], 1.0)
    assert np.count_nonzero(p0) == 3 + 3 + 3


def test_context_rejects_bad_blocks():
    with pytest.raises(ValueError):
        assemble_context(np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        assemble_context(np.ones(3), np.ones(3), [None] * 5)


def test_activation_is_rectified():
    w = ComplexWeights.zeros(2)
    w.block(BLOCK_SIMPLE)[:] = [[1.0, -1.0], [0.0, 0.0]]
    out = complex_activate(assemble_context([2.0, 0.0], np.zeros(2)), w)
    np.testing.assert_array_equal(out, [2.0, 0.0])


def test_gradient_clip_oracle():
    # |p|max = 5 and |d|max = 1 give a clip factor of 1/5
    J = 1
    w = ComplexWeights.zeros(J)
    p0 = assemble_context([5.0], [0.0])
    consts = LearningConstants(weak_decay=0.0, self_penalty=0.0, gate_leak=0.0)
    complex_learn(w, p0, [1.0], [2.0], constants=consts)
    r = learning_rate(0)
    expected = np.zeros((N_BLOCKS, 1))
    expected[BLOCK_SIMPLE, 0] = r * 5.0 * 1.0 / 5.0
    np.testing.assert_allclose(w.C, expected, rtol=1e-6)
    assert w.t == 1


def test_closed_gate_only_leaks():
    w = ComplexWeights.zeros(1)
    p0 = assemble_context([0.5], [0.0])
    consts = LearningConstants(weak_decay=0.0, self_penalty=0.0, gate_leak=0.01)
    complex_learn(w, p0, [0.0], [1.0], constants=consts)
    assert w.C[BLOCK_SIMPLE, 0] == pytest.approx(learning_rate(0) * 0.5 * 0.01)


def test_decay_is_stronger_on_self_connection():
    J = 2
    w = ComplexWeights(np.ones((N_BLOCKS * J, J)))
    P = np.zeros(N_BLOCKS * J)
    complex_learn(w, P, np.zeros(J), np.zeros(J))
    r = learning_rate(0)
    self_weight = w.C[0, 0]
    other = w.C[1, 0]
    assert other == pytest.approx(1.0 - 1e-5 * r)
    assert self_weight == pytest.approx((1.0 - 1e-5 * r) * (1.0 - 0.9 * r))
    assert self_weight < other


def test_mean_and_sum_reductions():
    rng = np.random.default_rng(0)
    P = rng.random((4, N_BLOCKS * 2))
    pred = rng.random((4, 2))
    target = rng.random((4, 2))
    consts = LearningConstants(weak_decay=0.0, self_penalty=0.0)
    a = ComplexWeights.zeros(2)
    b = ComplexWeights.zeros(2)
    complex_learn(a, P, pred, target, reduce="mean", constants=consts)
    complex_learn(b, P, pred, target, reduce="sum", constants=consts)
    np.testing.assert_allclose(b.C, 4 * a.C)
    with pytest.raises(ValueError):
        complex_learn(a, P, pred, target, reduce="max")


def test_non_finite_learning_input_leaves_weights():
    w = ComplexWeights.zeros(2)
    before = w.C.copy()
    with pytest.raises(NumericError):
        complex_learn(w, np.full(14, np.inf), np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(w.C, before)
    assert w.t == 0


def test_normalize_fixed_point():
    state = ComplexState.fresh(1, 1)
    for t in range(20000):
        out = normalize_complex(np.array([[5.0]]), state, t)
    assert state.v[0, 0] == pytest.approx(25.0, rel=1e-9)
    assert out[0, 0] == pytest.approx(1.0, rel=1e-6)


def test_normalize_frozen_leaves_state():
    state = ComplexState.fresh(2, 3)
    out = normalize_complex(np.full((2, 3), 2.0), state, 0, learn=False)
    np.testing.assert_array_equal(state.v, 1.0)
    np.testing.assert_allclose(out, 2.0, rtol=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 100.0))
def test_normalized_power_is_unity(seed, scale):
    rng = np.random.default_rng(seed)
    consts = LearningConstants(rate_offset=100.0, rate_divisor=1.0)
    state = ComplexState.fresh(1, 1)
    outs = []
    for t in range(3000):
        c0 = scale * rng.exponential(size=(1, 1))
        outs.append(normalize_complex(c0, state, t, constants=consts)[0, 0])
    rms = np.sqrt(np.mean(np.square(outs[1000:])))
    assert 0.7 < rms < 1.3


def test_learning_reduces_prediction_error():
    rng = np.random.default_rng(1)
    J = 4
    M = np.abs(rng.standard_normal((J, J)))
    w = ComplexWeights.zeros(J)
    consts = LearningConstants(rate_offset=10.0, rate_divisor=1e9)
    errs = []
    for _ in range(3000):
        a = np.abs(rng.standard_normal(J))
        p0 = assemble_context(a, np.zeros(J))
        c = complex_activate(p0, w)
        target = a @ M
        errs.append(prediction_error(target, c))
        complex_learn(w, p0, c, target, constants=consts)
    assert np.mean(errs[-300:]) < 0.1 * np.mean(errs[:30])
    assert abs(w.block(BLOCK_PREV)).max() == 0.0
