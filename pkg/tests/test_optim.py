import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsm.optim import AdamaxState, adamax_step, clip_grad_norm, cosine_anneal_lr
from adsm.tensor import ContractViolation, Tensor


def _scalar_adamax(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-python recurrence, written independently of the array version."""
    m = u = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        u = max(b2 * u, abs(g))
        theta = theta - (lr / (1 - b1 ** t)) * m / (u + eps)
    return theta


def test_zero_gradient_leaves_params_unchanged():
    p = np.array([1.0, -2.0])
    st_ = AdamaxState.zeros_like([p])
    adamax_step([p], [np.zeros(2)], st_, lr=1e-3)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_single_step_matches_scalar_recurrence():
    p = np.zeros(1)
    state = AdamaxState.zeros_like([p])
    adamax_step([p], [np.ones(1)], state, lr=1e-4)
    assert p[0] == pytest.approx(_scalar_adamax(0.0, [1.0], 1e-4), rel=1e-12)


def test_many_steps_match_scalar_recurrence():
    gs = np.random.default_rng(1).normal(size=25)
    p = Tensor(np.array([0.3]), dtype=np.float64)
    state = AdamaxState.zeros_like([p])
    for g in gs:
        adamax_step([p], [np.array([g])], state, lr=1e-2)
    assert p.data[0] == pytest.approx(_scalar_adamax(0.3, gs, 1e-2), rel=1e-12)


def test_adamax_rejects_bad_inputs():
    p = np.zeros(2)
    state = AdamaxState.zeros_like([p])
    with pytest.raises(ContractViolation):
        adamax_step([p], [np.zeros(2)], state, lr=0.0)
    with pytest.raises(ContractViolation):
        adamax_step([p], [np.zeros(3)], state, lr=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30))
def test_infinity_norm_never_decreases_without_decay(gs):
    p = np.zeros(1)
    state = AdamaxState.zeros_like([p], beta2=1.0)
    prev = 0.0
    for g in gs:
        adamax_step([p], [np.array([g])], state, lr=1e-3)
        assert state.u[0][0] >= prev
        prev = state.u[0][0]


def test_cosine_schedule_examples():
    assert cosine_anneal_lr(0, 10, 0.1) == 0.1
    assert cosine_anneal_lr(10, 10, 0.1) == 0.0
    assert cosine_anneal_lr(5, 10, 0.1) == pytest.approx(0.05, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.floats(1e-6, 1.0))
def test_cosine_schedule_is_monotone_and_bounded(total, lr0):
    lrs = [cosine_anneal_lr(e, total, lr0) for e in range(total + 1)]
    assert all(0 <= v <= lr0 for v in lrs)
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_cosine_schedule_errors():
    with pytest.raises(ContractViolation):
        cosine_anneal_lr(0, 0, 0.1)
    with pytest.raises(ContractViolation):
        cosine_anneal_lr(0, 10, 0.0)
    with pytest.raises(ContractViolation):
        cosine_anneal_lr(11, 10, 0.1)


def test_clip_grad_norm():
    gs = [np.array([3.0]), np.array([4.0])]
    assert clip_grad_norm(gs, 1.0) == pytest.approx(5.0)
    assert math.hypot(gs[0][0], gs[1][0]) == pytest.approx(1.0)
    small = [np.array([0.3])]
    clip_grad_norm(small, 1.0)
    assert small[0][0] == 0.3
