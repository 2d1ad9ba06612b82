import numpy as np
import pytest
from hypothesis import given, strategies as st

from cknockoff.seqstep import budgets, cmax_for, fdp_hat, knockoff_reject, supermartingale_trace

W5 = np.array([5.0, -1.0, 3.0, -4.0, 2.0])

w_lists = st.lists(st.floats(-10, 10, allow_nan=False).map(lambda v: round(v, 2)), min_size=1, max_size=30)


def test_fdp_hat_examples():
    assert fdp_hat(W5, 2.0) == pytest.approx(2 / 3)
    assert fdp_hat(W5, 1.0) == pytest.approx(1.0)
    assert fdp_hat(W5, 6.0) == np.inf
    assert fdp_hat(W5, np.inf) == 0.0
    with pytest.raises(ValueError):
        fdp_hat(W5, -1.0)


def test_knockoff_reject_examples():
    res = knockoff_reject(W5, 0.7)
    assert res.w_hat == 2.0
    np.testing.assert_array_equal(res.rejections, [0, 2, 4])
    res = knockoff_reject(W5, 0.5)
    assert np.isinf(res.w_hat) and res.rejections.size == 0


def test_budget_example():
    bud = budgets(W5, 0.5)
    assert bud.w_star == 4.0
    np.testing.assert_allclose(bud.b, [0.25, 0, 0, 0, 0])
    # no knockoff rejection at 0.5, so the un-stopped budget is empty
    np.testing.assert_allclose(bud.b0, 0.0)


def test_cmax():
    assert cmax_for(0.05) == 19
    assert cmax_for(0.2) == 4
    assert cmax_for(0.3) == 3
    assert cmax_for(0.5) == 1


def test_zero_statistics_are_ignored():
    W = np.array([0.0, 0.0, 3.0, 2.0, 1.0])
    res = knockoff_reject(W, 0.5)
    np.testing.assert_array_equal(res.rejections, [2, 3, 4])
    assert 0 not in res.rejections


@given(w_lists)
def test_rejections_respect_fdp_hat(vals):
    W = np.array(vals)
    for alpha in (0.1, 0.2, 0.5):
        res = knockoff_reject(W, alpha)
        if res.rejections.size:
            assert fdp_hat(W, res.w_hat) <= alpha + 1e-12
            assert np.all(W[res.rejections] > 0)


@given(w_lists)
def test_monotone_in_alpha(vals):
    W = np.array(vals)
    prev = set()
    for alpha in (0.05, 0.1, 0.2, 0.3, 0.5, 0.9):
        cur = set(knockoff_reject(W, alpha).rejections.tolist())
        assert prev <= cur
        prev = cur


@given(w_lists, st.sampled_from([0.05, 0.1, 0.2, 0.5]))
def test_budget_invariants(vals, alpha):
    W = np.array(vals)
    bud = budgets(W, alpha)
    assert np.all(bud.b >= bud.b0 - 1e-15)
    # the early stop caps |C| at cmax unless the knockoff stop comes first, where b = b0
    assert np.count_nonzero(bud.b) <= cmax_for(alpha) or np.array_equal(bud.b, bud.b0)
    assert np.all((bud.b >= 0) & (bud.b <= alpha))
    # b0 is nonzero exactly on the knockoff rejection set
    rej = knockoff_reject(W, alpha).rejections
    np.testing.assert_array_equal(np.nonzero(bud.b0)[0], rej)


def test_supermartingale_trace_ends_at_zero():
    null = np.array([True, True, False, True, False])
    tr = supermartingale_trace(W5, null)
    assert tr.size == 6 and tr[-1] == 0.0
    # at w=1: C ∩ H0 = {0}, A ∩ H0 = {1, 3}
    assert tr[0] == pytest.approx(1 / 3)
