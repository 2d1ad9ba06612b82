import numpy as np
import pytest
from hypothesis import given, strategies as st

from cknockoff.knockoffs import build_knockoffs
from cknockoff.lasso import coarse_path_gram, lasso_gram
from cknockoff.statistics import KINDS, break_ties, clsm, feature_statistics, lcd, lcd_t, lsm

from conftest import random_instance


def _problem(seed, m=6, n=30, k=2):
    inst = random_instance(seed, n=n, m=m, k=k, amp=3.0)
    ens = build_knockoffs(inst)
    return ens.gram_plus, ens.X_plus.T @ inst.y, ens


def _swap(G, g, swap):
    m = G.shape[0] // 2
    perm = np.arange(2 * m)
    for j in swap:
        perm[j], perm[j + m] = j + m, j
    return G[np.ix_(perm, perm)], g[perm]


@pytest.mark.parametrize("kind", KINDS)
@given(seed=st.integers(0, 10_000), mask=st.lists(st.booleans(), min_size=6, max_size=6))
def test_swap_flips_signs(kind, seed, mask):
    G, g, _ = _problem(seed)
    swap = [j for j, s in enumerate(mask) if s]
    lam = 0.5
    # solve tightly: the identity is exact, the default stopping rule is not
    W = feature_statistics(kind, G, g, lam, tiebreak=False, tol=1e-13).W
    Gs, gs = _swap(G, g, swap)
    Ws = feature_statistics(kind, Gs, gs, lam, tiebreak=False, tol=1e-13).W
    sign = np.where(mask, -1.0, 1.0)
    np.testing.assert_allclose(Ws, sign * W, atol=1e-7)


def test_lcd_t_pushes_nonzero_out_by_two_lambda():
    # orthogonal design: the lasso is soft thresholding of g
    G = np.eye(4)
    g = np.array([2.0, 0.4, 1.5, -0.7])  # columns 0,1 real, 2,3 knockoffs
    W = lcd_t(G, g, 1.0).W
    # β = (1, 0, 0.5, 0): LCD 0.5 becomes 2.5; column 1 ties at zero and uses |g| difference
    np.testing.assert_allclose(W, [2.5, 0.4 - 0.7], atol=1e-10)
    np.testing.assert_allclose(lcd(G, g, 1.0).W, [0.5, 0.0], atol=1e-10)


@given(seed=st.integers(0, 10_000), lam=st.floats(0.05, 2.0))
def test_lcd_t_magnitude_iff_lcd_nonzero(seed, lam):
    G, g, _ = _problem(seed)
    W0 = lcd(G, g, lam).W
    W1 = lcd_t(G, g, lam).W
    big = np.abs(W1) > 2 * lam
    np.testing.assert_array_equal(big, W0 != 0)
    assert np.all(np.abs(W1[W0 == 0]) <= lam + 1e-8)
    assert np.all(np.sign(W1[W0 != 0]) == np.sign(W0[W0 != 0]))


def test_orthogonal_lsm_is_signed_max_of_abs_correlations():
    G = np.eye(6)
    g = np.array([3.0, -0.9, 0.2, 1.1, 2.5, -0.1])
    path = coarse_path_gram(G, g, 0.05, L=400)
    W = lsm(path).W
    a = np.abs(g)
    expect = np.maximum(a[:3], a[3:]) * np.sign(a[:3] - a[3:])
    np.testing.assert_allclose(W, expect, rtol=1e-12)
    # C-LSM interpolates between grid points so it also recovers |g| closely
    np.testing.assert_allclose(clsm(path).W, expect, rtol=0.02)


def test_orthogonal_lcd_matches_soft_threshold():
    G = np.eye(4)
    g = np.array([1.7, -0.2, -0.4, 0.9])
    lam = 0.5
    beta, _, _ = lasso_gram(G, g, lam)
    np.testing.assert_allclose(beta, np.sign(g) * np.maximum(np.abs(g) - lam, 0), atol=1e-12)
    np.testing.assert_allclose(lcd(G, g, lam).W, [1.2 - 0.0, 0.0 - 0.4], atol=1e-12)


def test_clsm_agrees_with_lsm_in_sign_and_order():
    agree, total = 0, 0
    for seed in range(30):
        G, g, _ = _problem(seed, m=10, n=60, k=3)
        path = coarse_path_gram(G, g, 0.3)
        a, b = lsm(path).W, clsm(path).W
        keep = (a != 0) & (b != 0)
        agree += int(np.sum(np.sign(a[keep]) == np.sign(b[keep])))
        total += int(keep.sum())
    assert total > 0 and agree / total > 0.9


def test_break_ties_separates_only_ties():
    W = np.array([1.0, -1.0, 1.0, 0.5, 0.0, 0.0, 2.0])
    out = break_ties(W)
    np.testing.assert_array_equal(np.sign(out), np.sign(W))
    assert np.max(np.abs(out - W)) < 1e-12
    assert len(set(np.abs(out[:3]).tolist())) == 3
    assert out[3] == 0.5 and out[6] == 2.0
    assert out[4] == 0.0 and out[5] == 0.0
    # ordering of non-tied magnitudes is kept
    assert np.all(np.abs(out[:3]) < 2.0) and np.all(np.abs(out[:3]) > 0.5)


@given(st.lists(st.sampled_from([-2.0, -1.0, 0.0, 1.0, 2.0, 3.0]), min_size=1, max_size=12))
def test_break_ties_is_order_preserving(vals):
    W = np.array(vals)
    out = break_ties(W)
    a, b = np.abs(W), np.abs(out)
    for i in range(W.size):
        for k in range(W.size):
            if a[i] < a[k]:
                assert b[i] < b[k]
    assert np.all(np.sign(out) == np.sign(W))


def test_invalid_inputs():
    G, g, _ = _problem(0)
    with pytest.raises(ValueError):
        feature_statistics("nope", G, g, 1.0)
    with pytest.raises(ValueError):
        lcd(G, g, 0.0)
    with pytest.raises(ValueError):
        feature_statistics("lcd", G[:5, :5], g[:5], 1.0)
