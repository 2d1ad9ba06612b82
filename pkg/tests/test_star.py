from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cknockoff.calibration import CalibrationConfig, Engine, cknockoff_reject, run_fallback_test
from cknockoff.linear_model import ProblemInstance
from cknockoff.sampling import eta_cdf, eta_sf
from cknockoff.seqstep import cmax_for
from cknockoff.star import (
    cknockoff_star_reject,
    p_gate,
    refine_decision,
    rstar_membership,
    run_methods,
    solve_min_denominator,
    star_candidate_set,
)

from conftest import random_instance


def test_candidate_set_toy():
    # m = 6, α = 0.1: gate = min(0.1/6, 0.001/9) = 1.11e-4
    alpha = 0.1
    p = np.array([1e-5, 0.3, 5e-5, 2e-4, 1e-6, 0.5])
    scores = np.array([0.4, 0.01, 0.2, 0.05, 0.9, 0.1])
    S = np.array([0, 1, 2, 3, 4])
    assert p_gate(alpha, 6, cmax_for(alpha)) == pytest.approx(0.001 / 9)
    # gated members of S: 0, 2, 4; ranked by score 2 < 0 < 4
    np.testing.assert_array_equal(star_candidate_set(scores, p, S, alpha, k_cand=2), [0, 2])
    np.testing.assert_array_equal(star_candidate_set(scores, p, S, alpha, k_cand=3), [0, 2, 4])
    assert star_candidate_set(scores, np.full(6, 0.01), S, alpha).size == 0


def _fake(alpha=0.1, rho=1.0, df=20, a1=-0.6, a2=0.6):
    eng = SimpleNamespace(alpha=alpha, cmax=cmax_for(alpha))
    hc = SimpleNamespace(rho=rho, df=df, a1=a1, a2=a2, eta_obs=a2)
    return eng, hc


def test_membership_after_one_node():
    eng, hc = _fake()
    res = rstar_membership(eng, None, hc, None, k_step=3, f_override=lambda x: -eng.alpha / eng.cmax)
    assert res.member and len(res.nodes) == 1
    assert res.partial_sums[0] == pytest.approx(-res.B_plus, rel=1e-12)
    assert res.h == pytest.approx(res.B_plus * eng.cmax / eng.alpha)
    # the node lies inside (a1, a2), one step of Q-mass h below the observed point
    x = res.nodes[0]
    assert hc.a1 < x < hc.a2
    assert eta_sf(x, hc.rho, hc.df) - eta_sf(hc.a2, hc.rho, hc.df) == pytest.approx(res.h, rel=1e-8)


def test_membership_fails_on_zero_integrand():
    eng, hc = _fake()
    res = rstar_membership(eng, None, hc, None, k_step=3, f_override=lambda x: 0.0)
    assert not res.member and len(res.nodes) == 3


def test_membership_exhausts_when_step_too_big():
    eng, hc = _fake(a1=-0.05, a2=0.05)
    res = rstar_membership(eng, None, hc, None, k_step=3, f_override=lambda x: 0.0)
    assert res.exhausted and not res.member


def test_b_plus_equals_p_value_on_orthogonal_design():
    # X₋ⱼ ⟂ Xⱼ centres (a1, a2) at zero, where Ω⁺ is exactly the two-sided t-test tail
    rng = np.random.default_rng(12)
    Q, _ = np.linalg.qr(rng.standard_normal((60, 20)))
    y = Q @ np.r_[4.0, 3.0, np.zeros(18)] + rng.standard_normal(60)
    inst = ProblemInstance(Q, y, 0.1)
    eng = Engine(inst.X, inst.alpha, CalibrationConfig())
    obs = eng.observe(inst.y)
    for j in range(inst.m):
        hc = eng.hypothesis(obs, j)
        B = eta_cdf(hc.a1, hc.rho, hc.df) + eta_sf(hc.a2, hc.rho, hc.df)
        assert B == pytest.approx(obs.ols.p_values[j], rel=1e-8, abs=1e-14)


def test_solve_min_denominator():
    # Σ f over the rest = 0.3, Ī has two samples with b = 0.05 each, unit weights
    f = np.array([0.2, 0.1, 1.0, 1.0])
    b = np.array([0.0, 0.0, 0.05, 0.05])
    in_I = np.array([False, False, True, True])
    # need 2/R - 0.1 + 0.3 <= 0: impossible
    assert np.isinf(solve_min_denominator(f, b, in_I))
    f = np.array([-0.4, -0.2, 1.0, 1.0])
    # 2/R - 0.1 - 0.6 <= 0  ->  R >= 2/0.7 -> 3
    assert solve_min_denominator(f, b, in_I) == 3
    # weights scale the pieces
    w = np.array([1.0, 1.0, 0.5, 0.5])
    assert solve_min_denominator(f, b, in_I, w) == 2


@given(st.lists(st.tuples(st.floats(-0.2, 1.0), st.floats(0, 0.2), st.booleans()), min_size=1, max_size=20))
def test_solved_denominator_is_minimal(rows):
    f = np.array([r[0] for r in rows])
    b = np.array([r[1] for r in rows])
    I = np.array([r[2] for r in rows])
    R = solve_min_denominator(f, b, I)
    total = lambda R: np.sum(np.where(I, 1.0 / R - b, f))  # noqa: E731
    if np.isfinite(R):
        assert total(R) <= 1e-9
        if R > 1:
            assert total(R - 1) > -1e-9


@pytest.fixture(scope="module")
def star_runs():
    out = []
    for seed in range(4):
        inst = random_instance(100 + seed, n=60, m=15, alpha=0.1, k=2, amp=4.5)
        out.append((inst, run_methods(inst, CalibrationConfig(seed=seed))))
    return out


def test_sandwich(star_runs):
    for inst, reps in star_runs:
        kn = set(reps["knockoff"].rejections.tolist())
        ck = set(reps["cknockoff"].rejections.tolist())
        cs = set(reps["cknockoff-star"].rejections.tolist())
        assert kn <= ck <= cs


def test_star_matches_direct_calls(star_runs):
    inst, reps = star_runs[0]
    cfg = CalibrationConfig(seed=0)
    np.testing.assert_array_equal(cknockoff_reject(inst, cfg).rejections, reps["cknockoff"].rejections)
    np.testing.assert_array_equal(cknockoff_star_reject(inst, cfg).rejections, reps["cknockoff-star"].rejections)


def test_star_decisions_are_flagged(star_runs):
    for inst, reps in star_runs:
        ck = set(reps["cknockoff"].rejections.tolist())
        for rec in reps["cknockoff-star"].records:
            if rec["rejected"] and rec["index"] not in ck:
                assert "unverified-numerics" in rec["fallback_decision"]


def test_trimming_only_removes_rejections(star_runs):
    # trimming early can only make refinement less willing to reject
    for inst, reps in star_runs:
        eng = Engine(inst.X, inst.alpha, CalibrationConfig(seed=0))
        obs = eng.observe(inst.y)
        for j, res in reps["cknockoff"].hypothesis_results.items():
            res = run_fallback_test(eng, obs, j, keep_draws=True)
            if res.rejected or res.draws is None:
                continue
            cfg = eng.config
            full, _ = refine_decision(eng, obs, res, cfg, cfg.rng(j, sub=1), trim_first=10**9)
            trimmed, info = refine_decision(eng, obs, res, cfg, cfg.rng(j, sub=1), trim_first=1)
            assert (not trimmed) or full
            assert info["evaluated"] <= max(info["I_size"], 0)
