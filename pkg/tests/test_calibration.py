from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cknockoff import calibration as cal
from cknockoff.calibration import (
    CalibrationConfig,
    Engine,
    cknockoff_reject,
    cs_level,
    fallback_statistic,
    filter_from_scores,
    filter_set,
    integrand,
    knockoff_report,
    local_linear,
    omega_minus_estimate,
    promising_scores,
    run_fallback_test,
)
from cknockoff.linear_model import DesignFactors, ProblemInstance, decompose, standardize_columns
from cknockoff.sampling import sphere
from cknockoff.seqstep import knockoff_reject

from conftest import random_instance


@pytest.fixture(scope="module")
def setup():
    inst = random_instance(7, n=90, m=30, alpha=0.2, k=4, amp=3.5)
    eng = Engine(inst.X, inst.alpha, CalibrationConfig(seed=1))
    obs = eng.observe(inst.y)
    return inst, eng, obs


def test_observation_matches_direct_computation(setup):
    inst, eng, obs = setup
    assert obs.sigma_tilde2 == pytest.approx(eng.ensemble.sigma_tilde2(inst.y), rel=1e-12)
    np.testing.assert_allclose(obs.xty, eng.ensemble.X_plus.T @ inst.y)


def test_fallback_statistic_agrees_with_engine(setup):
    inst, eng, obs = setup
    for j in (0, 5, 17):
        hc = eng.hypothesis(obs, j)
        fb = fallback_statistic(decompose(inst, j, eng.factors))
        assert fb.value == pytest.approx(hc.c, rel=1e-6, abs=1e-9)
        assert fb.lambda_j == pytest.approx(hc.lambda_j)


def test_omega_plus_brackets_the_fallback_level(setup):
    inst, eng, obs = setup
    for j in range(0, 30, 7):
        hc = eng.hypothesis(obs, j)
        T = lambda e: abs(hc.t_center + hc.vtx * e)  # noqa: E731
        assert hc.a1 < hc.a2
        assert T(hc.a1) == pytest.approx(hc.c, abs=1e-9)
        assert T(hc.a2) == pytest.approx(hc.c, abs=1e-9)
        assert T(0.5 * (hc.a1 + hc.a2)) < hc.c
        assert min(abs(hc.eta_obs - hc.a1), abs(hc.eta_obs - hc.a2)) < 1e-9 * max(1.0, hc.rho)


def test_fallback_is_marginal_when_lasso_is_empty():
    rng = np.random.default_rng(4)
    X, _ = standardize_columns(rng.standard_normal((40, 8)))
    Q, _ = np.linalg.qr(X)
    noise = rng.standard_normal(40)
    y = 30.0 * (noise - Q @ (Q.T @ noise)) + 0.01 * X[:, 2]
    inst = ProblemInstance(X, y, 0.1)
    fb = fallback_statistic(decompose(inst, 2))
    assert np.allclose(fb.yhat_j, 0.0)
    assert fb.value == pytest.approx(abs(X[:, 2] @ y), rel=1e-12)


def test_filter_toy_example():
    p = np.array([0.001, 0.02, 0.03, 0.5, 0.9])
    W = np.array([1.0, -3.0, 0.5, 2.0, -0.2])
    seq = knockoff_reject(W, 0.1)
    assert seq.rejections.size == 0
    np.testing.assert_array_equal(filter_set(p, W, seq, 0.1), [0, 1, 2, 3])
    scores = promising_scores(p, W, seq, 0.1)
    np.testing.assert_array_equal(filter_from_scores(scores, 1.0), [0, 1, 2, 3])


@given(seed=st.integers(0, 10_000), alpha=st.sampled_from([0.05, 0.1, 0.2]))
def test_promising_scores_match_brute_force(seed, alpha):
    rng = np.random.default_rng(seed)
    m = 12
    p = rng.uniform(0, 0.2, m) ** 2
    W = np.round(rng.normal(0, 2, m), 1)
    seq = knockoff_reject(W, alpha)
    scores = promising_scores(p, W, seq, alpha)
    for s in (0.05, 0.25, 0.5, 1.0, 2.0, 5.0):
        brute = filter_set(p, W, seq, alpha, s)
        np.testing.assert_array_equal(filter_from_scores(scores, s), brute)


def test_integrand_bounds_and_monotone_in_c(setup):
    inst, eng, obs = setup
    j = int(obs.filter_set[0]) if obs.filter_set.size else 0
    hc = eng.hypothesis(obs, j)
    rng = np.random.default_rng(0)
    eta = np.linspace(-hc.rho, hc.rho, 41)[1:-1]
    U = sphere(rng, eta.size, hc.df)
    f, fp, fm = integrand(eng, hc, obs, eta, U)
    assert np.all(f >= -eng.alpha - 1e-12) and np.all(f <= 1 + 1e-12)
    np.testing.assert_allclose(f, fp - fm)
    c2 = 2.0 * hc.c
    hc2 = replace(hc, c=c2, a1=(hc.xj_yhat - hc.xj_proj - c2) / hc.vtx, a2=(hc.xj_yhat - hc.xj_proj + c2) / hc.vtx)
    f2, fp2, _ = integrand(eng, hc2, obs, eta, U)
    assert np.all(fp2 <= fp + 1e-15)
    assert np.all(f2 <= f + 1e-15)


def test_local_linear_reproduces_lines():
    x = np.linspace(-1, 1, 16)
    y = 3 * x - 1
    xe = np.linspace(-1, 1, 50)
    np.testing.assert_allclose(local_linear(x, y, xe, 0.2), 3 * xe - 1, atol=1e-10)


def test_omega_minus_estimate_on_synthetic_integrand():
    # |W| exceeds the threshold exactly on η > 0.3
    def ev(eta, U):
        return {"absW": np.where(eta > 0.3, 2.0, 0.5), "w_star": np.ones_like(eta)}
    iv = omega_minus_estimate(ev, 1.0, np.random.default_rng(0), 5, k=16, refine=1024)
    assert len(iv) == 1
    a, b = iv[0]
    assert b == pytest.approx(1.0) and abs(a - 0.3) < 0.2
    with pytest.raises(ValueError):
        omega_minus_estimate(ev, 1.0, np.random.default_rng(0), 5, k=4)


def test_cs_level():
    cfg = CalibrationConfig()
    assert cs_level(cfg, 0.1, 0, 50, 4) == pytest.approx(0.01 / 50)
    assert cs_level(cfg, 0.1, 3, 50, 4) == pytest.approx(0.03 / 50)
    assert cs_level(replace(cfg, cs_m_from_filter=True), 0.1, 3, 50, 4) == pytest.approx(0.03 / 4)


def test_degenerate_region_rejects(setup, monkeypatch):
    inst, eng, obs = setup
    j = 3
    hc = eng.hypothesis(obs, j)
    wide = replace(hc, a1=-2 * hc.rho, a2=2 * hc.rho)
    monkeypatch.setattr(eng, "hypothesis", lambda o, k: wide)
    monkeypatch.setattr(cal, "omega_minus_estimate", lambda *a, **k: [])
    res = run_fallback_test(eng, obs, j)
    assert res.degenerate and res.rejected and res.samples_used == 0
    res = run_fallback_test(eng, obs, j, replace(eng.config, degenerate_reject=False))
    assert res.degenerate and not res.rejected


def test_cknockoff_contains_knockoff_and_is_deterministic(setup):
    inst, eng, obs = setup
    kn = knockoff_report(inst, engine=eng)
    r1 = cknockoff_reject(inst, engine=eng)
    r2 = cknockoff_reject(inst, engine=eng)
    assert set(kn.rejections) <= set(r1.rejections)
    np.testing.assert_array_equal(r1.rejections, r2.rejections)
    d = r1.to_dict()
    assert len(d["hypotheses"]) == inst.m
    for rec in d["hypotheses"]:
        assert rec["rejected"] == (rec["index"] in d["rejections"])
    tested = [rec for rec in d["hypotheses"] if rec["fallback_decision"] is not None]
    assert {rec["index"] for rec in tested} == set(int(j) for j in r1.filter_set)


def test_fallback_reject_on_strong_signal():
    # a single strong signal at α = 0.05 with m = 10 < 1/α: knockoffs cannot reject
    rng = np.random.default_rng(3)
    X, _ = standardize_columns(rng.standard_normal((40, 10)))
    y = 8.0 * X[:, 0] + rng.standard_normal(40)
    inst = ProblemInstance(X, y, 0.05)
    kn = knockoff_report(inst)
    assert kn.rejections.size == 0
    rep = cknockoff_reject(inst, CalibrationConfig(seed=0))
    assert 0 in rep.rejections


def test_engine_needs_lambda_without_residual_dof():
    rng = np.random.default_rng(0)
    X, _ = standardize_columns(rng.standard_normal((20, 10)))
    with pytest.raises(ValueError):
        Engine(X, 0.1)
    eng = Engine(X, 0.1, CalibrationConfig(lam=1.0))
    assert eng.df2 == 0


def test_threaded_calibration_matches_serial():
    inst = random_instance(31, n=80, m=20, alpha=0.2, k=3, amp=3.0)
    serial = cknockoff_reject(inst, CalibrationConfig(seed=4))
    threaded = cknockoff_reject(inst, CalibrationConfig(seed=4, n_jobs=3))
    np.testing.assert_array_equal(serial.rejections, threaded.rejections)
    assert serial.filter_set.size > 1
    for j, r in serial.hypothesis_results.items():
        t = threaded.hypothesis_results[j]
        assert (r.decision, r.samples_used) == (t.decision, t.samples_used)
