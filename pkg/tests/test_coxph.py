import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patentsurv.coxph import (
    TestUndefinedError,
    breslow_baseline,
    fit_cox,
    fit_to_dict,
    hazard_ratio_table,
    log_partial_likelihood,
    ph_test,
    schoenfeld_residuals,
    score_and_information,
)
from patentsurv.dataset import DesignMatrix, IdentifiabilityError, encode_design
from patentsurv.model_suite import CoxModelSpec, builtin_suite
from patentsurv.nonparametric import fit_km
from patentsurv.numerics import chi_square_sf, finite_diff_gradient
from patentsurv.simulator import MODEL7_TRUTH, SimConfig, simulate

from conftest import random_design
from oracles import grid_log_pl, naive_log_pl


def design(x, times, events):
    return DesignMatrix.from_arrays(x, times, events)


# log partial likelihood


def test_null_value_no_ties(backend):
    times = [5, 3, 8, 1, 9, 4]
    events = [1, 1, 0, 1, 1, 0]
    m = design(np.random.default_rng(0).normal(size=(6, 2)), times, events)
    # risk-set sizes at event times 1, 3, 5, 9
    expected = -(math.log(6) + math.log(5) + math.log(3) + math.log(1))
    assert log_partial_likelihood(m, [0.0, 0.0]) == pytest.approx(expected, abs=1e-12)


def test_zero_column_null_value(backend):
    times = [5, 3, 8, 1]
    events = [1, 1, 0, 1]
    m0 = DesignMatrix.from_arrays(np.empty((4, 0)), times, events)
    m1 = design([[1.0], [0.0], [2.0], [1.0]], times, events)
    assert log_partial_likelihood(m0, []) == pytest.approx(log_partial_likelihood(m1, [0.0]), abs=1e-14)


@pytest.mark.parametrize("ties", ["efron", "breslow"])
def test_hand_instance_matches_naive_sum(backend, ties):
    x = [[1.0], [0.0], [1.0], [0.0]]
    times = [1, 2, 2, 3]
    events = [1, 1, 1, 0]
    m = design(x, times, events)
    for b in (-1.3, 0.0, 0.4, 2.0):
        assert log_partial_likelihood(m, [b], ties) == pytest.approx(naive_log_pl(x, times, events, [b], ties), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("ties", ["efron", "breslow"])
def test_random_instances_match_naive_sum(backend, seed, ties):
    rng = np.random.default_rng(seed)
    m = random_design(rng, int(rng.integers(3, 25)), int(rng.integers(1, 5)), ties=True)
    b = rng.normal(scale=0.7, size=m.p)
    expected = naive_log_pl(m.rows, m.times.tolist(), m.events.tolist(), b, ties)
    assert log_partial_likelihood(m, b, ties) == pytest.approx(expected, rel=1e-11, abs=1e-11)


def test_overflow_guard(backend):
    x = [[800.0], [0.0], [400.0], [-50.0]]
    m = design(x, [1, 2, 3, 4], [1, 1, 1, 0])
    val = log_partial_likelihood(m, [1.0])
    assert math.isfinite(val)


def test_bad_ties_rule():
    m = design([[1.0], [0.0]], [1, 2], [1, 1])
    with pytest.raises(ValueError):
        log_partial_likelihood(m, [0.0], "exact")


# derivatives


@pytest.mark.parametrize("seed", range(15))
@pytest.mark.parametrize("ties", ["efron", "breslow"])
def test_score_matches_finite_differences(backend, seed, ties):
    rng = np.random.default_rng(100 + seed)
    m = random_design(rng, int(rng.integers(4, 30)), int(rng.integers(1, 6)), ties=bool(seed % 2))
    b = rng.normal(scale=0.5, size=m.p)
    score, info = score_and_information(m, b, ties)
    fd = finite_diff_gradient(lambda v: log_partial_likelihood(m, v, ties), b, 1e-5)
    np.testing.assert_allclose(score, fd, rtol=1e-6, atol=1e-7)
    # information is minus the Jacobian of the score
    hess = np.column_stack([
        (score_and_information(m, b + h, ties)[0] - score_and_information(m, b - h, ties)[0]) / 2e-5
        for h in np.eye(m.p) * 1e-5
    ])
    np.testing.assert_allclose(info, -hess, rtol=1e-5, atol=1e-6)
    assert np.array_equal(info, info.T)
    assert np.linalg.eigvalsh(info).min() > -1e-10


def test_two_record_hand_score(backend):
    # record 0 (x=1) dies at t=1 with record 1 (x=0) at risk
    m = design([[1.0], [0.0]], [1, 2], [1, 0])
    for b in (-0.5, 0.0, 0.8):
        score, info = score_and_information(m, [b])
        w = math.exp(b) / (math.exp(b) + 1)
        assert score[0] == pytest.approx(1 - w, abs=1e-14)
        assert info[0, 0] == pytest.approx(w * (1 - w), abs=1e-14)


# fitting


def test_grid_search_oracle_six_records(backend):
    x = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
    times = [1, 2, 3, 4, 5, 6]
    events = [1, 1, 0, 1, 1, 0]
    grid = np.round(np.arange(-50000, 50001) * 1e-4, 10)
    b_grid = grid[np.argmax(grid_log_pl(x, times, events, grid))]
    fit = fit_cox(design(np.array(x)[:, None], times, events))
    assert fit.converged
    assert fit.coefficients[0] == pytest.approx(b_grid, abs=1e-4)


def test_fit_invariants(backend):
    d = simulate(SimConfig(n=1500, seed=3, true_coefficients=MODEL7_TRUTH))
    m = encode_design(d, builtin_suite()[6])
    fit = fit_cox(m)
    assert fit.converged
    np.testing.assert_array_equal(fit.hazard_ratios, np.exp(fit.coefficients))
    assert fit.lr_stat == pytest.approx(2 * (fit.log_pl_fit - fit.log_pl_null))
    assert fit.lr_stat >= 0
    assert fit.lr_df == 11
    assert np.linalg.norm(fit.score) <= 1e-9 * (1 + abs(fit.log_pl_fit))
    np.testing.assert_allclose(fit.standard_errors, np.sqrt(np.diag(fit.covariance)))
    hist = np.array(fit.loglik_history)
    assert np.all(np.diff(hist) >= -1e-12 * (1 + np.abs(hist[1:])))


def test_zero_effect_covariates_within_three_se():
    cfg = SimConfig(n=6000, seed=17, true_coefficients={})
    d = simulate(cfg)
    fit = fit_cox(encode_design(d, builtin_suite()[6]))
    assert np.all(np.abs(fit.coefficients) < 3 * fit.standard_errors)


def test_constant_column_identifiability():
    m = design([[1.0], [1.0], [1.0]], [1, 2, 3], [1, 1, 0])
    with pytest.raises(IdentifiabilityError):
        fit_cox(m)


def test_collinear_columns_identifiability():
    x = np.array([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0], [0.0, 0.0], [1.0, 2.0]])
    with pytest.raises(IdentifiabilityError):
        fit_cox(design(x, [1, 2, 3, 4, 5], [1, 1, 1, 1, 0]))


def test_separation_not_converged():
    # the x=1 record always dies first: the MLE is at +infinity
    m = design([[1.0], [0.0], [0.0]], [1, 2, 3], [1, 1, 0])
    fit = fit_cox(m, max_iter=15)
    assert not fit.converged
    assert fit.iterations == 15


def test_no_events_rejected():
    with pytest.raises(ValueError):
        fit_cox(design([[1.0], [0.0]], [1, 2], [0, 0]))


def test_location_and_scale(backend):
    d = simulate(SimConfig(n=1200, seed=5, true_coefficients=MODEL7_TRUTH))
    m = encode_design(d, builtin_suite()[6])
    base = fit_cox(m)
    shifted = DesignMatrix(m.column_names, m.rows + np.arange(m.p) * 3.7 - 2.0, m.times, m.events)
    fs = fit_cox(shifted)
    np.testing.assert_allclose(fs.coefficients, base.coefficients, atol=1e-8)
    np.testing.assert_allclose(fs.standard_errors, base.standard_errors, atol=1e-8)
    assert fs.lr_stat == pytest.approx(base.lr_stat, abs=1e-8)
    c = np.linspace(0.5, 4.0, m.p)
    fc = fit_cox(DesignMatrix(m.column_names, m.rows * c, m.times, m.events))
    np.testing.assert_allclose(fc.coefficients, base.coefficients / c, rtol=1e-7, atol=1e-10)
    np.testing.assert_allclose(fc.standard_errors, base.standard_errors / c, rtol=1e-7)
    assert fc.lr_stat == pytest.approx(base.lr_stat, abs=1e-8)
    assert fc.log_pl_fit == pytest.approx(base.log_pl_fit, abs=1e-8)


def test_efron_equals_breslow_without_ties(backend):
    rng = np.random.default_rng(9)
    m = random_design(rng, 40, 3, ties=False)
    a, b = fit_cox(m, "efron"), fit_cox(m, "breslow")
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-10)
    np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-10)


def test_permutation_bit_identical(backend):
    d = simulate(SimConfig(n=700, seed=1, true_coefficients=MODEL7_TRUTH))
    m = encode_design(d, builtin_suite()[6])
    perm = np.random.default_rng(2).permutation(m.n)
    mp = DesignMatrix(m.column_names, m.rows[perm], m.times[perm], m.events[perm])
    a, b = fit_cox(m), fit_cox(mp)
    assert a.coefficients.tobytes() == b.coefficients.tobytes()
    assert a.covariance.tobytes() == b.covariance.tobytes()


def test_lr_zero_at_zero_coefficients():
    # symmetric data: the maximum sits exactly at b = 0
    m = design([[1.0], [0.0], [1.0], [0.0]], [1, 1, 2, 2], [1, 1, 1, 1])
    fit = fit_cox(m)
    assert fit.coefficients[0] == 0.0
    assert fit.lr_stat == 0.0


def test_dsir_sign_matches_km_ordering():
    d = simulate(SimConfig(n=3000, seed=6))
    fit = fit_cox(encode_design(d, builtin_suite()[0]))
    c0, c1 = fit_km(d, "dsir")
    t = np.union1d(c0.event_times, c1.event_times)
    km_higher_hazard = np.mean(c1.at(t) - c0.at(t)) < 0
    assert (fit.coefficients[0] > 0) == km_higher_hazard


# hazard ratios


def test_hazard_ratio_rows():
    m = design([[1.0], [0.0], [1.0], [0.0], [1.0]], [1, 2, 3, 4, 5], [1, 0, 1, 1, 1])
    fit = fit_cox(m)
    (row,) = hazard_ratio_table(fit)
    assert row.hr == math.exp(row.coef)
    assert row.wald_p == chi_square_sf((row.coef / row.se) ** 2, 1)


@pytest.mark.parametrize("coef,hr", [(0.0, 1.0), (0.330, 1.3909681284637803), (-0.633, 0.5309964198721143)])
def test_hazard_ratio_values(coef, hr):
    assert math.exp(coef) == pytest.approx(hr, abs=1e-12)
    assert round(math.exp(coef), 3) == {0.0: 1.0, 0.330: 1.391, -0.633: 0.531}[coef]


# baseline


def test_baseline_null_is_nelson_aalen():
    times = [4, 1, 7, 3, 9, 2]
    events = [1, 1, 0, 1, 1, 1]
    m = design(np.zeros((6, 1)) + np.arange(6)[:, None], times, events)
    fit = fit_cox(m)
    zero = type(fit)(**{**fit.__dict__, "coefficients": np.zeros(1)})
    base = breslow_baseline(zero, m)
    np.testing.assert_array_equal(base.times, [1, 2, 3, 4, 9])
    np.testing.assert_array_equal(base.increments, [1 / 6, 1 / 5, 1 / 4, 1 / 3, 1 / 1])


def test_baseline_hand_two_event_times():
    # x = (1, 0, 1), times (1, 2, 3), events (1, 1, 0), b = 0.5
    m = design([[1.0], [0.0], [1.0]], [1, 2, 3], [1, 1, 0])
    fit = fit_cox(m)
    b = 0.5
    fixed = type(fit)(**{**fit.__dict__, "coefficients": np.array([b])})
    base = breslow_baseline(fixed, m)
    e = math.exp(b)
    np.testing.assert_allclose(base.increments, [1 / (e + 1 + e), 1 / (1 + e)], rtol=1e-14)
    np.testing.assert_allclose(base.cumulative, np.cumsum(base.increments))


def test_baseline_recovers_exponential():
    rate = 0.08
    d = simulate(SimConfig(n=5000, seed=10))
    fit = fit_cox(encode_design(d, builtin_suite()[0]))
    interior = np.arange(3, 18)
    h = fit.baseline.cumulative_at(interior)
    np.testing.assert_allclose(h, rate * interior, rtol=0.10)
    assert np.all(np.diff(fit.baseline.cumulative) >= 0)
    s = fit.predict_survival(10, [0.0])
    assert s == pytest.approx(math.exp(-h[7]))


# proportional hazards test


def test_schoenfeld_residuals_sum_to_zero():
    d = simulate(SimConfig(n=1000, seed=2, true_coefficients=MODEL7_TRUTH))
    m = encode_design(d, builtin_suite()[6])
    fit = fit_cox(m)
    r = schoenfeld_residuals(fit, m)
    assert r.residuals.shape == (fit.n_events, m.p)
    # first-order condition: zero up to the convergence tolerance on the score
    bound = 1e-9 * (1 + abs(fit.log_pl_fit))
    np.testing.assert_allclose(r.residuals.sum(axis=0), 0.0, atol=bound)
    np.testing.assert_allclose(r.residuals.sum(axis=0), fit.score, atol=1e-9)
    scaled = schoenfeld_residuals(fit, m, scaled=True)
    np.testing.assert_allclose(scaled.residuals.mean(axis=0), fit.coefficients, atol=1e-6)


@pytest.mark.parametrize("transform", ["identity", "km", "rank", "log"])
def test_ph_result_consistency(transform):
    d = simulate(SimConfig(n=800, seed=4, true_coefficients=MODEL7_TRUTH))
    m = encode_design(d, builtin_suite()[6])
    res = ph_test(fit_cox(m), m, transform)
    assert len(res.per_covariate) == m.p
    assert res.global_test.df == m.p
    for row in res.per_covariate + (res.global_test,):
        assert row.chi_square >= 0
        assert row.p_value == chi_square_sf(row.chi_square, row.df)


def test_ph_needs_two_event_times():
    m = design([[1.0], [0.0], [1.0], [0.0]], [2, 2, 5, 5], [1, 1, 0, 0])
    with pytest.raises(TestUndefinedError):
        ph_test(fit_cox(m), m)


def test_fit_export_shape():
    d = simulate(SimConfig(n=400, seed=4))
    m = encode_design(d, CoxModelSpec("m", ("DSIR", "OW")))
    fit = fit_cox(m)
    out = fit_to_dict(fit, ph_test(fit, m))
    for key in ("coefficients", "standard_errors", "hazard_ratios", "p_values", "lr", "ph_test", "baseline",
                "iterations", "converged", "ties"):
        assert key in out
    assert set(out["baseline"]) == {"time", "increment", "cumulative"}
    assert set(out["lr"]) == {"stat", "df", "p"}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_ascent_property(seed):
    rng = np.random.default_rng(seed)
    m = random_design(rng, int(rng.integers(8, 40)), int(rng.integers(1, 4)), ties=bool(seed % 2))
    try:
        fit = fit_cox(m, max_iter=30)
    except IdentifiabilityError:
        return
    hist = np.array(fit.loglik_history)
    assert np.all(np.diff(hist) >= -1e-12 * (1 + np.abs(hist[1:])))
    assert fit.lr_stat >= -1e-12 * (1 + abs(fit.log_pl_fit))
