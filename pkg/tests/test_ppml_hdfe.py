import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firstdetect import FeSpec, fit_ppml, wald_test
from firstdetect.exceptions import ConvergenceError, InputError
from firstdetect.ppml_hdfe import WithinTransform, cluster_vcov, critical_value, poisson_deviance
from oracles import dense_ppml, random_ppml_instance


def test_single_dummy_is_log_ratio_of_means():
    y = np.array([1.0, 3.0, 2.0, 6.0, 4.0])
    x = np.array([0, 0, 1, 1, 1.0])
    fit = fit_ppml(y, x, FeSpec(()))
    # without fixed effects a constant is not included, so add one group
    fit = fit_ppml(y, x, FeSpec((np.zeros(5, dtype=int),)))
    assert fit.coef[0] == pytest.approx(math.log(4.0 / 2.0), abs=1e-10)


def test_two_way_saturated_cell_means():
    # 2x2 design with one interaction dummy: coefficient is the log DiD of cell totals
    g1 = np.array([0, 0, 1, 1])
    g2 = np.array([0, 1, 0, 1])
    y = np.array([2.0, 3.0, 5.0, 11.0])
    x = np.array([0, 0, 0, 1.0])
    fit = fit_ppml(y, x, FeSpec((g1, g2)))
    assert fit.coef[0] == pytest.approx(math.log(11 * 2 / (3 * 5)), abs=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_matches_dense_oracle(seed):
    y, X, groups, cl = random_ppml_instance(np.random.default_rng(seed))
    fit = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    b, s = dense_ppml(y, X, groups, cl)
    assert np.max(np.abs(fit.coef - b)) < 1e-6
    assert np.max(np.abs(fit.se / s - 1)) < 1e-6
    # all-zero authors carry no information and do not count as clusters
    live = np.unique(cl[np.isin(cl, np.unique(cl[y > 0]))])
    assert fit.converged and fit.n_clusters == live.size


@pytest.mark.parametrize("seed", range(3))
def test_blocked_products_match_dense_oracle(seed, monkeypatch):
    import firstdetect.ppml_hdfe as mod

    # tiny blocks so every row- and column-blocked path runs many times
    monkeypatch.setattr(mod, "_ROW_BLOCK", 7)
    monkeypatch.setattr(mod, "_COL_BLOCK", 2)
    rng = np.random.default_rng(100 + seed)
    y, X, groups, cl = random_ppml_instance(rng, max_regressors=6)
    X = np.hstack([X, rng.normal(size=(y.size, 4))])
    fit = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    b, s = dense_ppml(y, X, groups, cl)
    assert np.max(np.abs(fit.coef - b)) < 1e-6
    assert np.max(np.abs(fit.se / s - 1)) < 1e-6


def test_deviance_matches_saturated_identity():
    y = np.array([0.0, 1.0, 4.0])
    assert poisson_deviance(y, y) == 0.0
    assert poisson_deviance(y, np.array([1.0, 1.0, 1.0])) > 0


@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_row_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    y, X, groups, cl = random_ppml_instance(rng, max_authors=20, max_months=6, max_regressors=3)
    perm = rng.permutation(y.size)
    a = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    b = fit_ppml(y[perm], X[perm], FeSpec(tuple(g[perm] for g in groups)), cluster=cl[perm])
    assert np.allclose(a.coef, b.coef, atol=1e-8)
    assert np.allclose(a.se, b.se, rtol=1e-7)


def test_refit_is_idempotent(rng):
    y, X, groups, cl = random_ppml_instance(rng)
    a = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    b = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    assert np.array_equal(a.coef, b.coef) and np.array_equal(a.se, b.se)


def test_duplicated_data_same_coefficients(rng):
    y, X, groups, cl = random_ppml_instance(rng, max_authors=20)
    a = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    off = cl.max() + 1
    b = fit_ppml(np.r_[y, y], np.r_[X, X], FeSpec(tuple(np.r_[g, g] for g in groups)), cluster=np.r_[cl, cl + off])
    assert np.allclose(a.coef, b.coef, atol=1e-8)
    # twice the clusters, identical scores: SE shrinks by sqrt(2) up to the G/(G-1) factor
    G = np.unique(cl).size
    ratio = math.sqrt(0.5 * (2 * G / (2 * G - 1)) / (G / (G - 1)))
    assert np.allclose(b.se / a.se, ratio, rtol=1e-6)


def test_zero_sum_levels_are_dropped(rng):
    y, X, groups, cl = random_ppml_instance(rng, max_regressors=2)
    y = y.copy()
    y[groups[0] == 0] = 0.0
    fit = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    assert fit.n_dropped == np.sum(groups[0] == 0)
    b, _ = dense_ppml(y, X, groups, cl)
    assert np.allclose(fit.coef, b, atol=1e-6)


def test_separated_regressor_is_absent():
    rng = np.random.default_rng(1)
    y, X, groups, cl = random_ppml_instance(rng, max_regressors=1)
    sep = np.zeros(y.size)
    sep[:3] = 1.0
    y = y.copy()
    y[:3] = 0.0
    with pytest.warns(UserWarning, match="separated"):
        fit = fit_ppml(y, np.c_[X, sep], FeSpec(tuple(groups)), cluster=cl, labels=["x", "sep"])
    assert np.isnan(fit.coef[1]) and np.isfinite(fit.coef[0])


def test_collinear_regressor_is_absent(rng):
    y, X, groups, cl = random_ppml_instance(rng, max_regressors=1)
    dummy = (groups[1] == 1).astype(float)
    with pytest.warns(UserWarning, match="collinear"):
        fit = fit_ppml(y, np.c_[X[:, :1], dummy], FeSpec(tuple(groups)), cluster=cl)
    assert np.isnan(fit.coef[1]) and np.isnan(fit.se[1])
    assert np.isfinite(fit.coef[0])


def test_input_validation():
    with pytest.raises(InputError):
        fit_ppml(np.array([1.0, -1.0]), np.ones((2, 1)), FeSpec(()))
    with pytest.raises(InputError):
        fit_ppml(np.array([1.0, 2.0]), np.ones((3, 1)), FeSpec(()))
    with pytest.raises(InputError):
        cluster_vcov(np.ones((3, 1)), np.ones(3), np.ones(3), np.zeros(3))


def test_convergence_failure_carries_trace(rng):
    y, X, groups, cl = random_ppml_instance(rng)
    with pytest.raises(ConvergenceError) as exc:
        fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl, max_iter=1, tol=1e-300)
    assert len(exc.value.trace) >= 1


def test_within_transform_matches_projection(rng):
    n = 60
    g1, g2 = rng.integers(0, 5, n), rng.integers(0, 4, n)
    w = rng.uniform(0.5, 2.0, n)
    M = rng.normal(size=(n, 2))
    wt = WithinTransform([g1, g2], n)
    wt.set_weights(w)
    got = wt.demean(M, tol=1e-14)
    D = np.hstack([np.eye(5)[g1], np.eye(4)[g2]])
    sw = np.sqrt(w)[:, None]
    coef = np.linalg.lstsq(D * sw, M * sw, rcond=None)[0]
    assert np.allclose(got, M - D @ coef, atol=1e-9)


def test_wald_test_sides(rng):
    y, X, groups, cl = random_ppml_instance(rng, max_regressors=1)
    X = X + 0.0
    fit = fit_ppml(y, X, FeSpec(tuple(groups)), cluster=cl)
    j = 0
    fit.coef[j], fit.se[j] = 0.5, 0.2
    assert wald_test(fit, "x0", alternative="greater").reject_positive
    assert not wald_test(fit, "x0", alternative="less").reject
    assert wald_test(fit, "x0").t == pytest.approx(2.5)
    assert critical_value(0.05, "greater") == pytest.approx(1.6448536, abs=1e-6)
    assert critical_value(0.05) == pytest.approx(1.9599640, abs=1e-6)
    with pytest.raises(KeyError):
        wald_test(fit, 3)
