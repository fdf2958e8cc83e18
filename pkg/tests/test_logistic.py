import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from decompsens.dataset import from_arrays
from decompsens.exceptions import (
    ConstantResponseError,
    DataError,
    SeparationError,
    SingularDesignError,
)
from decompsens.logistic import (
    CLIP_EPS,
    DesignSpec,
    LogisticIRLS,
    PropensityModel,
    build_design,
    fit_logistic,
    log_likelihood,
    predict_prob,
)


def _ds(p):
    rng = np.random.default_rng(0)
    n = 40
    g = np.tile([1, 1, 0, 0], n // 4)
    z = np.tile([1, 0, 1, 0], n // 4)
    return from_arrays(g, z, rng.standard_normal(n), rng.standard_normal((n, p)))


@pytest.mark.parametrize("p, width", [(2, 4), (3, 7), (0, 1)])
def test_design_width_with_interactions(p, width):
    X, labels = build_design(_ds(p), DesignSpec(include_two_way_interactions=True))
    assert X.shape[1] == width == len(labels)
    assert labels[0] == "(intercept)" or labels[0].lower().startswith("(")


def test_design_column_order():
    ds = _ds(3)
    X, labels = build_design(ds, DesignSpec(include_two_way_interactions=True))
    assert list(labels[1:]) == ["a0", "a1", "a2", "a0:a1", "a0:a2", "a1:a2"]
    np.testing.assert_array_equal(X[:, 0], 1)
    np.testing.assert_array_equal(X[:, 4], ds.x[:, 0] * ds.x[:, 1])


def test_design_allowable_selection():
    ds = from_arrays([1, 1, 0, 0], [1, 0, 1, 0], [0] * 4, [[1], [2], [3], [4]], [[5], [6], [7], [8]])
    X, labels = build_design(ds, DesignSpec(covariate_selection="allowable"))
    assert list(labels[1:]) == ["a0"]
    X, labels = build_design(ds, DesignSpec(covariate_selection="all"))
    assert list(labels[1:]) == ["a0", "n0"]


def test_intercept_only_half():
    m = fit_logistic(np.ones((4, 1)), np.array([1, 0, 1, 0.0]))
    assert abs(m.coefficients[0]) < 1e-10
    assert abs(predict_prob(m, np.ones(1)) - 0.5) < 1e-10


def test_intercept_only_three_of_four():
    m = fit_logistic(np.ones((4, 1)), np.array([1, 1, 1, 0.0]))
    assert abs(m.coefficients[0] - math.log(3)) < 1e-10
    assert m.converged and m.final_gradient_norm <= 1e-8


@given(st.integers(1, 49), st.integers(50, 50))
def test_intercept_only_closed_form(k, n):
    r = np.zeros(n)
    r[:k] = 1
    m = fit_logistic(np.ones((n, 1)), r)
    assert abs(m.coefficients[0] - math.log(k / (n - k))) < 1e-10


def test_separation_detected():
    x = np.linspace(-2, 2, 20)
    X = np.column_stack([np.ones(20), x])
    with pytest.raises(SeparationError, match="separated"):
        fit_logistic(X, (x > 0).astype(float), model="e1 model")


def test_constant_response_and_singular():
    with pytest.raises(ConstantResponseError):
        fit_logistic(np.ones((5, 1)), np.ones(5))
    X = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(SingularDesignError):
        fit_logistic(X, np.array([0, 1, 0, 1, 1, 0.0]))
    with pytest.raises(SingularDesignError):
        fit_logistic(np.ones((1, 2)), np.array([1.0]))


def test_predict_examples():
    m = PropensityModel(np.zeros(3), DesignSpec(), True, 0, 0.0)
    assert predict_prob(m, np.array([1.0, 4.0, -2.0])) == 0.5
    m = PropensityModel(np.array([0.0, math.log(3)]), DesignSpec(), True, 0, 0.0)
    assert abs(predict_prob(m, np.array([1.0, 1.0])) - 0.75) < 1e-15
    m = PropensityModel(np.array([50.0]), DesignSpec(), True, 0, 0.0)
    assert predict_prob(m, np.array([1.0])) == 1 - CLIP_EPS
    p, clipped = predict_prob(m, np.ones((3, 1)), return_clipped=True)
    assert clipped == 3 and np.all(p == 1 - CLIP_EPS)
    with pytest.raises(DataError):
        predict_prob(m, np.ones(2))


def _oracle(X, r):
    res = minimize(
        lambda b: -log_likelihood(b, X, r),
        np.zeros(X.shape[1]),
        method="Powell",
        options={"xtol": 1e-12, "ftol": 1e-15, "maxiter": 200000, "maxfev": 200000},
    )
    return res.x


def _instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 51))
    p = int(rng.integers(1, 4))
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = rng.normal(0, 0.7, p)
    r = (rng.random(n) < 1 / (1 + np.exp(-X @ beta))).astype(float)
    return X, r


@pytest.mark.parametrize("seed", range(25))
def test_matches_derivative_free_oracle(seed):
    X, r = _instance(seed)
    try:
        m = fit_logistic(X, r)
    except (SeparationError, ConstantResponseError):
        pytest.skip("degenerate draw")
    np.testing.assert_allclose(m.coefficients, _oracle(X, r), atol=1e-5)


@given(st.integers(0, 10_000))
def test_score_equation_and_monotone_path(seed):
    X, r = _instance(seed)
    try:
        m = fit_logistic(X, r)
    except (SeparationError, ConstantResponseError):
        return
    mean_fit = np.mean(1 / (1 + np.exp(-X @ m.coefficients)))
    assert abs(mean_fit - r.mean()) < 1e-8
    assert all(b >= a - 1e-12 * max(1, abs(a)) for a, b in zip(m.loglik_path, m.loglik_path[1:]))
    assert m.converged and m.final_gradient_norm <= 1e-8


def test_sklearn_wrapper():
    X, r = _instance(3)
    clf = LogisticIRLS().fit(X[:, 1:], r)
    m = fit_logistic(X, r)
    np.testing.assert_allclose(np.r_[clf.intercept_, clf.coef_[0]], m.coefficients)
    proba = clf.predict_proba(X[:, 1:])
    assert proba.shape == (len(r), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1)
    assert set(clf.predict(X[:, 1:])) <= {0.0, 1.0}
    assert clf.get_params()["tol"] == 1e-8
