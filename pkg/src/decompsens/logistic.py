"""Binary logistic regression by Newton/IRLS, and propensity design matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConstantResponseError, DataError, SeparationError, SingularDesignError

GRAD_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 10
SEPARATION_BOUND = 15.0
CLIP_EPS = 1e-6


@dataclass(frozen=True)
class DesignSpec:
    """Which covariates enter a propensity design, and whether to add pairwise products.

    ``covariate_selection`` is ``"all"`` or ``"allowable"``. An intercept is
    always the first column.
    """

    covariate_selection: str = "all"
    include_two_way_interactions: bool = False

    def __post_init__(self):
        if self.covariate_selection not in ("all", "allowable"):
            raise ValueError("covariate_selection must be 'all' or 'allowable'")

    def with_selection(self, selection: str) -> "DesignSpec":
        return DesignSpec(selection, self.include_two_way_interactions)

    def width(self, p: int) -> int:
        return 1 + p + (p * (p - 1) // 2 if self.include_two_way_interactions else 0)


def design_from_matrix(x: np.ndarray, names, interactions: bool):
    """Intercept, main effects in column order, then products in lexicographic pair order."""
    x = np.asarray(x, dtype=float)
    names = list(names)
    if len(set(names)) != len(names):
        raise DataError(f"duplicate column labels {names}")
    cols = [np.ones(x.shape[0]), *x.T]
    labels = ["(intercept)", *names]
    if interactions:
        for i, j in combinations(range(x.shape[1]), 2):
            cols.append(x[:, i] * x[:, j])
            labels.append(f"{names[i]}:{names[j]}")
    return np.column_stack(cols), labels


def build_design(ds, spec: DesignSpec):
    """Design matrix for ``ds`` under ``spec``; returns ``(matrix, column_labels)``."""
    if spec.covariate_selection == "allowable":
        x, names = ds.x_allowable, ds.allowable_names
    else:
        x, names = ds.x, ds.column_names
    return design_from_matrix(x, names, spec.include_two_way_interactions)


def log_likelihood(beta, X, r) -> float:
    eta = X @ beta
    return float(np.sum(r * log_expit(eta) + (1 - r) * log_expit(-eta)))


@dataclass(frozen=True)
class PropensityModel:
    coefficients: np.ndarray
    design: DesignSpec = field(default_factory=DesignSpec)
    converged: bool = True
    iterations: int = 0
    final_gradient_norm: float = 0.0
    column_labels: tuple = ()
    loglik_path: tuple = ()

    @property
    def width(self) -> int:
        return len(self.coefficients)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.column_labels),
            "coefficients": [float(c) for c in self.coefficients],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_gradient_norm": float(self.final_gradient_norm),
        }


def fit_logistic(
    X,
    r,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
    design: DesignSpec | None = None,
    column_labels=(),
    model: str | None = None,
) -> PropensityModel:
    """Maximum-likelihood logistic fit by Newton steps with step-halving.

    Stops when the score's infinity norm is at most ``tol``. Raises
    :class:`SeparationError` when any coefficient exceeds 15 in magnitude.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    n, p = X.shape
    if r.shape != (n,):
        raise DataError(f"response length {r.shape} does not match design rows {n}")
    if n < p:
        raise SingularDesignError(f"n={n} rows is fewer than p={p} columns", model=model)
    if np.all(r == r[0]):
        raise ConstantResponseError("response is constant", model=model)

    beta = np.zeros(p)
    ll = log_likelihood(beta, X, r)
    path = [ll]
    grad_norm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(X @ beta)
        grad = X.T @ (r - mu)
        grad_norm = float(np.max(np.abs(grad)))
        info = X.T @ (X * (mu * (1 - mu))[:, None])
        try:
            step = linalg.cho_solve(linalg.cho_factor(info, check_finite=True), grad)
        except (linalg.LinAlgError, ValueError):
            raise SingularDesignError("weighted normal equations are singular", model=model) from None
        if grad_norm <= tol:
            # one last Newton step is nearly free and squares the remaining error
            polished = beta + step
            g_new = float(np.max(np.abs(X.T @ (r - expit(X @ polished)))))
            if g_new < grad_norm:
                beta, grad_norm = polished, g_new
                path.append(log_likelihood(beta, X, r))
            converged = True
            it -= 1
            break
        t = 1.0
        # near the optimum the likelihood change drops below rounding error
        slack = 1e-12 * max(1.0, abs(ll))
        for _ in range(MAX_HALVINGS + 1):
            candidate = beta + t * step
            ll_new = log_likelihood(candidate, X, r)
            if ll_new >= ll - slack:
                break
            t *= 0.5
        else:
            # no ascent along the Newton direction: numerical optimum reached
            break
        beta, ll = candidate, ll_new
        path.append(ll)
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"|coefficient| exceeded {SEPARATION_BOUND:g}; data appear separated",
                model=model,
            )
    else:
        mu = expit(X @ beta)
        grad_norm = float(np.max(np.abs(X.T @ (r - mu))))
        converged = grad_norm <= tol
    if np.max(np.abs(beta)) > SEPARATION_BOUND:
        raise SeparationError(
            f"|coefficient| exceeded {SEPARATION_BOUND:g}; data appear separated", model=model
        )
    return PropensityModel(
        coefficients=beta,
        design=design or DesignSpec(),
        converged=converged,
        iterations=it,
        final_gradient_norm=grad_norm,
        column_labels=tuple(column_labels),
        loglik_path=tuple(path),
    )


def predict_prob(m: PropensityModel, X, eps: float = CLIP_EPS, return_clipped: bool = False):
    """Fitted probabilities, clipped to ``[eps, 1 - eps]``.

    Accepts one design row or a matrix of rows. With ``return_clipped`` the
    number of clipped predictions is returned as well.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != m.width:
        raise DataError(f"design row width {X2.shape[1]} != model width {m.width}")
    raw = expit(X2 @ m.coefficients)
    p = np.clip(raw, eps, 1 - eps)
    n_clipped = int(np.sum(p != raw))
    out = float(p[0]) if single else p
    return (out, n_clipped) if return_clipped else out


class LogisticIRLS(ClassifierMixin, BaseEstimator):
    """Scikit-learn compatible wrapper around :func:`fit_logistic`.

    ``X`` is used as given when ``fit_intercept=False``; otherwise a column of
    ones is prepended.
    """

    def __init__(self, tol=GRAD_TOL, max_iter=MAX_ITER, fit_intercept=True, clip_eps=CLIP_EPS):
        self.tol = tol
        self.max_iter = max_iter
        self.fit_intercept = fit_intercept
        self.clip_eps = clip_eps

    def _design(self, X):
        X = check_array(X, ensure_min_features=0)
        return np.column_stack([np.ones(len(X)), X]) if self.fit_intercept else X

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ConstantResponseError("need exactly two classes")
        r = (y == self.classes_[1]).astype(float)
        self.model_ = fit_logistic(self._design(X), r, tol=self.tol, max_iter=self.max_iter)
        beta = self.model_.coefficients
        self.intercept_ = np.array([beta[0]]) if self.fit_intercept else np.zeros(1)
        self.coef_ = (beta[1:] if self.fit_intercept else beta)[None, :]
        self.n_iter_ = np.array([self.model_.iterations])
        self.converged_ = self.model_.converged
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = predict_prob(self.model_, self._design(X), eps=self.clip_eps)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]
