"""Group propensity models and ratio-of-mediator-probability (RMPW) weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import DecompositionDataset, require_cell_counts
from .exceptions import FitError
from .logistic import (
    CLIP_EPS,
    GRAD_TOL,
    MAX_ITER,
    DesignSpec,
    PropensityModel,
    build_design,
    fit_logistic,
    predict_prob,
)


@dataclass(frozen=True)
class GroupPropensities:
    """Exposure models fitted separately within each group.

    ``model_e1`` is fitted on G=1 rows with every covariate. ``model_e0`` is
    fitted on G=0 rows, with allowable covariates only when ``allowability``
    is on.
    """

    model_e1: PropensityModel
    model_e0: PropensityModel
    allowability: bool = True

    @property
    def spec_e1(self) -> DesignSpec:
        return self.model_e1.design

    @property
    def spec_e0(self) -> DesignSpec:
        return self.model_e0.design

    def predict(self, ds: DecompositionDataset, eps: float = CLIP_EPS):
        """Return ``(e1_hat, e0_hat, n_clipped)`` for every row of ``ds``."""
        X1, _ = build_design(ds, self.spec_e1)
        X0, _ = build_design(ds, self.spec_e0)
        e1, c1 = predict_prob(self.model_e1, X1, eps=eps, return_clipped=True)
        e0, c0 = predict_prob(self.model_e0, X0, eps=eps, return_clipped=True)
        return e1, e0, c1 + c0


def fit_group_propensities(
    ds: DecompositionDataset,
    spec: DesignSpec | None = None,
    allowability: bool = True,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
) -> GroupPropensities:
    spec = spec or DesignSpec()
    spec1 = spec.with_selection("all")
    spec0 = spec.with_selection("allowable" if allowability else "all")
    p1 = spec1.width(len(ds.column_names))
    p0 = spec0.width(len(ds.allowable_names) if allowability else len(ds.column_names))
    name0 = "e0a model" if allowability else "e0 model"
    require_cell_counts(ds, {1: p1}, label="e1 model")
    require_cell_counts(ds, {0: p0}, label=name0)

    models = {}
    for gv, sp, name in ((1, spec1, "e1 model"), (0, spec0, name0)):
        rows = ds.g == gv
        X, labels = build_design(ds, sp)
        m = fit_logistic(
            X[rows], ds.z[rows], tol=tol, max_iter=max_iter, design=sp,
            column_labels=labels, model=name,
        )
        if not m.converged:
            raise FitError(
                f"did not converge in {m.iterations} iterations "
                f"(gradient norm {m.final_gradient_norm:.3g})",
                model=name,
            )
        models[gv] = m
    return GroupPropensities(models[1], models[0], allowability)


@dataclass(frozen=True)
class RmpwWeights:
    """Weights for the G=1 rows of a dataset, in row order."""

    unit_ids: np.ndarray
    w: np.ndarray
    e1_hat: np.ndarray
    e0_hat: np.ndarray
    n_clipped: int = 0

    @property
    def max_weight(self) -> float:
        return float(np.max(self.w))

    @property
    def effective_sample_size(self) -> float:
        return float(np.sum(self.w) ** 2 / np.sum(self.w**2))

    def diagnostics(self) -> dict:
        return {
            "n_units": int(len(self.w)),
            "min_weight": float(np.min(self.w)),
            "max_weight": self.max_weight,
            "mean_weight": float(np.mean(self.w)),
            "effective_sample_size": self.effective_sample_size,
            "n_clipped_probabilities": int(self.n_clipped),
        }


def rmpw_from_propensities(z, e1, e0) -> np.ndarray:
    """``e0/e1`` for exposed units, ``(1-e0)/(1-e1)`` for unexposed units."""
    z = np.asarray(z, dtype=float)
    e1 = np.asarray(e1, dtype=float)
    e0 = np.asarray(e0, dtype=float)
    return np.where(z == 1, e0 / e1, (1 - e0) / (1 - e1))


def compute_rmpw(ds: DecompositionDataset, gp: GroupPropensities, eps: float = CLIP_EPS) -> RmpwWeights:
    treated = np.flatnonzero(ds.g == 1)
    X1 = build_design(ds, gp.spec_e1)[0][treated]
    X0 = build_design(ds, gp.spec_e0)[0][treated]
    e1, c1 = predict_prob(gp.model_e1, X1, eps=eps, return_clipped=True)
    e0, c0 = predict_prob(gp.model_e0, X0, eps=eps, return_clipped=True)
    w = rmpw_from_propensities(ds.z[treated], e1, e0)
    return RmpwWeights(unit_ids=treated, w=w, e1_hat=e1, e0_hat=e0, n_clipped=c1 + c0)


class RMPWWeighter(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` the group propensities, ``transform`` to weights."""

    def __init__(self, interactions=False, allowability=True, clip_eps=CLIP_EPS, tol=GRAD_TOL, max_iter=MAX_ITER):
        self.interactions = interactions
        self.allowability = allowability
        self.clip_eps = clip_eps
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, ds: DecompositionDataset, y=None):
        self.propensities_ = fit_group_propensities(
            ds,
            DesignSpec(include_two_way_interactions=self.interactions),
            allowability=self.allowability,
            tol=self.tol,
            max_iter=self.max_iter,
        )
        return self

    def transform(self, ds: DecompositionDataset) -> RmpwWeights:
        check_is_fitted(self, "propensities_")
        return compute_rmpw(ds, self.propensities_, eps=self.clip_eps)
