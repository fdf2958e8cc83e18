"""Observed disparity and its split into disparity reduction and residual disparity."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import DecompositionDataset
from .exceptions import DataError
from .logistic import CLIP_EPS, DesignSpec
from .weights import RmpwWeights, compute_rmpw, fit_group_propensities


@dataclass(frozen=True)
class DecompositionEstimate:
    mu1: float
    mu0: float
    mu_r0_hat: float
    tau: float
    reduction: float
    residual: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


def observed_disparity(ds: DecompositionDataset):
    """Group outcome means ``(mu1, mu0)`` and their difference ``tau``."""
    y1 = ds.y[ds.g == 1]
    y0 = ds.y[ds.g == 0]
    if y1.size == 0 or y0.size == 0:
        raise DataError("both groups must be non-empty")
    mu1, mu0 = float(np.mean(y1)), float(np.mean(y0))
    return mu1, mu0, mu1 - mu0


def weighted_mean(w, y) -> float:
    """Normalized (Hajek) weighted mean."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape != y.shape:
        raise DataError(f"weights {w.shape} and outcomes {y.shape} are not aligned")
    s = float(np.sum(w))
    if not s > 0:
        raise DataError("weight sum must be positive")
    return float(np.dot(w, y) / s)


def counterfactual_mean(ds: DecompositionDataset, w: RmpwWeights | np.ndarray) -> float:
    """Weighted mean of G=1 outcomes; estimates the mean under equalized exposure."""
    weights = w.w if isinstance(w, RmpwWeights) else np.asarray(w, dtype=float)
    return weighted_mean(weights, ds.y[ds.g == 1])


def decompose_from_means(mu1: float, mu0: float, mu_r0: float) -> DecompositionEstimate:
    return DecompositionEstimate(
        mu1=mu1,
        mu0=mu0,
        mu_r0_hat=mu_r0,
        tau=mu1 - mu0,
        reduction=mu1 - mu_r0,
        residual=mu_r0 - mu0,
    )


def decompose(ds: DecompositionDataset, w: RmpwWeights | np.ndarray) -> DecompositionEstimate:
    mu1, mu0, _ = observed_disparity(ds)
    return decompose_from_means(mu1, mu0, counterfactual_mean(ds, w))


class RMPWDecomposition(BaseEstimator):
    """Fit both group propensity models and decompose the observed disparity.

    Parameters
    ----------
    interactions : bool
        Add all pairwise covariate products to both propensity designs.
    allowability : bool
        Condition the G=0 exposure model on allowable covariates only.
    clip_eps : float
        Fitted probabilities are clipped to ``[clip_eps, 1 - clip_eps]``.

    Attributes
    ----------
    propensities_ : GroupPropensities
    weights_ : RmpwWeights
    estimate_ : DecompositionEstimate
    """

    def __init__(self, interactions=False, allowability=True, clip_eps=CLIP_EPS):
        self.interactions = interactions
        self.allowability = allowability
        self.clip_eps = clip_eps

    @property
    def design_spec(self) -> DesignSpec:
        return DesignSpec(include_two_way_interactions=self.interactions)

    def fit(self, ds: DecompositionDataset, y=None):
        self.propensities_ = fit_group_propensities(ds, self.design_spec, allowability=self.allowability)
        self.weights_ = compute_rmpw(ds, self.propensities_, eps=self.clip_eps)
        self.estimate_ = decompose(ds, self.weights_)
        self.n_features_in_ = len(ds.column_names)
        return self

    def predict(self, ds: DecompositionDataset | None = None) -> DecompositionEstimate:
        """The fitted decomposition; re-weights ``ds`` with the fitted models if given."""
        check_is_fitted(self, "estimate_")
        if ds is None:
            return self.estimate_
        return decompose(ds, compute_rmpw(ds, self.propensities_, eps=self.clip_eps))
