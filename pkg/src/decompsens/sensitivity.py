"""Marginal sensitivity model bounds for the weighted counterfactual mean.

Under the model each weight may be rescaled by a factor in ``[1/lam, lam]``.
The extreme values of the rescaled weighted mean are a linear-fractional
program over a box, solved exactly here by scanning threshold assignments on
outcomes sorted by value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import DecompositionDataset
from .decomposition import observed_disparity
from .exceptions import DataError
from .weights import RmpwWeights

BRUTEFORCE_MAX_N = 20
ESTIMANDS = ("reduction", "residual")


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam >= 1 or not math.isfinite(lam):
        raise ValueError(f"lambda must be a finite number >= 1, got {lam}")
    return lam


def _prep(w, y, lam):
    lam = _check_lambda(lam)
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape != y.shape or w.ndim != 1:
        raise DataError(f"weights {w.shape} and outcomes {y.shape} are not aligned")
    if w.size == 0:
        raise DataError("no units to bound")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be positive and finite")
    return w, y, lam


def _cut_values(w, y, lam):
    """Objective at every threshold vertex, outcomes sorted ascending.

    Cut ``k`` gives the ``k`` smallest outcomes one factor and the rest the
    other; returns ``(min_candidates, max_candidates)``. Both share the
    all-``1/lam`` vertex, so ``min <= max`` holds exactly in floating point.
    """
    order = np.argsort(y, kind="stable")
    ws, ys = w[order], y[order]
    cw = np.concatenate([[0.0], np.cumsum(ws)])
    cwy = np.concatenate([[0.0], np.cumsum(ws * ys)])
    lo = 1.0 / lam
    tail_w, tail_wy = cw[-1] - cw, cwy[-1] - cwy
    low = (lam * cwy + lo * tail_wy) / (lam * cw + lo * tail_w)
    high = (lo * cwy + lam * tail_wy) / (lo * cw + lam * tail_w)
    return low, high, ys[0], ys[-1]


def extrema(w, y, lam: float, direction: str = "max") -> float:
    """Exact min or max of ``sum(y r w) / sum(r w)`` over ``r`` in ``[1/lam, lam]^n``.

    The optimum sits at a vertex where the ``k`` largest (for max) or smallest
    (for min) outcomes get ``r = lam`` and the rest ``1/lam``; all ``n + 1``
    cuts are evaluated with cumulative sums.
    """
    w, y, lam = _prep(w, y, lam)
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    if lam == 1.0:
        return float(np.dot(w, y) / np.sum(w))
    low, high, ymin, ymax = _cut_values(w, y, lam)
    best = float(np.max(high) if direction == "max" else np.min(low))
    # rounding can drift past the outcome range by an ulp
    return float(np.clip(best, ymin, ymax))


def extrema_bruteforce(w, y, lam: float, direction: str = "max") -> float:
    """Exhaustive search over all ``2**n`` vertex assignments (test oracle)."""
    w, y, lam = _prep(w, y, lam)
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    if w.size > BRUTEFORCE_MAX_N:
        raise ValueError(f"n={w.size} too large for brute force (max {BRUTEFORCE_MAX_N})")
    r = np.array(list(product((1.0 / lam, lam), repeat=w.size)))
    rw = r * w
    vals = (rw @ y) / rw.sum(axis=1)
    return float(np.max(vals) if direction == "max" else np.min(vals))


def extrema_pair(w, y, lam: float) -> tuple[float, float]:
    """``(min, max)`` from a single sort; ``min <= max`` exactly."""
    w, y, lam = _prep(w, y, lam)
    if lam == 1.0:
        point = float(np.dot(w, y) / np.sum(w))
        return point, point
    low, high, ymin, ymax = _cut_values(w, y, lam)
    return float(np.clip(np.min(low), ymin, ymax)), float(np.clip(np.max(high), ymin, ymax))


@dataclass(frozen=True)
class SensitivityBounds:
    lam: float
    mu_lower: float
    mu_upper: float
    mu1: float
    mu0: float

    @property
    def reduction_bounds(self) -> tuple[float, float]:
        return (self.mu1 - self.mu_upper, self.mu1 - self.mu_lower)

    @property
    def residual_bounds(self) -> tuple[float, float]:
        return (self.mu_lower - self.mu0, self.mu_upper - self.mu0)

    def estimand_bounds(self, estimand: str) -> tuple[float, float]:
        if estimand == "reduction":
            return self.reduction_bounds
        if estimand == "residual":
            return self.residual_bounds
        raise ValueError(f"estimand must be one of {ESTIMANDS}")

    @property
    def width(self) -> float:
        return self.mu_upper - self.mu_lower

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mu_lower": self.mu_lower,
            "mu_upper": self.mu_upper,
            "reduction_lo": self.reduction_bounds[0],
            "reduction_hi": self.reduction_bounds[1],
            "residual_lo": self.residual_bounds[0],
            "residual_hi": self.residual_bounds[1],
        }


GRID_CSV_COLUMNS = (
    "lambda", "mu_lower", "mu_upper", "reduction_lo", "reduction_hi", "residual_lo", "residual_hi",
)


def _treated_arrays(ds: DecompositionDataset, w):
    weights = w.w if isinstance(w, RmpwWeights) else np.asarray(w, dtype=float)
    return weights, ds.y[ds.g == 1]


def bounds_at(ds: DecompositionDataset, w, lam: float) -> SensitivityBounds:
    mu1, mu0, _ = observed_disparity(ds)
    weights, y1 = _treated_arrays(ds, w)
    lo, hi = extrema_pair(weights, y1, lam)
    return SensitivityBounds(float(lam), lo, hi, mu1, mu0)


def bounds_over_lambda(ds: DecompositionDataset, w, lambdas: Sequence[float]) -> list[SensitivityBounds]:
    lambdas = [_check_lambda(v) for v in lambdas]
    if any(b < a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda grid must be ascending")
    return [bounds_at(ds, w, lam) for lam in lambdas]


@dataclass(frozen=True)
class CriticalLambda:
    """Smallest sensitivity parameter at which an estimand's bound reaches a threshold.

    ``value`` is ``None`` when the threshold is not reached by ``bracket[1]``.
    """

    target: str
    estimand: str
    threshold: float
    value: float | None
    bracket: tuple
    tolerance: float

    @property
    def found(self) -> bool:
        return self.value is not None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "estimand": self.estimand,
            "threshold": self.threshold,
            "value": self.value,
            "found": self.found,
            "bracket": list(self.bracket),
            "tolerance": self.tolerance,
        }


def crossing_predicate(point: float, threshold: float) -> Callable[[tuple], bool]:
    """Return a test ``reached(lo, hi)`` for an interval that moves away from ``point``.

    If the point estimate sits above the threshold, the threshold is reached
    once the lower end falls to it; if below, once the upper end rises to it.
    """
    if point > threshold:
        return lambda lo, hi: lo <= threshold
    if point < threshold:
        return lambda lo, hi: hi >= threshold
    return lambda lo, hi: True


def bisect_lambda(
    interval_at: Callable[[float], tuple],
    reached: Callable[[float, float], bool],
    bracket=(1.0, 20.0),
    tol: float = 1e-3,
) -> float | None:
    """Smallest ``lam`` in ``bracket`` (to within ``tol``) with ``reached(*interval_at(lam))``.

    Assumes the interval is nested (widening) in ``lam``.
    """
    a, b = float(bracket[0]), float(bracket[1])
    if a != 1.0 or not b > a:
        raise ValueError(f"bracket must be (1, lambda_max) with lambda_max > 1, got {bracket}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if reached(*interval_at(a)):
        return a
    if not reached(*interval_at(b)):
        return None
    while b - a > tol:
        mid = 0.5 * (a + b)
        if reached(*interval_at(mid)):
            b = mid
        else:
            a = mid
    return b


def critical_lambda(
    ds: DecompositionDataset,
    w,
    estimand: str = "reduction",
    threshold: float = 0.0,
    bracket=(1.0, 20.0),
    tol: float = 1e-3,
) -> CriticalLambda:
    """Critical parameter at which the point-estimate bound of ``estimand`` reaches ``threshold``."""
    if estimand not in ESTIMANDS:
        raise ValueError(f"estimand must be one of {ESTIMANDS}")
    mu1, mu0, _ = observed_disparity(ds)
    weights, y1 = _treated_arrays(ds, w)
    point = bounds_at(ds, weights, 1.0).estimand_bounds(estimand)[0]

    def interval_at(lam):
        lo, hi = extrema_pair(weights, y1, lam)
        return SensitivityBounds(lam, lo, hi, mu1, mu0).estimand_bounds(estimand)

    value = bisect_lambda(interval_at, crossing_predicate(point, threshold), bracket, tol)
    return CriticalLambda("point_estimate", estimand, float(threshold), value, tuple(bracket), tol)


def equivalence_threshold(tau: float, eta: float) -> float:
    """Residual-disparity value at which a ``100 * eta`` percent reduction is attained."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if tau == 0:
        raise DataError("observed disparity is zero; equivalence test undefined")
    return (1.0 - eta) * tau


def equivalence_critical_lambda(
    ds: DecompositionDataset, w, eta: float = 1.0, bracket=(1.0, 20.0), tol: float = 1e-3
) -> CriticalLambda:
    """Critical parameter at which the bounds admit a ``100 * eta`` percent disparity reduction.

    A counterfactual mean ``m`` gives reduction share ``(mu1 - m) / tau``; that
    share equals ``eta`` exactly when the residual disparity equals
    ``(1 - eta) * tau``, so this is a residual-disparity crossing.
    """
    _, _, tau = observed_disparity(ds)
    thr = equivalence_threshold(tau, eta)
    return critical_lambda(ds, w, "residual", thr, bracket, tol)


def odds(p):
    return p / (1 - p)


def odds_ratio(p1, p2):
    """``OR{p1, p2} = [p1 / (1 - p1)] / [p2 / (1 - p2)]``."""
    return odds(p1) / odds(p2)


def shifted_ipw_propensity(e, h):
    """Propensity whose inverse-weight excess is scaled by ``exp(h)``: ``1 / (1 + (1/e - 1) e^h)``."""
    e = np.asarray(e, dtype=float)
    if np.any((e <= 0) | (e >= 1)):
        raise ValueError("propensity must lie strictly between 0 and 1")
    out = 1.0 / (1.0 + (1.0 / e - 1.0) * np.exp(h))
    return float(out) if out.ndim == 0 else out


class MSMSensitivity(BaseEstimator):
    """Bounds over a grid of sensitivity parameters plus critical values.

    ``fit(ds, weights)`` takes the fitted RMPW weights for ``ds``.
    """

    def __init__(self, lambdas=(1.0, 1.05, 1.1, 1.25, 1.5, 2.0), lambda_max=20.0, tol=1e-3, threshold=0.0):
        self.lambdas = lambdas
        self.lambda_max = lambda_max
        self.tol = tol
        self.threshold = threshold

    def fit(self, ds: DecompositionDataset, weights):
        self.bounds_ = bounds_over_lambda(ds, weights, sorted(self.lambdas))
        self.critical_ = {
            est: critical_lambda(ds, weights, est, self.threshold, (1.0, self.lambda_max), self.tol)
            for est in ESTIMANDS
        }
        return self

    def transform(self, lambdas) -> list[SensitivityBounds]:
        check_is_fitted(self, "bounds_")
        by_lam = {b.lam: b for b in self.bounds_}
        return [by_lam[float(v)] for v in lambdas]
