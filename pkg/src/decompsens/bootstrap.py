"""Percentile bootstrap for the sensitivity bounds and their critical parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import DecompositionDataset
from .decomposition import observed_disparity
from .exceptions import BootstrapError, DataError, FitError
from .logistic import CLIP_EPS, DesignSpec
from .sensitivity import (
    ESTIMANDS,
    CriticalLambda,
    bisect_lambda,
    crossing_predicate,
    equivalence_threshold,
    extrema_pair,
)
from .weights import compute_rmpw, fit_group_propensities

MAX_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    alpha: float = 0.05
    seed: int = 0
    stratify: bool = False
    quantile_rule: str = "linear"

    def __post_init__(self):
        if int(self.B) < 2:
            raise ValueError("B must be at least 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    """Independent stream for replicate ``r``: Philox keyed by ``seed``, counter offset by ``r``."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(r)]))


def replicate_indices(ds: DecompositionDataset, seed: int, r: int, stratify: bool = False) -> np.ndarray:
    """Row indices for bootstrap replicate ``r``; a pure function of ``(seed, r, data)``."""
    rng = replicate_rng(seed, r)
    if not stratify:
        return rng.integers(0, ds.n, size=ds.n)
    parts = []
    for gv in (0, 1):
        rows = np.flatnonzero(ds.g == gv)
        parts.append(rows[rng.integers(0, rows.size, size=rows.size)])
    return np.sort(np.concatenate(parts), kind="stable")


@dataclass
class Replicate:
    w: np.ndarray
    y1: np.ndarray
    mu1: float
    mu0: float


@dataclass
class ReplicateSet:
    """Refitted weights for every bootstrap replicate; reused across sensitivity parameters."""

    replicates: list
    failed: list = field(default_factory=list)
    cfg: BootstrapConfig = field(default_factory=BootstrapConfig)

    @property
    def n_failed(self) -> int:
        return len(self.failed)

    def extrema(self, lam: float):
        lows = np.empty(len(self.replicates))
        highs = np.empty(len(self.replicates))
        for i, rep in enumerate(self.replicates):
            lows[i], highs[i] = extrema_pair(rep.w, rep.y1, lam)
        return lows, highs

    def result(self, lam: float) -> "BootstrapResult":
        lows, highs = self.extrema(lam)
        return BootstrapResult(
            lam=float(lam),
            replicate_lowers=lows,
            replicate_uppers=highs,
            replicate_mu1=np.array([r.mu1 for r in self.replicates]),
            replicate_mu0=np.array([r.mu0 for r in self.replicates]),
            alpha=self.cfg.alpha,
            failed_replicates=self.n_failed,
            quantile_rule=self.cfg.quantile_rule,
        )


def draw_replicates(
    ds: DecompositionDataset,
    spec: DesignSpec | None = None,
    cfg: BootstrapConfig | None = None,
    allowability: bool = True,
    clip_eps: float = CLIP_EPS,
) -> ReplicateSet:
    """Resample rows, refit both propensity models and recompute weights, ``cfg.B`` times.

    Replicates whose refit fails are dropped and counted; more than 10% failures
    raise :class:`BootstrapError`.
    """
    cfg = cfg or BootstrapConfig()
    spec = spec or DesignSpec()
    reps, failed = [], []
    for r in range(cfg.B):
        idx = replicate_indices(ds, cfg.seed, r, cfg.stratify)
        try:
            sample = ds.take(idx)
            gp = fit_group_propensities(sample, spec, allowability=allowability)
            w = compute_rmpw(sample, gp, eps=clip_eps)
        except (DataError, FitError) as exc:
            failed.append((r, str(exc)))
            continue
        mu1, mu0, _ = observed_disparity(sample)
        reps.append(Replicate(w.w, sample.y[sample.g == 1], mu1, mu0))
    if len(failed) > MAX_FAILURE_RATE * cfg.B:
        shown = "; ".join(f"replicate {r}: {msg}" for r, msg in failed[:5])
        raise BootstrapError(
            f"{len(failed)} of {cfg.B} bootstrap replicates failed "
            f"(limit {MAX_FAILURE_RATE:.0%}); first failures: {shown}"
        )
    return ReplicateSet(reps, failed, cfg)


def _quantile(a, q, rule):
    return float(np.quantile(a, q, method=rule))


@dataclass(frozen=True)
class BootstrapResult:
    """Per-replicate extrema of the counterfactual mean at one sensitivity parameter."""

    lam: float
    replicate_lowers: np.ndarray
    replicate_uppers: np.ndarray
    replicate_mu1: np.ndarray
    replicate_mu0: np.ndarray
    alpha: float = 0.05
    failed_replicates: int = 0
    quantile_rule: str = "linear"

    @property
    def L(self) -> float:
        return _quantile(self.replicate_lowers, self.alpha / 2, self.quantile_rule)

    @property
    def U(self) -> float:
        return _quantile(self.replicate_uppers, 1 - self.alpha / 2, self.quantile_rule)

    def _estimand_replicates(self, estimand: str):
        if estimand == "mu_r0":
            return self.replicate_lowers, self.replicate_uppers
        if estimand == "reduction":
            return self.replicate_mu1 - self.replicate_uppers, self.replicate_mu1 - self.replicate_lowers
        if estimand == "residual":
            return self.replicate_lowers - self.replicate_mu0, self.replicate_uppers - self.replicate_mu0
        if estimand == "tau":
            t = self.replicate_mu1 - self.replicate_mu0
            return t, t
        raise ValueError(f"unknown estimand {estimand!r}")

    def interval(self, estimand: str = "mu_r0") -> tuple[float, float]:
        """Conservative percentile interval: low quantile of minima, high quantile of maxima."""
        lows, highs = self._estimand_replicates(estimand)
        return (
            _quantile(lows, self.alpha / 2, self.quantile_rule),
            _quantile(highs, 1 - self.alpha / 2, self.quantile_rule),
        )

    def sd(self, estimand: str = "mu_r0") -> float:
        """Bootstrap standard deviation; only meaningful at lambda = 1."""
        lows, _ = self._estimand_replicates(estimand)
        return float(np.std(lows, ddof=1))

    def replicate_rows(self):
        yield ("replicate", "mu_lower", "mu_upper", "mu1", "mu0")
        for i in range(len(self.replicate_lowers)):
            yield (
                i,
                float(self.replicate_lowers[i]),
                float(self.replicate_uppers[i]),
                float(self.replicate_mu1[i]),
                float(self.replicate_mu0[i]),
            )


def percentile_bootstrap(
    ds: DecompositionDataset,
    spec: DesignSpec | None = None,
    cfg: BootstrapConfig | None = None,
    lam: float = 1.0,
    allowability: bool = True,
) -> BootstrapResult:
    return draw_replicates(ds, spec, cfg, allowability).result(lam)


def _point_estimate(ds, estimand, full_weights_point):
    mu1, mu0, _ = observed_disparity(ds)
    if estimand == "reduction":
        return mu1 - full_weights_point
    return full_weights_point - mu0


def critical_lambda_ci(
    ds: DecompositionDataset,
    spec: DesignSpec | None = None,
    cfg: BootstrapConfig | None = None,
    estimand: str = "reduction",
    threshold: float = 0.0,
    bracket=(1.0, 20.0),
    tol: float = 1e-3,
    allowability: bool = True,
    replicates: ReplicateSet | None = None,
    point: float | None = None,
) -> CriticalLambda:
    """Critical parameter at which the bootstrap interval of ``estimand`` reaches ``threshold``.

    Every parameter value reuses the same resampled rows and refitted weights,
    so interval endpoints move monotonically and bisection is well posed.
    ``point`` is the full-sample estimate that fixes the crossing direction;
    it is computed when omitted.
    """
    if estimand not in ESTIMANDS:
        raise ValueError(f"estimand must be one of {ESTIMANDS}")
    spec = spec or DesignSpec()
    reps = replicates or draw_replicates(ds, spec, cfg, allowability)
    if point is None:
        gp = fit_group_propensities(ds, spec, allowability=allowability)
        w = compute_rmpw(ds, gp)
        y1 = ds.y[ds.g == 1]
        point = _point_estimate(ds, estimand, float(np.dot(w.w, y1) / np.sum(w.w)))

    def interval_at(lam):
        return reps.result(lam).interval(estimand)

    value = bisect_lambda(interval_at, crossing_predicate(point, threshold), bracket, tol)
    return CriticalLambda("bootstrap_ci", estimand, float(threshold), value, tuple(bracket), tol)


def equivalence_critical_lambda_ci(
    ds, eta, spec=None, cfg=None, bracket=(1.0, 20.0), tol=1e-3, allowability=True,
    replicates=None, point=None,
) -> CriticalLambda:
    _, _, tau = observed_disparity(ds)
    return critical_lambda_ci(
        ds, spec, cfg, "residual", equivalence_threshold(tau, eta), bracket, tol,
        allowability, replicates, point,
    )


class PercentileBootstrap(BaseEstimator):
    """Estimator wrapper: ``fit`` draws and refits replicates, ``transform`` bounds at given parameters."""

    def __init__(self, B=1000, alpha=0.05, seed=0, stratify=False, interactions=False, allowability=True):
        self.B = B
        self.alpha = alpha
        self.seed = seed
        self.stratify = stratify
        self.interactions = interactions
        self.allowability = allowability

    def fit(self, ds: DecompositionDataset, y=None):
        cfg = BootstrapConfig(self.B, self.alpha, self.seed, self.stratify)
        self.replicates_ = draw_replicates(
            ds, DesignSpec(include_two_way_interactions=self.interactions), cfg, self.allowability
        )
        return self

    def transform(self, lambdas) -> list[BootstrapResult]:
        check_is_fitted(self, "replicates_")
        return [self.replicates_.result(lam) for lam in np.atleast_1d(lambdas)]
