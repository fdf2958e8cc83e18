"""Two-parameter reading of the sensitivity bounds: confounder impact times imbalance.

A hypothetical confounder's bias on the weighted counterfactual mean is the
product of its outcome coefficient (impact, ``beta_u``) and a propensity-scaled
imbalance (``delta_u``). Observed covariates, each treated in turn as if it were
the missing confounder, calibrate which (impact, imbalance) pairs are plausible.

Two imbalances are reported per covariate. The post-weighting value is the
plug-in of the bias formula with fitted propensities. The pre-weighting value,
the gap between the G=1 mean and the exposed G=1 mean of the standardized
covariate, is our reading of "imbalance before weighting"; it is a descriptive
benchmark, not part of the bias identity. ``beta_u`` regresses ``Y`` as given,
so a binary outcome is treated on the linear-probability scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import DecompositionDataset
from .exceptions import DataError, SingularDesignError
from .logistic import DesignSpec
from .sensitivity import SensitivityBounds
from .weights import GroupPropensities, compute_rmpw, fit_group_propensities

CALIBRATION_CSV_COLUMNS = ("covariate", "beta_u", "delta_pre", "delta_post", "bias_pre", "bias_post")


@dataclass(frozen=True)
class CalibrationPoint:
    covariate: str
    beta_u: float
    delta_pre: float
    delta_post: float

    @property
    def bias_pre(self) -> float:
        return abs(self.beta_u * self.delta_pre)

    @property
    def bias_post(self) -> float:
        return abs(self.beta_u * self.delta_post)

    def row(self) -> tuple:
        return (self.covariate, self.beta_u, self.delta_pre, self.delta_post, self.bias_pre, self.bias_post)


def _treated_design(ds: DecompositionDataset, keep=None):
    rows = ds.g == 1
    names = list(ds.column_names)
    x = ds.x[rows]
    if keep is not None:
        idx = [names.index(c) for c in keep]
        x, names = x[:, idx], list(keep)
    X = np.column_stack([np.ones(int(rows.sum())), ds.z[rows], x])
    return X, ds.y[rows], names


def outcome_coefficients(ds: DecompositionDataset, covariates=None) -> dict:
    """OLS of Y on (1, Z, covariates) within G=1; returns ``{covariate: coefficient}``."""
    X, y, names = _treated_design(ds, covariates)
    n, p = X.shape
    if n <= p + 2:
        raise SingularDesignError(f"G=1 subsample has n={n}, need more than p+2={p + 2}")
    coef, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < p or sv[-1] <= sv[0] * 1e-10:
        raise SingularDesignError("outcome regression design is rank deficient")
    return dict(zip(names, (float(c) for c in coef[2:])))


def estimate_beta_u(ds: DecompositionDataset, covariate: str) -> float:
    """Coefficient on ``covariate`` in the within-G=1 regression of Y on Z and all covariates."""
    coefs = outcome_coefficients(ds)
    if covariate not in coefs:
        raise DataError("unknown covariate", column=covariate)
    return coefs[covariate]


def delta_u_pre(ds: DecompositionDataset, u) -> float:
    """Mean of ``u`` over G=1 minus its mean over exposed G=1 units."""
    u = np.asarray(u, dtype=float)
    if u.shape != (ds.n,):
        raise DataError(f"u has shape {u.shape}, expected ({ds.n},)")
    g1 = ds.g == 1
    g1z1 = g1 & (ds.z == 1)
    if not g1.any() or not g1z1.any():
        raise DataError("need G=1 rows and exposed G=1 rows")
    return float(np.mean(u[g1]) - np.mean(u[g1z1]))


def delta_u_from_propensities(u, z, e1, e0) -> float:
    """Sample mean of ``(e0 - e1) / (1 - e1) * (u - z u / e1)``; all arrays over G=1 units."""
    u, z, e1, e0 = (np.asarray(a, dtype=float) for a in (u, z, e1, e0))
    return float(np.mean((e0 - e1) / (1 - e1) * (u - z * u / e1)))


def delta_u_post(ds: DecompositionDataset, gp: GroupPropensities, u) -> float:
    """Propensity-weighted imbalance of ``u`` using fitted probabilities as plug-ins."""
    u = np.asarray(u, dtype=float)
    if u.shape != (ds.n,):
        raise DataError(f"u has shape {u.shape}, expected ({ds.n},)")
    w = compute_rmpw(ds, gp)
    return delta_u_from_propensities(u[w.unit_ids], ds.z[w.unit_ids], w.e1_hat, w.e0_hat)


def max_bias(bounds: SensitivityBounds, point: float) -> float:
    """Largest distance from ``point`` to either end of the bounds."""
    return max(abs(bounds.mu_lower - point), abs(bounds.mu_upper - point))


def calibrate(
    ds: DecompositionDataset,
    gp: GroupPropensities | None = None,
    spec: DesignSpec | None = None,
    allowability: bool = True,
    mode: str = "joint",
):
    """One calibration point per usable covariate, each treated as the unmeasured confounder.

    ``ds`` should have standardized covariates and ``gp`` must be fitted on it.
    In ``"joint"`` mode the post-weighting imbalance uses ``gp``; in ``"loco"``
    mode both propensity models are refitted without the covariate. Covariates
    constant within G=1 are skipped and reported in the returned notes.

    Returns ``(points, notes)``.
    """
    if mode not in ("joint", "loco"):
        raise ValueError("mode must be 'joint' or 'loco'")
    spec = spec or DesignSpec()
    g1 = ds.g == 1
    usable, notes = [], []
    for name in ds.column_names:
        if np.ptp(ds.column(name)[g1]) <= 1e-12:
            notes.append(f"{name}: constant within G=1, excluded")
        else:
            usable.append(name)
    if notes:
        # the G=1 propensity model cannot be fitted with these columns present
        for name in ds.column_names:
            if name not in usable:
                ds = ds.drop_covariate(name)
    if gp is None:
        gp = fit_group_propensities(ds, spec, allowability=allowability)
    coefs = outcome_coefficients(ds, usable)
    points = []
    for name in usable:
        u = ds.column(name)
        if mode == "loco":
            reduced = ds.drop_covariate(name)
            gp_j = fit_group_propensities(reduced, spec, allowability=allowability)
            post = delta_u_post(reduced, gp_j, u)
        else:
            post = delta_u_post(ds, gp, u)
        points.append(CalibrationPoint(name, coefs[name], delta_u_pre(ds, u), post))
    return points, notes


def rank_points(points, key: str = "bias_pre"):
    """Points sorted by descending bias, ties broken by covariate name."""
    return sorted(points, key=lambda p: (-getattr(p, key), p.covariate))


@dataclass(frozen=True)
class ContourGrid:
    delta_axis: np.ndarray
    beta_axis: np.ndarray
    critical_bias: float

    @property
    def bias(self) -> np.ndarray:
        """``bias[i, j] = beta_axis[i] * delta_axis[j]``."""
        return np.outer(self.beta_axis, self.delta_axis)

    @property
    def killer_mask(self) -> np.ndarray:
        return self.bias > self.critical_bias

    @property
    def killer_boundary(self) -> np.ndarray:
        """``(delta, beta)`` pairs on the critical-bias hyperbola, one per delta grid value."""
        return np.column_stack([self.delta_axis, self.critical_bias / self.delta_axis])

    def to_dict(self) -> dict:
        return {
            "critical_bias": float(self.critical_bias),
            "delta_max": float(self.delta_axis[-1]),
            "beta_max": float(self.beta_axis[-1]),
            "resolution": int(len(self.delta_axis)),
        }


def _axis(limit: float, resolution: int) -> np.ndarray:
    return limit * (np.arange(1, resolution + 1) / resolution)


def contour_grid(
    critical_bias: float,
    calib=(),
    resolution: int = 100,
    delta_max: float | None = None,
    beta_max: float | None = None,
) -> ContourGrid:
    """Grid of (imbalance, impact) pairs covering 1.2 times the largest calibration point."""
    if not critical_bias > 0:
        raise ValueError("critical_bias must be positive")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    calib = list(calib)
    if not calib and (delta_max is None or beta_max is None):
        raise ValueError("need calibration points or explicit axis limits")
    fallback = 1.2 * np.sqrt(critical_bias)
    if delta_max is None:
        d = max(max(abs(p.delta_pre), abs(p.delta_post)) for p in calib)
        delta_max = 1.2 * d if d > 0 else fallback
    if beta_max is None:
        b = max(abs(p.beta_u) for p in calib)
        beta_max = 1.2 * b if b > 0 else fallback
    return ContourGrid(_axis(delta_max, resolution), _axis(beta_max, resolution), float(critical_bias))


def _num(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".")


def render_contour_svg(grid: ContourGrid, points, title: str = "", top_k: int = 3) -> str:
    """Static SVG bias-contour plot.

    Horizontal axis is ``|delta_u|``, vertical ``|beta_u|``. Red markers are
    pre-weighting imbalance, green post-weighting; the shaded area above the
    blue hyperbola is the killer-confounder region. The ``top_k`` covariates by
    pre-weighting bias are labelled.
    """
    W, H = 640, 480
    left, right, top, bottom = 70, 20, 40, 60
    pw, ph = W - left - right, H - top - bottom
    dmax, bmax = float(grid.delta_axis[-1]), float(grid.beta_axis[-1])
    c = grid.critical_bias

    def px(d, b):
        return left + pw * d / dmax, top + ph * (1 - b / bmax)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
    ]
    # curve enters the plot through the top edge at delta = c / bmax
    d0 = c / bmax
    curve = [(d0, bmax)] + [(float(d), c / float(d)) for d in grid.delta_axis if d > d0]
    if d0 < dmax:
        region = curve + [(dmax, bmax)]
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in (px(d, b) for d, b in region))
        out.append(f'<polygon id="killer-region" points="{pts}" fill="#1f5fbf" fill-opacity="0.18" stroke="none"/>')
        cpts = " ".join(f"{_num(x)},{_num(y)}" for x, y in (px(d, b) for d, b in curve))
        data = " ".join(f"{d!r},{b!r}" for d, b in curve)
        out.append(
            f'<polyline id="critical-curve" points="{cpts}" data-points="{data}" '
            f'fill="none" stroke="#1f5fbf" stroke-width="2"/>'
        )
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for k in range(6):
        d, b = dmax * k / 5, bmax * k / 5
        x, _ = px(d, 0)
        _, y = px(0, b)
        out.append(f'<line x1="{_num(x)}" y1="{top + ph}" x2="{_num(x)}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(x)}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{d:.3g}</text>')
        out.append(f'<line x1="{left - 5}" y1="{_num(y)}" x2="{left}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_num(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="11">{b:.3g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" font-size="13">|delta_u| (imbalance)</text>')
    out.append(
        f'<text x="18" y="{top + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {top + ph / 2})">|beta_u| (impact)</text>'
    )
    for p in points:
        b = abs(p.beta_u)
        for d, colour, cls in ((abs(p.delta_pre), "#d62728", "pre"), (abs(p.delta_post), "#2ca02c", "post")):
            x, y = px(min(d, dmax), min(b, bmax))
            out.append(
                f'<circle class="{cls}" cx="{_num(x)}" cy="{_num(y)}" r="4" fill="{colour}" '
                f'data-covariate="{escape(p.covariate)}"/>'
            )
    for p in rank_points(points)[:top_k]:
        x, y = px(min(abs(p.delta_pre), dmax), min(abs(p.beta_u), bmax))
        out.append(
            f'<text class="label" x="{_num(x + 6)}" y="{_num(y - 6)}" font-family="sans-serif" '
            f'font-size="11">{escape(p.covariate)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


class Amplification(BaseEstimator):
    """Estimator wrapper around :func:`calibrate` and :func:`contour_grid`.

    ``fit(ds, critical_bias=...)`` expects standardized covariates.
    """

    def __init__(self, interactions=False, allowability=True, mode="joint", resolution=100):
        self.interactions = interactions
        self.allowability = allowability
        self.mode = mode
        self.resolution = resolution

    def fit(self, ds: DecompositionDataset, y=None, critical_bias=None, propensities=None):
        spec = DesignSpec(include_two_way_interactions=self.interactions)
        self.points_, self.notes_ = calibrate(ds, propensities, spec, self.allowability, self.mode)
        self.grid_ = (
            contour_grid(critical_bias, self.points_, self.resolution) if critical_bias else None
        )
        return self

    def transform(self, ds=None):
        check_is_fitted(self, "points_")
        return self.points_
