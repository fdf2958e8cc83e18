"""Synthetic data with a known, optionally hidden, confounder and Monte-Carlo truths.

Data-generating process (all covariates and the confounder standard normal and
mutually independent, and independent of group)::

    G ~ Bernoulli(group_prevalence)
    Z | G=1 ~ Bernoulli(expit(gamma1 . [1, X] + u_on_e1 * U))
    Z | G=0 ~ Bernoulli(expit(gamma0 . [1, X_A] + u_on_e0 * U))
    Y = alpha + beta_z Z + f . X + beta_u U + group0_offset (1 - G) + noise

The observed propensities (those an analyst without ``U`` can at best recover)
integrate ``U`` out; they are evaluated by Gauss-Hermite quadrature. The ideal
propensities condition on ``U`` as well (for G=0 only when ``U`` is allowable).
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.special import expit

from .dataset import DecompositionDataset, from_arrays
from .weights import rmpw_from_propensities

ORACLE_DRAWS = 200_000
ORACLE_SEED = 20240917
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(80)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(2 * np.pi)


def _tuple(v, length, name):
    if v is None or len(v) == 0:
        return (0.0,) * length
    v = tuple(float(x) for x in v)
    if len(v) != length:
        raise ValueError(f"{name} has length {len(v)}, expected {length}")
    return v


@dataclass(frozen=True)
class DgpConfig:
    """Configuration of the synthetic working-model DGP.

    Empty coefficient tuples mean all zeros. ``gamma1`` has length ``1 + p``
    (intercept first, allowable covariates before non-allowable ones),
    ``gamma0`` has length ``1 + p_allowable`` and ``f`` has length ``p``.
    """

    n: int = 2000
    p_allowable: int = 1
    p_nonallowable: int = 1
    group_prevalence: float = 0.5
    gamma1: tuple = ()
    gamma0: tuple = ()
    alpha: float = 0.0
    beta_z: float = 1.0
    f: tuple = ()
    beta_u: float = 0.0
    noise_sd: float = 1.0
    group0_offset: float = 0.0
    u_on_e1: float = 0.0
    u_on_e0: float = 0.0
    u_allowable: bool = False
    hidden: bool = True
    seed: int = 0
    oracle_draws: int = ORACLE_DRAWS

    def __post_init__(self):
        p = self.p_allowable + self.p_nonallowable
        if self.n < 8 or self.p_allowable < 0 or self.p_nonallowable < 0:
            raise ValueError("need n >= 8 and non-negative covariate counts")
        if not 0 < self.group_prevalence < 1:
            raise ValueError("group_prevalence must lie in (0, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.oracle_draws < 10_000:
            raise ValueError("oracle_draws must be at least 10000")
        object.__setattr__(self, "gamma1", _tuple(self.gamma1, 1 + p, "gamma1"))
        object.__setattr__(self, "gamma0", _tuple(self.gamma0, 1 + self.p_allowable, "gamma0"))
        object.__setattr__(self, "f", _tuple(self.f, p, "f"))
        numbers = (*self.gamma1, *self.gamma0, *self.f, self.alpha, self.beta_z, self.beta_u,
                   self.group0_offset, self.u_on_e1, self.u_on_e0)
        if not np.all(np.isfinite(numbers)):
            raise ValueError("coefficients must be finite")

    @property
    def p(self) -> int:
        return self.p_allowable + self.p_nonallowable

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def marginal_expit(linear, s: float):
    """``E[expit(linear + s U)]`` for ``U ~ N(0, 1)``."""
    linear = np.asarray(linear, dtype=float)
    if s == 0:
        return expit(linear)
    return expit(linear[..., None] + s * _GH_NODES) @ _GH_WEIGHTS


def _lin(gamma, x):
    gamma = np.asarray(gamma)
    return gamma[0] + x @ gamma[1:]


def _propensities(cfg: DgpConfig, x, u):
    """Observed ``(e1, e0)`` and ideal ``(e1*, e0*)`` propensities at ``(x, u)``."""
    xa = x[:, : cfg.p_allowable]
    l1, l0 = _lin(cfg.gamma1, x), _lin(cfg.gamma0, xa)
    e1, e0 = marginal_expit(l1, cfg.u_on_e1), marginal_expit(l0, cfg.u_on_e0)
    e1s = expit(l1 + cfg.u_on_e1 * u)
    e0s = expit(l0 + cfg.u_on_e0 * u) if cfg.u_allowable else e0
    return e1, e0, e1s, e0s


def _outcome_mean(cfg: DgpConfig, x, u, z):
    return cfg.alpha + cfg.beta_z * z + x @ np.asarray(cfg.f) + cfg.beta_u * u


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    se: float
    draws: int


def _oracle_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(ORACLE_SEED if seed is None else seed))


def _population_draws(cfg, draws, rng):
    x = rng.standard_normal((draws, cfg.p))
    u = rng.standard_normal(draws)
    return x, u


def oracle_mu_r0(cfg: DgpConfig, draws: int = ORACLE_DRAWS, seed: int | None = None) -> OracleEstimate:
    """Monte-Carlo ``E[Y(R0) | G=1]``.

    For simulated G=1 units the intervention exposure is drawn from the true
    G=0 propensity (conditioning on ``U`` only if it is allowable) and the
    working-model mean is averaged.
    """
    if draws < 10_000:
        raise ValueError("draws must be at least 10000")
    rng = _oracle_rng(seed)
    x, u = _population_draws(cfg, draws, rng)
    _, _, _, e0s = _propensities(cfg, x, u)
    z_int = (rng.random(draws) < e0s).astype(float)
    m = _outcome_mean(cfg, x, u, z_int)
    return OracleEstimate(float(m.mean()), float(m.std(ddof=1) / np.sqrt(draws)), draws)


def oracle_delta_u(cfg: DgpConfig, draws: int = ORACLE_DRAWS, seed: int | None = None) -> OracleEstimate:
    """Monte-Carlo ``E[(e0 - e1)/(1 - e1) (U - Z U / e1) | G=1]`` with observed propensities.

    The exposure is averaged out analytically (``E[Z | X, U] = e1*``), which
    removes its sampling noise without changing the expectation.
    """
    if draws < 10_000:
        raise ValueError("draws must be at least 10000")
    rng = _oracle_rng(None if seed is None else seed + 1)
    x, u = _population_draws(cfg, draws, rng)
    e1, e0, e1s, _ = _propensities(cfg, x, u)
    t = (e0 - e1) / (1 - e1) * u * (1 - e1s / e1)
    return OracleEstimate(float(t.mean()), float(t.std(ddof=1) / np.sqrt(draws)), draws)


def _population_key(cfg: DgpConfig) -> DgpConfig:
    return replace(cfg, n=8, seed=0, hidden=True)


@functools.lru_cache(maxsize=64)
def _population_truth(key: DgpConfig):
    mu = oracle_mu_r0(key, key.oracle_draws)
    delta = oracle_delta_u(key, key.oracle_draws)
    return mu, delta


def oracle_true_weights(cfg: DgpConfig, x, u, z) -> np.ndarray:
    """Ideal weights ``w*`` from the true propensities, for rows carrying ``U``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, _, e1s, e0s = _propensities(cfg, x, np.asarray(u, dtype=float))
    return rmpw_from_propensities(z, e1s, e0s)


def oracle_observed_weights(cfg: DgpConfig, x, z) -> np.ndarray:
    """Weights ``w`` from the true observed (``U``-marginal) propensities."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    e1, e0, _, _ = _propensities(cfg, x, np.zeros(len(x)))
    return rmpw_from_propensities(z, e1, e0)


@dataclass(frozen=True)
class SyntheticTruth:
    true_mu_r0: float
    true_mu_r0_se: float
    true_bias: float
    true_bias_se: float
    true_lambda_bound: float
    true_beta_u: float
    true_delta_u: float
    true_delta_u_se: float
    oracle_draws: int = ORACLE_DRAWS

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticSample:
    """Full draw including the columns an analyst would not see."""

    dataset: DecompositionDataset
    u: np.ndarray
    x: np.ndarray
    truth: SyntheticTruth
    cfg: DgpConfig = field(repr=False, default=None)

    @property
    def treated(self) -> np.ndarray:
        return self.dataset.g == 1


def _draw(cfg: DgpConfig):
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    g = (rng.random(n) < cfg.group_prevalence).astype(float)
    x = rng.standard_normal((n, cfg.p))
    u = rng.standard_normal(n)
    xa = x[:, : cfg.p_allowable]
    p1 = expit(_lin(cfg.gamma1, x) + cfg.u_on_e1 * u)
    p0 = expit(_lin(cfg.gamma0, xa) + cfg.u_on_e0 * u)
    z = (rng.random(n) < np.where(g == 1, p1, p0)).astype(float)
    noise = cfg.noise_sd * rng.standard_normal(n)
    y = _outcome_mean(cfg, x, u, z) + cfg.group0_offset * (1 - g) + noise
    return g, z, y, x, u


def lambda_bound(cfg: DgpConfig, x, u, z) -> float:
    """``exp(max |ln(w*/w)|)`` over the given G=1 rows."""
    ratio = oracle_true_weights(cfg, x, u, z) / oracle_observed_weights(cfg, x, z)
    return float(np.exp(np.max(np.abs(np.log(ratio))))) if ratio.size else 1.0


def generate(cfg: DgpConfig) -> SyntheticSample:
    """Draw a dataset; ``U`` is left out of the covariates when ``cfg.hidden``."""
    g, z, y, x, u = _draw(cfg)
    xa, xn = x[:, : cfg.p_allowable], x[:, cfg.p_allowable:]
    a_names = [f"a{j}" for j in range(cfg.p_allowable)]
    n_names = [f"n{j}" for j in range(cfg.p_nonallowable)]
    if not cfg.hidden:
        if cfg.u_allowable:
            xa, a_names = np.column_stack([xa, u]), a_names + ["u"]
        else:
            xn, n_names = np.column_stack([xn, u]), n_names + ["u"]
    ds = from_arrays(g, z, y, xa, xn, allowable_names=a_names, nonallowable_names=n_names)
    mu, delta = _population_truth(_population_key(cfg))
    t1 = g == 1
    truth = SyntheticTruth(
        true_mu_r0=mu.value,
        true_mu_r0_se=mu.se,
        true_bias=cfg.beta_u * delta.value,
        true_bias_se=abs(cfg.beta_u) * delta.se,
        true_lambda_bound=lambda_bound(cfg, x[t1], u[t1], z[t1]),
        true_beta_u=cfg.beta_u,
        true_delta_u=delta.value,
        true_delta_u_se=delta.se,
        oracle_draws=cfg.oracle_draws,
    )
    return SyntheticSample(ds, u, x, truth, cfg)


def oracle_unit_terms(sample: SyntheticSample):
    """Per-unit terms over G=1 rows, computed with the true propensities.

    Returns ``(gap, bias)``: ``gap_i = E[Y_i(int)] - w_i Y_i`` with the
    intervention mean taken under the working model, and
    ``bias_i = beta_u (e0 - e1)/(1 - e1) (u_i - z_i u_i / e1)``. Their sample
    means agree in expectation.
    """
    cfg, ds = sample.cfg, sample.dataset
    t1 = ds.g == 1
    x, u, z, y = sample.x[t1], sample.u[t1], ds.z[t1], ds.y[t1]
    e1, e0, _, e0s = _propensities(cfg, x, u)
    w = rmpw_from_propensities(z, e1, e0)
    gap = _outcome_mean(cfg, x, u, e0s) - w * y
    bias = cfg.beta_u * (e0 - e1) / (1 - e1) * (u - z * u / e1)
    return gap, bias
