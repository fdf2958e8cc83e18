import numpy as np
import pytest

from decompsens.decomposition import RMPWDecomposition
from decompsens.sensitivity import bounds_at
from decompsens.synthetic import (
    DgpConfig,
    generate,
    marginal_expit,
    oracle_mu_r0,
    oracle_observed_weights,
    oracle_true_weights,
    oracle_unit_terms,
)

CONFOUNDED = dict(
    p_allowable=1, p_nonallowable=1, gamma1=(0.2, 0.5, -0.4), gamma0=(-0.3, 0.3),
    beta_z=1.0, f=(0.5, 0.3), beta_u=1.0, u_on_e1=1.0,
)


def hajek_se(ds, w):
    y1 = ds.y[ds.g == 1]
    mu = np.dot(w, y1) / w.sum()
    return float(np.sqrt(np.sum((w * (y1 - mu)) ** 2)) / w.sum())


def test_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(gamma1=(1.0,))
    with pytest.raises(ValueError):
        DgpConfig(group_prevalence=1.0)
    with pytest.raises(ValueError):
        DgpConfig(beta_u=float("inf"))
    with pytest.raises(ValueError):
        DgpConfig.from_dict({"bogus": 1})
    cfg = DgpConfig.from_dict({"gamma1": [0.1, 0.2, 0.3], "n": 100})
    assert cfg.gamma1 == (0.1, 0.2, 0.3) and DgpConfig.from_dict(cfg.to_dict()) == cfg


def test_marginal_expit_quadrature():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(2_000_000)
    mc = np.mean(1 / (1 + np.exp(-(0.4 + 1.3 * u))))
    assert marginal_expit(np.array([0.4]), 1.3)[0] == pytest.approx(mc, abs=2e-3)
    assert marginal_expit(np.array([0.0]), 2.0)[0] == pytest.approx(0.5, abs=1e-14)


def test_no_confounding_truths():
    s = generate(DgpConfig(n=500, **{**CONFOUNDED, "beta_u": 0.0, "u_on_e1": 0.0}))
    assert s.truth.true_bias == 0.0
    assert s.truth.true_lambda_bound == pytest.approx(1.0, abs=1e-12)


def test_confounder_off_exposure_has_zero_delta():
    s = generate(DgpConfig(n=500, **{**CONFOUNDED, "u_on_e1": 0.0}))
    assert s.truth.true_delta_u == 0.0 and s.truth.true_bias == 0.0


def test_generate_is_deterministic_and_hides_u():
    a = generate(DgpConfig(n=400, seed=5, **CONFOUNDED))
    b = generate(DgpConfig(n=400, seed=5, **CONFOUNDED))
    assert a.dataset.equals(b.dataset) and a.truth == b.truth
    np.testing.assert_array_equal(a.u, b.u)
    assert "u" not in a.dataset.column_names
    c = generate(DgpConfig(n=400, seed=6, **CONFOUNDED))
    assert not np.array_equal(a.dataset.y, c.dataset.y)
    vis = generate(DgpConfig(n=400, seed=5, hidden=False, **CONFOUNDED))
    np.testing.assert_array_equal(vis.dataset.column("u"), a.u)
    assert vis.dataset.nonallowable_names[-1] == "u"
    vis_a = generate(DgpConfig(n=400, seed=5, hidden=False, u_allowable=True, **CONFOUNDED))
    assert vis_a.dataset.allowable_names[-1] == "u"


def test_truth_fields_finite():
    t = generate(DgpConfig(n=300, **CONFOUNDED)).truth
    assert all(np.isfinite(v) for v in t.to_dict().values())


def test_oracle_mu_r0_ignores_propensities_without_exposure_effect():
    a = oracle_mu_r0(DgpConfig(**{**CONFOUNDED, "beta_z": 0.0}), 20_000)
    b = oracle_mu_r0(DgpConfig(**{**CONFOUNDED, "beta_z": 0.0, "gamma0": (2.0, -1.0)}), 20_000)
    assert a.value == b.value
    # population E[Y | G=1] is alpha for centred covariates
    assert abs(a.value - 0.0) <= 4 * a.se


def test_oracle_mu_r0_equal_propensities_is_group_mean():
    cfg = DgpConfig(p_allowable=2, p_nonallowable=0, gamma1=(0.3, 0.8, -0.5), gamma0=(0.3, 0.8, -0.5),
                    alpha=0.7, beta_z=1.5, f=(0.4, 0.2), n=200_000, seed=3)
    est = oracle_mu_r0(cfg, 200_000)
    s = generate(cfg)
    y1 = s.dataset.y[s.dataset.g == 1]
    se_y = y1.std(ddof=1) / np.sqrt(y1.size)
    assert abs(est.value - y1.mean()) <= 4 * np.hypot(est.se, se_y)


def test_oracle_standard_error_scaling():
    # repeats at draws N and 4N: empirical spread shrinks by half, reported SE too
    cfg = DgpConfig(**CONFOUNDED)
    small = [oracle_mu_r0(cfg, 10_000, seed=s) for s in range(40)]
    large = [oracle_mu_r0(cfg, 40_000, seed=1000 + s) for s in range(40)]
    ratio_reported = np.mean([e.se for e in large]) / np.mean([e.se for e in small])
    assert ratio_reported == pytest.approx(0.5, rel=0.02)
    ratio_empirical = np.std([e.value for e in large], ddof=1) / np.std([e.value for e in small], ddof=1)
    assert 0.35 < ratio_empirical < 0.7
    double = [oracle_mu_r0(cfg, 20_000, seed=2000 + s) for s in range(40)]
    assert np.mean([e.se for e in double]) / np.mean([e.se for e in small]) == pytest.approx(2 ** -0.5, rel=0.02)


def test_true_weights():
    cfg = DgpConfig(**{**CONFOUNDED, "u_on_e1": 0.0})
    rng = np.random.default_rng(1)
    x, u, z = rng.standard_normal((50, 2)), rng.standard_normal(50), (rng.random(50) < 0.5).astype(float)
    np.testing.assert_allclose(oracle_true_weights(cfg, x, u, z), oracle_observed_weights(cfg, x, z), rtol=1e-15)
    cfg = DgpConfig(**CONFOUNDED)
    row_x, row_u = np.array([[0.5, -1.0]]), np.array([0.8])
    e1s = 1 / (1 + np.exp(-(0.2 + 0.5 * 0.5 - 0.4 * -1.0 + 1.0 * 0.8)))
    e0 = 1 / (1 + np.exp(-(-0.3 + 0.3 * 0.5)))
    assert oracle_true_weights(cfg, row_x, row_u, [1.0])[0] == pytest.approx(e0 / e1s, rel=1e-14)
    assert oracle_true_weights(cfg, row_x, row_u, [0.0])[0] == pytest.approx((1 - e0) / (1 - e1s), rel=1e-14)


def test_lambda_bound_dominates_rows():
    s = generate(DgpConfig(n=3000, seed=4, **CONFOUNDED))
    t1 = s.dataset.g == 1
    ratio = oracle_true_weights(s.cfg, s.x[t1], s.u[t1], s.dataset.z[t1]) / oracle_observed_weights(
        s.cfg, s.x[t1], s.dataset.z[t1]
    )
    assert np.max(np.abs(np.log(ratio))) <= np.log(s.truth.true_lambda_bound) + 1e-9


def test_hidden_confounder_bias_at_large_n():
    s = generate(DgpConfig(n=50_000, seed=8, **CONFOUNDED))
    m = RMPWDecomposition().fit(s.dataset)
    gap = s.truth.true_mu_r0 - m.estimate_.mu_r0_hat
    se = np.sqrt(hajek_se(s.dataset, m.weights_.w) ** 2 + s.truth.true_mu_r0_se**2 + s.truth.true_bias_se**2)
    assert abs(gap - s.truth.true_bias) <= 3 * se
    assert s.truth.true_bias > 5 * se  # the check has teeth


@pytest.mark.parametrize("u_allowable", [False, True])
def test_visible_confounder_is_unbiased(u_allowable):
    cfg = DgpConfig(n=50_000, seed=9, hidden=False, u_allowable=u_allowable, **CONFOUNDED)
    s = generate(cfg)
    m = RMPWDecomposition().fit(s.dataset)
    se = np.hypot(hajek_se(s.dataset, m.weights_.w), s.truth.true_mu_r0_se)
    assert abs(m.estimate_.mu_r0_hat - s.truth.true_mu_r0) <= 3 * se


def test_bounds_at_true_lambda_contain_truth():
    for seed in range(5):
        s = generate(DgpConfig(n=2000, seed=seed, **CONFOUNDED))
        m = RMPWDecomposition().fit(s.dataset)
        b = bounds_at(s.dataset, m.weights_, s.truth.true_lambda_bound)
        assert b.mu_lower <= s.truth.true_mu_r0 <= b.mu_upper


def test_allowable_confounder_shares_the_bias_formula():
    cfg = DgpConfig(n=20_000, seed=2, u_allowable=True, u_on_e0=0.8, **CONFOUNDED)
    gap, bias = oracle_unit_terms(generate(cfg))
    d = gap - bias
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / np.sqrt(d.size)
