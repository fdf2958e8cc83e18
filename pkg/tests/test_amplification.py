import xml.etree.ElementTree as ET

import numpy as np
import pytest

from decompsens.amplification import (
    Amplification,
    CalibrationPoint,
    calibrate,
    contour_grid,
    delta_u_from_propensities,
    delta_u_post,
    delta_u_pre,
    estimate_beta_u,
    max_bias,
    outcome_coefficients,
    rank_points,
    render_contour_svg,
)
from decompsens.dataset import from_arrays, standardize_covariates
from decompsens.decomposition import counterfactual_mean
from decompsens.exceptions import DataError, SingularDesignError
from decompsens.sensitivity import bounds_at
from decompsens.synthetic import DgpConfig, generate
from decompsens.weights import GroupPropensities, compute_rmpw, fit_group_propensities

from conftest import random_dataset


@pytest.fixture(scope="module")
def std_ds():
    return standardize_covariates(random_dataset(np.random.default_rng(21), n=400, p_allowable=2, p_nonallowable=2))


def test_beta_u_exact_on_constructed_design():
    rng = np.random.default_rng(0)
    n = 200
    g = np.r_[np.ones(120), np.zeros(80)]
    z = (rng.random(n) < 0.5).astype(float)
    u = rng.standard_normal(n)
    other = rng.standard_normal(n)
    ds = standardize_covariates(from_arrays(g, z, np.zeros(n), u[:, None], other[:, None], ["u"], ["o"]))
    ds = ds.replace(y=2.0 * ds.column("u"))
    assert estimate_beta_u(ds, "u") == pytest.approx(2.0, abs=1e-10)
    assert estimate_beta_u(ds, "o") == pytest.approx(0.0, abs=1e-10)
    flat = ds.replace(y=np.full(n, 3.0))
    assert all(abs(v) < 1e-10 for v in outcome_coefficients(flat).values())
    with pytest.raises(DataError):
        estimate_beta_u(ds, "nope")


def test_beta_u_uncorrelated_covariate_near_zero():
    rng = np.random.default_rng(1)
    n = 20_000
    g = (rng.random(n) < 0.5).astype(float)
    z = (rng.random(n) < 0.5).astype(float)
    x = rng.standard_normal((n, 2))
    y = 1 + z + x[:, 0] + rng.standard_normal(n)
    ds = standardize_covariates(from_arrays(g, z, y, x))
    assert abs(estimate_beta_u(ds, "a1")) < 0.05


def test_beta_u_rank_deficient():
    rng = np.random.default_rng(2)
    n = 40
    x = rng.standard_normal(n)
    ds = from_arrays(np.tile([1, 1, 0, 0], 10), np.tile([1, 0, 1, 0], 10), rng.standard_normal(n), np.c_[x, 2 * x])
    with pytest.raises(SingularDesignError):
        estimate_beta_u(ds, "a0")


def test_delta_post_examples(std_ds):
    assert delta_u_from_propensities([1.0], [1.0], [0.5], [0.75]) == pytest.approx(-0.5)
    gp = fit_group_propensities(std_ds, allowability=False)
    same = GroupPropensities(gp.model_e1, gp.model_e1, allowability=False)
    assert delta_u_post(std_ds, same, std_ds.column("a0")) == 0.0
    assert delta_u_post(std_ds, gp, np.zeros(std_ds.n)) == 0.0
    with pytest.raises(DataError):
        delta_u_post(std_ds, gp, np.zeros(3))


def test_delta_pre_examples():
    ds = from_arrays([1, 1, 0, 0], [0, 1, 1, 0], [0, 0, 0, 0])
    assert delta_u_pre(ds, np.array([0.0, 2.0, 5.0, 7.0])) == -1.0
    assert delta_u_pre(ds, np.array([3.0, 3.0, 5.0, 7.0])) == 0.0
    rng = np.random.default_rng(3)
    n = 40_000
    big = from_arrays((rng.random(n) < 0.5), (rng.random(n) < 0.5), np.zeros(n))
    assert abs(delta_u_pre(big, rng.standard_normal(n))) < 0.03


def test_delta_matches_one_minus_weight_identity(std_ds):
    gp = fit_group_propensities(std_ds)
    w = compute_rmpw(std_ds, gp)
    u = std_ds.column("n0")
    u1 = u[w.unit_ids]
    # the plug-in imbalance equals mean(u) - mean(w u) over G=1
    assert delta_u_post(std_ds, gp, u) == pytest.approx(np.mean(u1) - np.mean(w.w * u1), abs=1e-12)


def test_max_bias(std_ds):
    gp = fit_group_propensities(std_ds)
    w = compute_rmpw(std_ds, gp)
    point = counterfactual_mean(std_ds, w)
    assert max_bias(bounds_at(std_ds, w, 1.0), point) == 0.0
    vals = [max_bias(bounds_at(std_ds, w, lam), point) for lam in (1, 1.1, 1.5, 2, 4)]
    assert vals == sorted(vals)


def test_contour_grid_examples():
    cal = [CalibrationPoint("x", 2.0, 0.5, 0.2)]
    grid = contour_grid(1.0, cal, resolution=50)
    assert grid.delta_axis[-1] == pytest.approx(0.6) and grid.beta_axis[-1] == pytest.approx(2.4)
    # (1, 1) and (2, 0.5) sit on the same critical curve
    for beta, delta in ((1.0, 1.0), (2.0, 0.5)):
        assert beta * delta == pytest.approx(grid.critical_bias)
    kb = grid.killer_boundary
    assert np.all(np.abs(kb[:, 0] * kb[:, 1] - grid.critical_bias) <= 1e-12)
    np.testing.assert_array_equal(grid.bias, np.outer(grid.beta_axis, grid.delta_axis))
    np.testing.assert_array_equal(grid.killer_mask, grid.bias > 1.0)
    fine = contour_grid(1.0, cal, resolution=100)
    np.testing.assert_allclose(fine.killer_boundary[1::2], kb, rtol=1e-14)


def test_contour_grid_errors_and_explicit_limits():
    with pytest.raises(ValueError):
        contour_grid(1.0, [])
    with pytest.raises(ValueError):
        contour_grid(0.0, [CalibrationPoint("x", 1, 1, 1)])
    g = contour_grid(0.3, [], resolution=4, delta_max=2.0, beta_max=1.0)
    np.testing.assert_allclose(g.delta_axis, [0.5, 1, 1.5, 2])


def test_calibrate_notes_and_permutation(std_ds):
    const = np.where(std_ds.g == 1, 1.0, np.linspace(-1, 1, std_ds.n))
    ds = std_ds.replace(
        x_nonallowable=np.c_[std_ds.x_nonallowable, const], nonallowable_names=std_ds.nonallowable_names + ("k",)
    )
    points, notes = calibrate(ds)
    assert [p.covariate for p in points] == ["a0", "a1", "n0", "n1"]
    assert any("k" in n and "constant" in n for n in notes)
    for p in points:
        assert all(np.isfinite(v) for v in p.row()[1:])
    # reverse covariate order inside each block
    rev = std_ds.replace(
        x_allowable=std_ds.x_allowable[:, ::-1], allowable_names=std_ds.allowable_names[::-1],
        x_nonallowable=std_ds.x_nonallowable[:, ::-1], nonallowable_names=std_ds.nonallowable_names[::-1],
    )
    a = {p.covariate: p for p in calibrate(std_ds)[0]}
    b = {p.covariate: p for p in calibrate(rev)[0]}
    for k in a:
        np.testing.assert_allclose(a[k].row()[1:], b[k].row()[1:], rtol=1e-7, atol=1e-9)


def test_sign_symmetry(std_ds):
    gp = fit_group_propensities(std_ds)
    u = std_ds.column("a1")
    flipped = std_ds.replace(x_allowable=std_ds.x_allowable * np.array([1.0, -1.0]))
    gpf = fit_group_propensities(flipped)
    assert delta_u_pre(flipped, -u) == pytest.approx(-delta_u_pre(std_ds, u), abs=1e-14)
    assert delta_u_post(flipped, gpf, -u) == pytest.approx(-delta_u_post(std_ds, gp, u), abs=1e-10)
    assert estimate_beta_u(flipped, "a1") == pytest.approx(-estimate_beta_u(std_ds, "a1"), abs=1e-10)
    p = {q.covariate: q for q in calibrate(std_ds, gp)[0]}["a1"]
    pf = {q.covariate: q for q in calibrate(flipped, gpf)[0]}["a1"]
    assert pf.bias_post == pytest.approx(p.bias_post, rel=1e-8)


def test_calibration_recovers_injected_confounder():
    cfg = DgpConfig(n=40_000, seed=5, p_allowable=1, p_nonallowable=1, gamma1=(0.2, 0.5, -0.4),
                    gamma0=(-0.3, 0.3), beta_z=1.0, f=(0.5, 0.3), beta_u=0.8, u_on_e1=1.0, hidden=False)
    s = generate(cfg)
    raw_u = s.dataset.column("u")
    ds = standardize_covariates(s.dataset)
    sd_u = raw_u.std(ddof=1)
    pts = {p.covariate: p for p in calibrate(ds, mode="loco")[0]}
    u = pts["u"]
    # the standardized coefficient carries the sample sd of U; truth is per unit sd
    assert u.beta_u == pytest.approx(cfg.beta_u * sd_u, abs=0.03)
    assert u.delta_post * sd_u == pytest.approx(s.truth.true_delta_u, abs=0.02)
    joint = {p.covariate: p for p in calibrate(ds, mode="joint")[0]}
    # with U in both models the weights balance it
    assert abs(joint["u"].delta_post) < abs(u.delta_post) / 3


def test_svg_render(std_ds):
    pts = rank_points(calibrate(std_ds)[0])
    grid = contour_grid(0.05, pts, resolution=40)
    svg = render_contour_svg(grid, pts, title="t <&>")
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    labels = [t.text for t in root.iter(ns + "text") if t.get("class") == "label"]
    assert labels == [p.covariate for p in pts[:3]]
    assert len([c for c in root.iter(ns + "circle") if c.get("class") == "pre"]) == len(pts)
    assert len([c for c in root.iter(ns + "circle") if c.get("class") == "post"]) == len(pts)
    curve = next(e for e in root.iter(ns + "polyline") if e.get("id") == "critical-curve")
    data = [tuple(map(float, p.split(","))) for p in curve.get("data-points").split()]
    assert all(abs(d * b - 0.05) <= 1e-12 for d, b in data)
    assert next(e for e in root.iter(ns + "polygon") if e.get("id") == "killer-region") is not None


def test_estimator_wrapper(std_ds):
    est = Amplification(resolution=10).fit(std_ds, critical_bias=0.1)
    assert est.grid_.delta_axis.size == 10 and est.transform() is est.points_
