import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import optimize, stats

from fdrsafe.core import ConfigError, FitError, NullSpec, to_pvalues
from fdrsafe.estimators import (GridConfig, ModelSpec, build_grid, estimate_pi0_lambda,
                                fit_empirical_null, fit_grenander, fit_grid, fit_model,
                                fit_pvalue_family, grenander_density, least_concave_majorant,
                                load_grid_config, pi0_lambda)
from fdrsafe.estimators._smooth import (LegendreBasis, NaturalSplineBasis, binned_kde,
                                        poisson_irls, silverman_bandwidth)
from fdrsafe.estimators.grenander import estimate_null_scale
from fdrsafe.estimators.pvalue import transformed_density


# --------------------------------------------------------------------------
# smoothing helpers
# --------------------------------------------------------------------------

def test_poisson_irls_matches_direct_likelihood_maximisation(rng):
    x = np.linspace(-1, 1, 40)
    X = np.column_stack([np.ones_like(x), x, x ** 2])
    y = rng.poisson(np.exp(1.0 + 0.5 * x - x ** 2))
    beta = poisson_irls(X, y)

    def nll(b):
        eta = X @ b
        return np.sum(np.exp(eta) - y * eta)

    ref = optimize.minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    assert_allclose(beta, ref, atol=1e-5)


def test_natural_spline_is_linear_beyond_boundary_knots():
    basis = NaturalSplineBasis(np.linspace(0, 1, 5))
    x = np.linspace(1.0, 3.0, 7)
    B = basis(x)
    assert_allclose(np.diff(B, 2, axis=0), 0, atol=1e-10)
    assert basis(np.array([0.5])).shape == (1, 5)


def test_legendre_basis_rank():
    basis = LegendreBasis(-2, 2, 7)
    X = basis(np.linspace(-2, 2, 50))
    assert np.linalg.matrix_rank(X) == 8


def test_binned_kde_close_to_direct_sum(rng):
    x = rng.normal(size=500)
    bw = silverman_bandwidth(x)
    direct = stats.norm.pdf((x[:, None] - x[None, :]) / bw).mean(axis=1) / bw
    assert_allclose(binned_kde(x, bw), direct, rtol=5e-3, atol=1e-4)


# --------------------------------------------------------------------------
# Grenander family
# --------------------------------------------------------------------------

def brute_majorant(x, y, at):
    """Least concave majorant at ``at``: best chord over points bracketing it."""
    best = -np.inf
    for i in range(len(x)):
        for j in range(i, len(x)):
            if x[i] <= at <= x[j]:
                if i == j:
                    val = y[i]
                else:
                    t = (at - x[i]) / (x[j] - x[i])
                    val = (1 - t) * y[i] + t * y[j]
                best = max(best, val)
    return best


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.integers(0, 2**31))
def test_lcm_against_chord_oracle(ys, seed):
    x = np.sort(np.random.default_rng(seed).random(len(ys))) + np.arange(len(ys))
    y = np.array(ys)
    knots = least_concave_majorant(x, y)
    assert knots[0] == 0 and knots[-1] == len(x) - 1
    hull = np.interp(x, x[knots], y[knots])
    oracle = np.array([brute_majorant(x, y, v) for v in x])
    assert_allclose(hull, oracle, atol=1e-12)


def test_grenander_density_is_decreasing_and_normalised(rng):
    p = rng.beta(0.5, 1.5, size=400)
    at = np.sort(np.unique(p))
    dens = grenander_density(p, at)
    assert np.all(np.diff(dens) <= 1e-12)
    # integral of the left derivative over (0, max p] equals the CDF there
    widths = np.diff(np.concatenate([[0.0], at]))
    assert_allclose(np.sum(widths * dens), 1.0, rtol=1e-10)


def test_grenander_uniform_near_one(rng):
    p = rng.random(20_000)
    assert_allclose(np.median(grenander_density(p)), 1.0, atol=0.05)


def test_grenander_needs_two_values():
    with pytest.raises(FitError):
        grenander_density(np.full(10, 0.3))


def test_null_scale_on_pure_null(rng):
    u = 1.3 * rng.normal(size=20_000)
    assert_allclose(estimate_null_scale(u, "fndr"), 1.3, rtol=0.03)
    assert_allclose(estimate_null_scale(u, "pct0", 0.55), 1.3, rtol=0.03)
    with pytest.raises(ValueError):
        estimate_null_scale(u, "other")


def test_fit_grenander(symmetric_data):
    fit = fit_grenander(symmetric_data.u)
    assert 0.6 < fit.pi0 <= 1.0
    # fdr is a monotone function of |u|
    order = np.argsort(np.abs(symmetric_data.u))
    assert np.all(np.diff(fit.fdr[order]) <= 1e-12)
    with pytest.raises(FitError):
        fit_grenander(symmetric_data.u[:20])


# --------------------------------------------------------------------------
# p-value family
# --------------------------------------------------------------------------

def test_pi0_lambda_raw_values_exceed_one():
    p = np.linspace(0.55, 0.99, 10)
    assert_allclose(pi0_lambda(p, np.array([0.5])), [2.0])
    for method in ("smoother", "bootstrap"):
        assert estimate_pi0_lambda(p, method) == 1.0


def test_pi0_lambda_hand_count():
    p = np.array([0.01, 0.2, 0.5, 0.7, 0.9])
    # two values strictly above 0.5: 2 / (5 * 0.5)
    assert_allclose(pi0_lambda(p, np.array([0.5])), [0.8])


@pytest.mark.parametrize("method", ["smoother", "bootstrap"])
def test_pi0_uniform(method, rng):
    p = rng.random(100_000)
    assert abs(estimate_pi0_lambda(p, method) - 1.0) <= 0.05



@pytest.mark.parametrize("transf", ["probit", "logit"])
def test_transformed_density_change_of_variables(transf, rng):
    # uniform p has density 1; Beta(2, 1) has density 2p
    mid = np.linspace(0.2, 0.8, 7)
    flat = transformed_density(np.concatenate([rng.random(200_000), mid]), transf, 1.0)[-7:]
    assert_allclose(flat, 1.0, atol=0.05)
    ramp = transformed_density(np.concatenate([rng.beta(2, 1, 200_000), mid]), transf, 1.0)[-7:]
    assert_allclose(ramp, 2 * mid, atol=0.08)

def test_pi0_bootstrap_seeded(rng):
    p = np.concatenate([rng.random(800), rng.beta(0.2, 5, 200)])
    a = estimate_pi0_lambda(p, "bootstrap", seed=3)
    assert a == estimate_pi0_lambda(p, "bootstrap", seed=3)
    assert 0.6 < a < 1.0


def test_pvalue_family_monotone_in_p(symmetric_data):
    p = to_pvalues(symmetric_data.u)
    for transf in ("probit", "logit"):
        fit = fit_pvalue_family(p, transf=transf, u=symmetric_data.u)
        order = np.argsort(p)
        assert np.all(np.diff(fit.fdr[order]) >= 0)
        assert 0.6 < fit.pi0 <= 1


def test_pvalue_family_degenerate():
    with pytest.raises(FitError):
        fit_pvalue_family(np.full(50, 0.4))
    with pytest.raises(FitError):
        fit_pvalue_family(np.array([0.2, 1.3]))


# --------------------------------------------------------------------------
# empirical-null family
# --------------------------------------------------------------------------

@pytest.mark.parametrize("nulltype", ["mle", "central-matching"])
@pytest.mark.parametrize("marginal", ["spline", "polynomial"])
def test_empirical_null_on_pure_null(nulltype, marginal, rng):
    u = rng.normal(size=5000)
    fit = fit_empirical_null(u, nulltype=nulltype, marginal=marginal, pct0=0.2)
    assert fit.pi0 > 0.9
    central = np.abs(u) < 1.5
    assert np.mean(fit.fdr[central]) > 0.9


def test_empirical_null_finds_signal(symmetric_data):
    fit = fit_empirical_null(symmetric_data.u, pct0=0.225)
    l = symmetric_data.l
    assert fit.fdr[l == 1].mean() < fit.fdr[l == 0].mean() - 0.3



@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 20), st.integers(0, 2**31))
def test_empirical_null_scale_equivariant(c, seed):
    g = np.random.default_rng(seed)
    u = np.concatenate([g.normal(0, 1, 800), g.normal(0, 3, 200)])
    for marginal in ("spline", "polynomial"):
        a = fit_empirical_null(u, "mle", marginal, pct0=0.2)
        b = fit_empirical_null(c * u, "mle", marginal, pct0=0.2)
        # exact up to the IRLS and null-MLE convergence tolerances
        assert_allclose(b.fdr, a.fdr, atol=1e-5)
        assert_allclose(b.pi0, a.pi0, atol=1e-5)

def test_empirical_null_too_small():
    with pytest.raises(FitError):
        fit_empirical_null(np.linspace(-1, 1, 30))


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------

class TestGrid:
    def test_default_count_and_order(self):
        specs = build_grid()
        ids = [s.model_id for s in specs]
        assert len(specs) == 110
        assert ids == sorted(ids) and len(set(ids)) == len(ids)
        counts = {f: sum(s.family == f for s in specs) for f in "LGQ"}
        assert counts == {"L": 80, "G": 6, "Q": 24}

    def test_single_family_and_dedup(self):
        cfg = GridConfig(include_L=False, include_Q=False, G_pct0=[0.5, 0.5, 0.7])
        specs = build_grid(cfg)
        assert {s.family for s in specs} == {"G"}
        assert len(specs) == 3

    def test_config_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            GridConfig.from_dict({"bogus": 1})
        with pytest.raises(ConfigError):
            build_grid(GridConfig(include_L=False, include_G=False, include_Q=False))
        with pytest.raises(ConfigError):
            GridConfig.from_dict({"L_pct0": [0.6]})
        bad = tmp_path / "g.json"
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_grid_config(bad)
        good = tmp_path / "h.json"
        good.write_text('{"include_L": false, "Q_adj": [1.0]}')
        assert len(build_grid(load_grid_config(good))) == 6 + 6

    def test_model_id_format(self):
        spec = ModelSpec("Q", {"pi0_method": "smoother", "adj": 1.5, "smooth_log_pi0": True})
        assert spec.model_id == "Q:pi0_method=smoother,adj=1.5,smooth_log_pi0=true"
        with pytest.raises(ConfigError):
            ModelSpec("Z")

    def test_fit_grid_matches_individual_fits(self, symmetric_data):
        specs = build_grid()
        u = symmetric_data.u
        fits, errors = fit_grid(specs, u)
        assert not errors
        for spec in specs[::9]:
            assert_array_equal(fits[spec.model_id].fdr, fit_model(spec, u).fdr)

    def test_fit_model_wraps_failures(self):
        spec = build_grid()[0]
        with pytest.raises(FitError) as info:
            fit_model(spec, np.array([1.0]))
        assert info.value.model_id == spec.model_id
        assert "insufficient data" in info.value.reason

    def test_t_null_used_for_pvalue_family(self, symmetric_data):
        spec = [s for s in build_grid() if s.family == "Q"][0]
        a = fit_model(spec, symmetric_data.u)
        b = fit_model(spec, symmetric_data.u, NullSpec.from_df(5))
        assert not np.array_equal(a.fdr, b.fdr)
