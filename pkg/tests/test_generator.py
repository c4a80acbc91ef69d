import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

from fdrsafe.core import ConfigError, FitError, InputError
from fdrsafe.generator import (EmConfig, GeneratorParams, eval_densities, fit_em,
                               sample_dataset, true_fdr)

PHI = GeneratorParams(0.8, 1.0, 0.3, 2.0, 3.0)

params = st.builds(GeneratorParams,
                   pi0=st.floats(0.05, 0.95), sigma0=st.floats(0.5, 2.0),
                   pi1n=st.floats(0.05, 0.95), sigma1n=st.floats(0.5, 4.0),
                   sigma1p=st.floats(0.5, 4.0))


def test_params_validation():
    with pytest.raises(ConfigError):
        GeneratorParams(1.5, 1, 0.5, 1, 1)
    with pytest.raises(ConfigError):
        GeneratorParams(0.5, 0, 0.5, 1, 1)


def test_alternative_density_by_hand():
    # (2 u^2 / s^2) N(u; 0, s) on the positive side, weighted by 1 - pi1n
    u = 1.7
    s = PHI.sigma1p
    hand = (1 - PHI.pi1n) * 2 * u ** 2 / s ** 2 * math.exp(-u ** 2 / (2 * s ** 2)) / (
        s * math.sqrt(2 * math.pi))
    assert_allclose(eval_densities(np.array([u]), PHI)[1], hand, rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(params)
def test_densities_integrate_to_one(phi):
    for k in (1, 2):
        dens = lambda x: eval_densities(np.array([x]), phi)[k][0]  # noqa: E731
        total = (integrate.quad(dens, -np.inf, 0.0, limit=200)[0]
                 + integrate.quad(dens, 0.0, np.inf, limit=200)[0])
        assert abs(total - 1) < 1e-6


@settings(max_examples=30, deadline=None)
@given(params, st.floats(-8, 8))
def test_true_fdr_is_bayes_rule(phi, u):
    f0, _, f = eval_densities(np.array([u]), phi)
    if f[0] > 1e-250:
        assert_allclose(true_fdr(np.array([u]), phi), phi.pi0 * f0 / f, rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(params, st.floats(-8, 8))
def test_mirror_symmetry(phi, u):
    assert_allclose(true_fdr(np.array([-u]), phi.mirrored()), true_fdr(np.array([u]), phi),
                    rtol=1e-12)


def test_true_fdr_at_zero_is_one():
    assert true_fdr(np.array([0.0]), PHI)[0] == 1.0
    zero = GeneratorParams(0.0, 1.0, 0.5, 1.0, 1.0)
    assert_array_equal(true_fdr(np.array([0.0, 1.0]), zero), [1.0, 0.0])


class TestSampling:
    def test_deterministic(self):
        a, b = sample_dataset(PHI, 500, 7), sample_dataset(PHI, 500, 7)
        assert_array_equal(a.u, b.u)
        assert_array_equal(a.l, b.l)

    def test_label_fraction_and_sides(self):
        d = sample_dataset(PHI, 100_000, 3)
        assert abs(d.l.mean() - 0.2) < 0.005
        alt = d.u[d.l == 1]
        assert abs(np.mean(alt < 0) - 0.3) < 0.01

    def test_alternative_magnitude_is_maxwell(self):
        phi = GeneratorParams(0.0, 1.0, 0.0, 1.0, 2.0)
        d = sample_dataset(phi, 20_000, 11)
        res = stats.kstest(d.u / 2.0, stats.maxwell.cdf)
        assert res.pvalue > 1e-3

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            sample_dataset(PHI, 0, 1)


class TestEm:
    def test_recovers_parameters(self):
        d = sample_dataset(PHI, 20_000, 99)
        res = fit_em(d.u, seed=1)
        assert res.converged
        p = res.params
        assert abs(p.pi0 - 0.8) < 0.03
        assert abs(p.pi1n - 0.3) < 0.05
        assert_allclose([p.sigma0, p.sigma1n, p.sigma1p], [1.0, 2.0, 3.0], rtol=0.08)

    def test_loglik_monotone_for_every_restart(self):
        d = sample_dataset(PHI, 3000, 5)
        res = fit_em(d.u, seed=2)
        for trace in res.all_traces:
            assert np.all(np.diff(trace) >= -1e-8 * abs(trace[-1]))
        assert res.loglik == max(t[-1] for t in res.all_traces)

    def test_seeded(self):
        d = sample_dataset(PHI, 2000, 5)
        assert fit_em(d.u, seed=4).params == fit_em(d.u, seed=4).params

    def test_iteration_budget(self):
        d = sample_dataset(PHI, 2000, 5)
        res = fit_em(d.u, EmConfig(max_iter=2, n_restarts=1))
        assert not res.converged

    def test_errors(self):
        with pytest.raises(InputError):
            fit_em(np.ones(5))
        with pytest.raises(FitError):
            fit_em(np.zeros(50))
        with pytest.raises(ConfigError):
            EmConfig(n_restarts=0)
