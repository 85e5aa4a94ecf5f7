from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdsxva import rng
from cdsxva.errors import ConfigError, SimulationFault
from cdsxva.factors import (
    CirParams,
    FactorRegime,
    TimeGrid,
    affine_transform,
    affine_transform_dt,
    cir_moments,
    euler_paths,
    riccati_coefficients,
    simulate_factor_batch,
    simulate_factors,
)

from conftest import HIGH, REGIMES, SEED, const_params

# zero or economically meaningful magnitudes; denormal speeds are not a use case
params_st = st.builds(
    CirParams,
    zeta=st.one_of(st.just(0.0), st.floats(1e-4, 3.0)),
    mu=st.floats(0.0, 0.2),
    sigma=st.one_of(st.just(0.0), st.floats(1e-6, 0.5)),
    x0=st.floats(0.0, 0.3),
)


def test_regime_presets_exact():
    assert FactorRegime.LOW.params == CirParams(0.9, 0.001, 0.01, 0.001)
    assert FactorRegime.MEDIUM.params == CirParams(0.8, 0.02, 0.1, 0.02)
    assert FactorRegime.HIGH.params == CirParams(0.5, 0.05, 0.2, 0.05)
    assert FactorRegime.parse(" High ") is FactorRegime.HIGH
    with pytest.raises(ConfigError):
        FactorRegime.parse("extreme")


@pytest.mark.parametrize("field", ["zeta", "mu", "sigma", "x0"])
def test_negative_parameter_rejected(field):
    kw = dict(zeta=0.5, mu=0.05, sigma=0.2, x0=0.05)
    kw[field] = -1e-9
    with pytest.raises(ConfigError):
        CirParams(**kw)


def test_grid_nodes():
    g = TimeGrid(0.0, 5.0, 1 / 250)
    assert g.n_steps == 1250
    assert g.nodes[-1] == 5.0
    assert np.all(np.diff(g.nodes) > 0)
    assert g.index_of(1.0) == 250
    with pytest.raises(ValueError):
        g.index_of(1.001)
    # uneven last step
    g2 = TimeGrid(0.0, 1.0, 0.3)
    np.testing.assert_allclose(g2.nodes, [0, 0.3, 0.6, 0.9, 1.0])
    with pytest.raises(ConfigError):
        TimeGrid(0.0, 1.0, 0.0)


def test_constant_path_when_deterministic_and_still():
    grid = TimeGrid(0.0, 2.0, 0.01)
    path = simulate_factors([CirParams(0.0, 0.37, 0.0, 0.03)] * 3, grid, SEED, 0)
    assert np.all(path.values == 0.03)


def test_low_regime_without_noise_stays_at_level():
    p = CirParams(0.9, 0.001, 0.0, 0.001)
    path = simulate_factors([p] * 3, TimeGrid(0.0, 5.0, 1 / 250), SEED, 3)
    assert np.all(path.factor(1) == 0.001)


def test_full_truncation_keeps_values_nonnegative():
    # Feller condition badly violated: the auxiliary state goes negative often
    p = CirParams(0.1, 0.01, 1.5, 0.01)
    x = simulate_factor_batch([p] * 3, TimeGrid(0.0, 2.0, 0.01), SEED, range(200))
    assert np.all(x >= 0) and np.all(np.isfinite(x))
    assert (x == 0).mean() > 0.05


def test_non_finite_draw_is_a_fault():
    z = np.zeros((1, 3, 1))
    z[0, 1, 0] = np.inf
    with pytest.raises(SimulationFault), np.errstate(invalid="ignore"):
        euler_paths([HIGH], np.full(3, 0.01), z)


def test_path_reproducible_regardless_of_batch():
    grid = TimeGrid(0.0, 1.0, 1 / 250)
    alone = simulate_factors([HIGH] * 3, grid, SEED, 17).values
    batch = simulate_factor_batch([HIGH] * 3, grid, SEED, [3, 17, 99])
    assert np.array_equal(alone, batch[1])
    other_seed = simulate_factors([HIGH] * 3, grid, SEED + 1, 17).values
    assert not np.array_equal(alone, other_seed)


def test_substreams_independent_of_purpose():
    a = rng.uniforms(SEED, [0, 1], rng.DEFAULT_TIME, 4)
    b = rng.uniforms(SEED, [0, 1], rng.REFERENCE_TIME, 4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a[1], rng.uniforms(SEED, [1], rng.DEFAULT_TIME, 4)[0])


def test_medium_mean_at_five_years_matches_closed_form():
    p = FactorRegime.MEDIUM.params
    # start away from the long-run level so the mean actually moves
    p = CirParams(p.zeta, p.mu, p.sigma, 0.06)
    x = simulate_factor_batch([p] * 3, TimeGrid(0.0, 5.0, 1 / 250), SEED, range(100_000 // 3 + 1))
    xt = x[:, -1, :].ravel()[:100_000]
    mean, var = cir_moments(p, 5.0)
    assert abs(xt.mean() - mean) <= 3 * xt.std(ddof=1) / math.sqrt(xt.size)


def test_moments_trivial_cases():
    assert cir_moments(HIGH, 0.0) == (HIGH.x0, 0.0)
    p = CirParams(0.7, 0.03, 0.0, 0.01)
    for t in (0.5, 2.0, 9.0):
        assert cir_moments(p, t)[1] == 0.0
    with pytest.raises(ValueError):
        cir_moments(HIGH, -1.0)


def test_medium_moments_at_one_year_match_exact_transition_sampling():
    # 4e6 draws from the exact noncentral chi-square transition (seeded numpy
    # generator, independent of the engine): mean 0.02000039729 (se 5.0e-6),
    # variance 9.9756956e-05.
    mean, var = cir_moments(FactorRegime.MEDIUM.params, 1.0)
    assert abs(mean - 0.02000039729298327) < 3 * 4.99e-6
    assert abs(var - 9.975695603772629e-05) / var < 2e-3


def test_transform_trivial_cases():
    assert affine_transform(HIGH, 0.02, 1.3, 1.3, 0.07) == pytest.approx(1.0, abs=1e-15)
    absorbing = CirParams(0.4, 0.0, 0.3, 0.0)
    assert affine_transform(absorbing, 0.03, 0.0, 4.0, 0.0) == pytest.approx(math.exp(-0.12), rel=1e-13)


@given(
    zeta=st.floats(0.01, 3.0), mu=st.floats(0.0, 0.2), x=st.floats(0.0, 0.3),
    shift=st.floats(0.0, 0.1), t=st.floats(0.0, 3.0), tau=st.floats(0.0, 10.0),
)
def test_transform_deterministic_branch_matches_ode(zeta, mu, x, shift, t, tau):
    p = CirParams(zeta, mu, 0.0, x)
    h = t + tau
    expected = math.exp(-shift * tau - mu * tau - (x - mu) * (1 - math.exp(-zeta * tau)) / zeta)
    assert float(affine_transform(p, shift, t, h, x)) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_transform_argument_errors():
    with pytest.raises(ValueError):
        affine_transform(HIGH, 0.0, 2.0, 1.0, 0.05)
    with pytest.raises(ValueError):
        affine_transform(HIGH, -0.1, 0.0, 1.0, 0.05)
    with pytest.raises(ValueError):
        affine_transform(HIGH, 0.0, 0.0, 1.0, -0.05)


@given(params_st, st.floats(0.0, 0.1), st.floats(0.0, 0.3))
def test_transform_monotone_and_bounded(p, shift, x):
    taus = np.linspace(0.0, 10.0, 41)
    vals = np.array([float(affine_transform(p, shift, 0.0, h, x)) for h in taus])
    assert np.all(vals <= 1.0 + 1e-15) and np.all(vals > 0)
    assert np.all(np.diff(vals) <= 1e-15)
    assert float(affine_transform(p, shift, 0.0, 3.0, x + 0.01)) <= float(affine_transform(p, shift, 0.0, 3.0, x)) + 1e-15
    assert float(affine_transform(p, shift + 0.01, 0.0, 3.0, x)) <= float(affine_transform(p, shift, 0.0, 3.0, x)) + 1e-15


@given(params_st, st.floats(0.05, 8.0))
def test_riccati_derivatives_match_finite_differences(p, tau):
    h = 1e-6
    A, B, dA, dB = riccati_coefficients(p, tau)
    Ap, Bp, _, _ = riccati_coefficients(p, tau + h)
    Am, Bm, _, _ = riccati_coefficients(p, tau - h)
    assert float(dB) == pytest.approx(float((Bp - Bm) / (2 * h)), rel=1e-5, abs=1e-8)
    assert float(dA) == pytest.approx(float((Ap - Am) / (2 * h)), rel=1e-5, abs=1e-8)
    phi, dphi = affine_transform_dt(p, 0.01, tau, p.x0)
    assert float(phi) == pytest.approx(float(affine_transform(p, 0.01, 0.0, tau, p.x0)), rel=1e-14)


@pytest.mark.parametrize("regime", REGIMES, ids=lambda r: r.name.lower())
def test_transform_matches_monte_carlo(regime):
    p = regime.params
    grid = TimeGrid(0.0, 5.0, 1 / 250)
    x = simulate_factor_batch([p] * 3, grid, SEED, range(10_000))[:, :, 0]
    integral = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x[:, :-1] * grid.dt, axis=1)], axis=1)
    shift = 0.01
    for h in (1.0, 3.0, 5.0):
        k = grid.index_of(h)
        sample = np.exp(-shift * h - integral[:, k])
        se = sample.std(ddof=1) / math.sqrt(sample.size)
        exact = float(affine_transform(p, shift, 0.0, h, p.x0))
        # the low regime is nearly deterministic; allow for float noise in the se
        assert abs(sample.mean() - exact) <= 3 * se + 1e-12
