from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdsxva import rng
from cdsxva.cds import (
    CleanCurve,
    CleanPricer,
    ContractSpec,
    build_clean_curve,
    clean_price,
    fair_spread,
    protection_leg,
    quad_intervals,
    risky_annuity,
    upfront_convert,
)
from cdsxva.config import RunConfig
from cdsxva.copula import invert_hazard
from cdsxva.errors import ConfigError, PricingError
from cdsxva.exposure import clean_flatness
from cdsxva.factors import TimeGrid, simulate_factor_batch

from conftest import HIGH, SEED, const_params

SPEC = ContractSpec(maturity=5.0, lgd=0.6)

# textbook bond-price form of the high-regime survival curve, integrated with
# adaptive scipy quadrature (see the oracle script kept with the notes)
HIGH_FAIR_SPREAD = 0.028994581670961257
HIGH_RDV01 = 4.4362021960038955
HIGH_PL = 0.12862582688093263


def _flat(lam, spec=SPEC, t=0.0):
    return build_clean_curve(const_params(0.0), lam, spec, t=t)


def test_contract_validation():
    for kw, path in [
        (dict(maturity=0.0), "maturity"),
        (dict(lgd=1.2), "lgd"),
        (dict(recovery_cpty=-0.1), "recovery_cpty"),
        (dict(recovery_inv=1.5), "recovery_inv"),
        (dict(rate=math.nan), "rate"),
    ]:
        with pytest.raises(ConfigError) as e:
            ContractSpec(**kw)
        assert e.value.path == path


def test_curve_invariants():
    c = _flat(0.05)
    assert c.survival[0] == 1.0
    assert np.all(np.diff(c.survival) <= 0)
    with pytest.raises(ValueError):
        CleanCurve(0.0, 0.0, np.array([0.0, 1.0]), np.array([1.0, 1.1]), np.ones(2))
    with pytest.raises(ValueError):
        CleanCurve(0.0, 0.0, np.array([0.0, 1.0]), np.array([0.9, 0.8]), np.ones(2))
    with pytest.raises(ValueError):
        CleanCurve(0.0, 0.0, np.array([0.0, 1.0]), np.array([1.0, 0.8]), np.array([1.0, 0.0]))


def test_quad_intervals_even_and_monthly():
    assert quad_intervals(5.0) == 60
    assert quad_intervals(0.01) == 2
    assert all(quad_intervals(T) % 2 == 0 for T in (0.3, 1.0, 2.7, 10.0))


def test_no_default_risk():
    c = _flat(0.0)
    assert protection_leg(c, SPEC) == 0.0
    assert risky_annuity(c, SPEC) == pytest.approx(5.0, rel=1e-15)
    assert fair_spread(c, SPEC) == 0.0


def test_constant_hazard_closed_forms():
    lam = 0.05
    c = _flat(lam)
    assert protection_leg(c, SPEC) == pytest.approx(0.6 * (1 - math.exp(-lam * 5)), rel=1e-14)
    # Simpson on monthly nodes is accurate to ~1e-9 on an exponential
    assert risky_annuity(c, SPEC) == pytest.approx((1 - math.exp(-lam * 5)) / lam, rel=1e-8)
    assert fair_spread(c, SPEC) == pytest.approx(0.03, rel=1e-8)


def test_constant_hazard_price_at_off_market_spread():
    c = _flat(0.05)
    expected = (0.03 - 0.02) * (1 - math.exp(-0.25)) / 0.05
    assert clean_price(c, SPEC, 0.02) == pytest.approx(expected, rel=1e-8)
    assert clean_price(c, SPEC.with_spread(0.02)) == clean_price(c, SPEC, 0.02)
    with pytest.raises(ValueError):
        clean_price(c, SPEC)


def test_positive_rate_protection_leg_matches_direct_integral():
    spec = ContractSpec(rate=0.03)
    lam = 0.04
    c = _flat(lam, spec)
    # int_0^T lgd lam e^{-(lam+r)u} du
    direct = 0.6 * lam * (1 - math.exp(-(lam + 0.03) * 5)) / (lam + 0.03)
    assert protection_leg(c, spec) == pytest.approx(direct, rel=1e-8)


def test_price_is_zero_at_fair_spread_and_at_maturity():
    c = build_clean_curve(HIGH, 0.0, SPEC)
    assert clean_price(c, SPEC, fair_spread(c, SPEC)) == pytest.approx(0.0, abs=1e-16)
    end = build_clean_curve(HIGH, 0.0, SPEC, t=5.0)
    assert clean_price(end, SPEC, 0.05) == 0.0


def test_high_regime_matches_quadrature_oracle():
    c = build_clean_curve(HIGH, 0.0, SPEC)
    assert fair_spread(c, SPEC) == pytest.approx(HIGH_FAIR_SPREAD, rel=1e-8)
    assert risky_annuity(c, SPEC) == pytest.approx(HIGH_RDV01, rel=1e-8)
    assert protection_leg(c, SPEC) == pytest.approx(HIGH_PL, rel=1e-8)


def test_refinement_changes_legs_by_less_than_tolerance():
    coarse = build_clean_curve(HIGH, 0.0, SPEC)
    fine = build_clean_curve(HIGH, 0.0, SPEC, intervals=2 * coarse.nodes.size - 2)
    for leg in (protection_leg, risky_annuity):
        assert leg(fine, SPEC) == pytest.approx(leg(coarse, SPEC), rel=1e-6)


def test_degenerate_curve_has_no_fair_spread():
    c = CleanCurve(0.0, 0.0, np.array([0.0, 2.5, 5.0]), np.array([1.0, 1.0, 1.0]), np.ones(3))
    object.__setattr__(c, "survival", np.zeros(3))
    with pytest.raises(PricingError):
        fair_spread(c, SPEC)


@given(st.floats(0.0, 0.2), st.floats(0.0, 0.3), st.floats(0.0, 4.9), st.floats(0.0, 0.1))
def test_leg_bounds_and_price_slope(a1, x, t, k):
    c = build_clean_curve(HIGH, a1, SPEC, t=t, x1=x)
    pl, rdv = protection_leg(c, SPEC), risky_annuity(c, SPEC)
    assert -1e-15 <= pl <= SPEC.lgd
    assert 0 < rdv <= (5.0 - t) * (1 + 1e-12)
    assert fair_spread(c, SPEC) >= 0
    assert clean_price(c, SPEC, k) - clean_price(c, SPEC, k + 0.01) == pytest.approx(0.01 * rdv, rel=1e-9)


def test_upfront_examples():
    # (0.0153 - 0.01) * 4.69 = 0.024857
    assert upfront_convert("to_upfront", 0.0153, 0.01, 4.69) == pytest.approx(0.024857, rel=1e-14)
    assert upfront_convert("to_upfront", 0.01, 0.01, 4.69) == 0.0
    with pytest.raises(ValueError):
        upfront_convert("to_upfront", 0.02, 0.01, 0.0)
    with pytest.raises(ValueError):
        upfront_convert("sideways", 0.02, 0.01, 1.0)


@given(st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.01, 10.0))
def test_upfront_round_trip(kappa, fixed, dv01):
    up = upfront_convert("to_upfront", kappa, fixed, dv01)
    back = upfront_convert("to_spread", up, fixed, dv01)
    assert back == pytest.approx(kappa, rel=4 * np.finfo(float).eps, abs=4 * np.finfo(float).eps)


def test_legs_match_monte_carlo():
    grid = TimeGrid(0.0, 5.0, 1 / 250)
    idx = np.arange(10_000)
    x = simulate_factor_batch([HIGH] * 3, grid, SEED, idx)
    u = rng.uniforms(SEED, idx, rng.REFERENCE_TIME, 1)[:, 0]
    tau, k = invert_hazard(x[:, :-1, 0], grid.nodes, 5.0, u)
    pl = 0.6 * (k >= 0)
    rdv = np.minimum(tau, 5.0)
    c = build_clean_curve(HIGH, 0.0, SPEC)
    for sample, exact in ((pl, protection_leg(c, SPEC)), (rdv, risky_annuity(c, SPEC))):
        assert abs(sample.mean() - exact) <= 3 * sample.std(ddof=1) / math.sqrt(sample.size)


def test_discounted_clean_cash_flow_is_flat():
    est = clean_flatness(RunConfig(seed=SEED), n_paths=10_000)
    assert abs(est.value) <= 3 * est.se


def test_pricer_matches_curve_functions():
    kappa = 0.025
    pricer = CleanPricer(HIGH, 0.01, SPEC, kappa)
    t = np.array([0.0, 1.3, 4.99, 5.0])
    x = np.array([0.05, 0.2, 0.0, 0.1])
    got = pricer.price(t, x)
    for ti, xi, g in zip(t, x, got):
        c = build_clean_curve(HIGH, 0.01, SPEC, t=ti, x1=xi)
        assert g == pytest.approx(clean_price(c, SPEC, kappa), rel=1e-12, abs=1e-16)


def test_node_table_interpolation_error():
    pricer = CleanPricer(HIGH, 0.0, SPEC, HIGH_FAIR_SPREAD)
    grid = TimeGrid(0.0, 5.0, 0.25)
    table = pricer.node_table(grid)
    g = np.random.default_rng(3)
    k = g.integers(0, grid.nodes.size, 2000)
    x = g.uniform(0.0, 1.5, 2000)  # includes values above x_max
    exact = pricer.price(grid.nodes[k], x)
    np.testing.assert_allclose(table.lookup(k, x), exact, rtol=0, atol=1e-9)
    np.testing.assert_array_equal(table.lookup(k, np.zeros(2000)), pricer.price(grid.nodes[k], np.zeros(2000)))
