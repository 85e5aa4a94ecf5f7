"""Counterparty-risk-free CDS: legs, fair spread and pre-default price.

The reference name's survival curve seen from ``(t, X^1_t = x)`` is the
exponential-affine transform of its factor shifted by ``a1``. The premium is
paid continuously, the short rate is a deterministic constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, PricingError
from .factors import CirParams, TimeGrid, riccati_coefficients

DEFAULT_QUAD_STEP = 1.0 / 12.0


@dataclass(frozen=True)
class ContractSpec:
    """CDS terms per unit notional, seen from the protection buyer (the investor).

    ``spread=None`` means the contract is struck at the clean fair spread.
    """

    maturity: float = 5.0
    spread: float | None = None
    lgd: float = 0.6
    recovery_cpty: float = 0.4
    recovery_inv: float = 0.4
    rate: float = 0.0

    def __post_init__(self):
        if not (self.maturity > 0 and math.isfinite(self.maturity)):
            raise ConfigError("must be > 0", "maturity")
        if not 0.0 <= self.lgd <= 1.0:
            raise ConfigError("must lie in [0, 1]", "lgd")
        for name in ("recovery_cpty", "recovery_inv"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must lie in [0, 1]", name)
        if not math.isfinite(self.rate):
            raise ConfigError("must be finite", "rate")
        if self.spread is not None and not math.isfinite(self.spread):
            raise ConfigError("must be finite", "spread")

    def with_spread(self, spread: float | None) -> "ContractSpec":
        return replace(self, spread=spread)

    def discount(self, t, u):
        """Discount factor from ``u`` back to ``t``."""
        return np.exp(-self.rate * (np.asarray(u) - np.asarray(t)))

    def annuity_to(self, t):
        """int_0^t exp(-r u) du."""
        t = np.asarray(t, dtype=float)
        if self.rate == 0.0:
            return t
        return -np.expm1(-self.rate * t) / self.rate


def quad_intervals(maturity: float, step: float = DEFAULT_QUAD_STEP) -> int:
    """Even number of Simpson intervals covering ``[0, maturity]`` with spacing <= ``step``."""
    if step <= 0:
        raise ValueError("quadrature step must be positive")
    return max(2, 2 * math.ceil(maturity / (2 * step) - 1e-12))


def _simpson_weights(m: int) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


@dataclass(frozen=True)
class CleanCurve:
    """Survival and discount curves of the reference name from time ``t``."""

    t: float
    x1: float
    nodes: np.ndarray
    survival: np.ndarray
    discount: np.ndarray

    def __post_init__(self):
        if self.survival.size and abs(self.survival[0] - 1.0) > 1e-14:
            raise ValueError("survival must start at 1")
        if np.any(np.diff(self.survival) > 1e-15):
            raise ValueError("survival must be non-increasing")
        if np.any(self.discount <= 0):
            raise ValueError("discount factors must be positive")


def build_clean_curve(
    params1: CirParams,
    a1: float,
    spec: ContractSpec,
    t: float = 0.0,
    x1: float | None = None,
    quad_step: float = DEFAULT_QUAD_STEP,
    intervals: int | None = None,
) -> CleanCurve:
    if not 0.0 <= t <= spec.maturity:
        raise ValueError("t must lie in [0, maturity]")
    x1 = params1.x0 if x1 is None else float(x1)
    m = intervals if intervals is not None else quad_intervals(spec.maturity, quad_step)
    tau = (spec.maturity - t) * np.arange(m + 1) / m
    A, B, _, _ = riccati_coefficients(params1, tau)
    surv = np.exp(A - B * x1 - a1 * tau)
    return CleanCurve(t, x1, t + tau, surv, np.exp(-spec.rate * tau))


def risky_annuity(curve: CleanCurve, spec: ContractSpec) -> float:
    """RDV01_t = int_t^T D(t,u) P(t,u) du (Simpson on the curve nodes)."""
    m = curve.nodes.size - 1
    h = (spec.maturity - curve.t) / m
    return float(h * np.dot(_simpson_weights(m), curve.discount * curve.survival))


def protection_leg(curve: CleanCurve, spec: ContractSpec) -> float:
    """PL_t = lgd * int_t^T D(t,u) (-dP(t,u)).

    Integrated by parts, which makes the ``r = 0`` case exactly ``lgd (1 - P(t,T))``.
    """
    tail = curve.discount[-1] * curve.survival[-1]
    if spec.rate == 0.0:
        return float(spec.lgd * (1.0 - tail))
    return float(spec.lgd * (1.0 - tail - spec.rate * risky_annuity(curve, spec)))


def fair_spread(curve: CleanCurve, spec: ContractSpec) -> float:
    rdv01 = risky_annuity(curve, spec)
    if not rdv01 > 0:
        raise PricingError("risky annuity is zero; fair spread undefined")
    return protection_leg(curve, spec) / rdv01


def clean_price(curve: CleanCurve, spec: ContractSpec, spread: float | None = None) -> float:
    """Pre-default ex-dividend value PL - spread * RDV01 for the protection buyer."""
    k = spec.spread if spread is None else spread
    if k is None:
        raise ValueError("contract spread not set")
    return protection_leg(curve, spec) - k * risky_annuity(curve, spec)


def upfront_convert(direction: str, value: float, fixed_spread: float, dv01: float) -> float:
    """Convert between a par spread and an upfront payment.

    ``direction="to_upfront"`` maps a par spread to ``(spread - fixed) * dv01``;
    ``"to_spread"`` inverts it.
    """
    if not np.all(np.asarray(dv01) > 0):
        raise ValueError("dv01 must be positive")
    if direction == "to_upfront":
        return (value - fixed_spread) * dv01
    if direction == "to_spread":
        return value / dv01 + fixed_spread
    raise ValueError(f"unknown direction {direction!r}")


class CleanPricer:
    """Vectorised pre-default clean price ``S(t, x)`` for a fixed contract.

    ``price`` evaluates the closed form at arbitrary ``(t, x)`` pairs;
    ``node_table`` tabulates it on a time grid for fast path-wise lookup.
    """

    def __init__(self, params1: CirParams, a1: float, spec: ContractSpec, spread: float,
                 quad_step: float = DEFAULT_QUAD_STEP):
        self.params1 = params1
        self.a1 = float(a1)
        self.spec = spec
        self.spread = float(spread)
        self.m = quad_intervals(spec.maturity, quad_step)
        self._w = _simpson_weights(self.m)
        self._frac = np.arange(self.m + 1) / self.m

    def legs(self, t, x):
        """(PL, RDV01) at matching arrays ``t`` and ``x``."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        rem = np.maximum(self.spec.maturity - t, 0.0)
        tau = rem[..., None] * self._frac
        A, B, _, _ = riccati_coefficients(self.params1, tau)
        ds = np.exp(A - B * x[..., None] - (self.a1 + self.spec.rate) * tau)
        # row-wise sum rather than BLAS so a path's value does not depend on batch shape
        rdv01 = rem / self.m * np.sum(ds * self._w, axis=-1)
        tail = ds[..., -1]
        pl = self.spec.lgd * (1.0 - tail - self.spec.rate * rdv01)
        return pl, rdv01

    def price(self, t, x):
        pl, rdv01 = self.legs(t, x)
        return pl - self.spread * rdv01

    def node_table(self, grid: TimeGrid, x_max: float | None = None, n_x: int = 513) -> "NodePriceTable":
        return NodePriceTable(self, grid.nodes, x_max, n_x)


class NodePriceTable:
    """Cubic Hermite tables of ``S(t_k, .)`` on each grid node, with exact x-derivatives.

    Values above ``x_max`` fall back to the closed form.
    """

    def __init__(self, pricer: CleanPricer, nodes: np.ndarray, x_max: float | None = None, n_x: int = 513):
        p = pricer.params1
        if x_max is None:
            x_max = max(1.0, 10.0 * max(p.mu, p.x0))
        self.pricer = pricer
        self.nodes = np.asarray(nodes, dtype=float)
        self.x_max = float(x_max)
        self.h = self.x_max / (n_x - 1)
        xs = np.linspace(0.0, self.x_max, n_x)
        spec = pricer.spec
        kappa = pricer.spread
        self.f = np.empty((self.nodes.size, n_x))
        self.df = np.empty((self.nodes.size, n_x))
        for k, t in enumerate(self.nodes):
            rem = max(spec.maturity - t, 0.0)
            tau = rem * pricer._frac
            A, B, _, _ = riccati_coefficients(p, tau)
            ds = np.exp(A[None, :] - np.outer(xs, B) - (pricer.a1 + spec.rate) * tau)
            rdv01 = rem / pricer.m * np.sum(ds * pricer._w, axis=-1)
            d_rdv01 = rem / pricer.m * np.sum(-B * ds * pricer._w, axis=-1)
            pl = spec.lgd * (1.0 - ds[:, -1] - spec.rate * rdv01)
            d_pl = spec.lgd * (B[-1] * ds[:, -1] - spec.rate * d_rdv01)
            self.f[k] = pl - kappa * rdv01
            self.df[k] = d_pl - kappa * d_rdv01

    def lookup(self, k, x) -> np.ndarray:
        """S(t_k, x) for node indices ``k`` broadcast against ``x``."""
        x = np.asarray(x, dtype=float)
        k = np.broadcast_to(np.asarray(k), x.shape)
        u = x / self.h
        i = np.clip(np.floor(u).astype(np.int64), 0, self.f.shape[1] - 2)
        s = u - i
        s2 = s * s
        s1 = 1.0 - s
        out = (
            (1 + 2 * s) * s1 * s1 * self.f[k, i]
            + s * s1 * s1 * self.h * self.df[k, i]
            + s2 * (3 - 2 * s) * self.f[k, i + 1]
            - s2 * s1 * self.h * self.df[k, i + 1]
        )
        high = x > self.x_max
        if np.any(high):
            out = np.where(high, 0.0, out)
            out[high] = self.pricer.price(self.nodes[k[high]], x[high])
        return out

    def path_prices(self, x1: np.ndarray, k0: int = 0) -> np.ndarray:
        """S along paths ``x1`` of shape (n, n_nodes - k0) starting at node ``k0``."""
        ks = np.arange(k0, k0 + x1.shape[1])
        return self.lookup(ks[None, :], x1)
