"""CIR factor processes: simulation, moments and the exponential-affine transform.

Each factor follows

    dX_t = zeta (mu - X_t) dt + sigma sqrt(X_t) dW_t,

with the three factors driven by independent Brownian motions. Paths are
generated with the full-truncation Euler scheme; survival-type expectations
use the closed-form Riccati solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import rng
from .errors import ConfigError, SimulationFault

DEFAULT_STEP = 1.0 / 250.0


@dataclass(frozen=True)
class CirParams:
    """Mean-reversion speed, long-run level, volatility and initial value."""

    zeta: float
    mu: float
    sigma: float
    x0: float

    def __post_init__(self):
        for name in ("zeta", "mu", "sigma", "x0"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"must be a finite number >= 0, got {v!r}", name)


class FactorRegime(Enum):
    LOW = CirParams(0.9, 0.001, 0.01, 0.001)
    MEDIUM = CirParams(0.8, 0.02, 0.1, 0.02)
    HIGH = CirParams(0.5, 0.05, 0.2, 0.05)

    @property
    def params(self) -> CirParams:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "FactorRegime":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown regime {name!r}; expected low, medium or high") from None


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[start, end]``.

    The last interval is shortened when ``end - start`` is not a multiple of
    ``step`` so that ``end`` is always a node.
    """

    start: float
    end: float
    step: float
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ConfigError("grid step must be positive", "step")
        if not self.end > self.start:
            raise ConfigError("grid end must exceed start", "end")
        n = int(math.ceil((self.end - self.start) / self.step - 1e-9))
        nodes = self.start + self.step * np.arange(n + 1, dtype=float)
        nodes[-1] = self.end
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the node equal to ``t``; ``ValueError`` if ``t`` is off-grid."""
        k = int(np.searchsorted(self.nodes, t - tol))
        if k >= self.nodes.size or abs(self.nodes[k] - t) > tol:
            raise ValueError(f"time {t} is not a grid node")
        return k

    def sub_grid(self, k: int) -> "TimeGrid":
        """Grid with the same spacing starting at node ``k``."""
        return TimeGrid(float(self.nodes[k]), self.end, self.step)


@dataclass(frozen=True)
class FactorPath:
    grid: TimeGrid
    values: np.ndarray  # (n_nodes, 3)

    def factor(self, i: int) -> np.ndarray:
        """Values of factor ``i`` (1-based, as in X^1, X^2, X^3)."""
        return self.values[:, i - 1]


def _as_triplet(params) -> tuple[CirParams, ...]:
    params = tuple(params)
    if len(params) != 3:
        raise ConfigError("exactly three factor parameter sets are required")
    return params


def euler_paths(
    params: Sequence[CirParams],
    dt: np.ndarray,
    normals: np.ndarray,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Full-truncation Euler paths for a batch.

    Parameters
    ----------
    params : sequence of CirParams, one per factor
    dt : (n_steps,) step sizes
    normals : (n_paths, n_steps, n_factors) standard normal draws
    x0 : optional (n_paths, n_factors) starting values; defaults to each
        factor's ``x0``.

    Returns
    -------
    (n_paths, n_steps + 1, n_factors) array of non-negative factor values.
    """
    n_paths, n_steps, n_f = normals.shape
    zeta = np.array([p.zeta for p in params])
    mu = np.array([p.mu for p in params])
    sigma = np.array([p.sigma for p in params])
    out = np.empty((n_paths, n_steps + 1, n_f))
    if x0 is None:
        x = np.broadcast_to(np.array([p.x0 for p in params]), (n_paths, n_f)).copy()
    else:
        x = np.array(x0, dtype=float, copy=True).reshape(n_paths, n_f)
    out[:, 0] = x
    sqdt = np.sqrt(dt)
    # x is the auxiliary (possibly negative) state; only its positive part is reported
    for k in range(n_steps):
        xp = np.maximum(x, 0.0)
        x = x + zeta * (mu - xp) * dt[k] + sigma * np.sqrt(xp) * (sqdt[k] * normals[:, k])
        out[:, k + 1] = np.maximum(x, 0.0)
    if not np.isfinite(out).all():
        raise SimulationFault("non-finite factor value in Euler scheme")
    return out


def simulate_factor_batch(params, grid: TimeGrid, seed: int, path_indices) -> np.ndarray:
    """Joint factor paths for several path indices, ``(n, n_nodes, 3)``."""
    params = _as_triplet(params)
    z = rng.factor_normals(seed, path_indices, grid.n_steps, 3)
    return euler_paths(params, grid.dt, z)


def simulate_factors(params, grid: TimeGrid, seed: int, path_index: int) -> FactorPath:
    """One joint path of the three independent factors.

    The path is a pure function of ``(seed, path_index)``.
    """
    values = simulate_factor_batch(params, grid, seed, [path_index])[0]
    return FactorPath(grid, values)


def cir_moments(params: CirParams, t: float) -> tuple[float, float]:
    """Exact mean and variance of X_t given X_0 = x0."""
    if t < 0:
        raise ValueError("t must be >= 0")
    z, m, s, x0 = params.zeta, params.mu, params.sigma, params.x0
    if z == 0.0:
        return x0, s * s * x0 * t
    e = math.exp(-z * t)
    mean = m + (x0 - m) * e
    var = x0 * s * s / z * (e - e * e) + m * s * s / (2 * z) * (1 - e) ** 2
    return mean, var


def _log1p_ratio(x):
    """log(1 + x) / x, continuous at 0."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x + x * x / 3.0, np.log1p(safe) / safe)


def riccati_coefficients(params: CirParams, tau):
    """``A(tau), B(tau)`` with E[exp(-int_0^tau X)] = exp(A - B x).

    Also returns the tau-derivatives ``A'`` and ``B'``.
    """
    tau = np.asarray(tau, dtype=float)
    z, m, s = params.zeta, params.mu, params.sigma
    if s * s == 0.0:
        if z == 0.0:
            B = tau.copy()
        else:
            B = -np.expm1(-z * tau) / z
        A = -m * (tau - B)
    else:
        g = math.sqrt(z * z + 2 * s * s)
        p = g + z
        eps = 2 * s * s / p  # g - z without cancellation
        em1 = np.expm1(g * tau)
        B = 2 * em1 / (p * em1 + 2 * g)
        # A = (2 z m / s^2) log(2 g exp(p tau / 2) / den), rewritten so that the
        # small-sigma limit -m (tau - B) is reached without cancellation
        e = np.exp(-g * tau)
        l2 = _log1p_ratio(eps * e / p)
        bracket = (_log1p_ratio(eps / p) - l2) - np.expm1(-g * tau) * l2
        A = (4 * z * m / p) * (bracket / p - 0.5 * tau)
    dB = 1.0 - z * B - 0.5 * s * s * B * B
    dA = -z * m * B
    return A, B, dA, dB


def affine_transform(params: CirParams, shift: float, t: float, horizon: float, x) -> np.ndarray:
    """E[exp(-int_t^horizon (shift + X_s) ds) | X_t = x].

    ``x`` may be an array; the result has its shape.
    """
    if horizon < t:
        raise ValueError(f"horizon {horizon} precedes t {t}")
    if shift < 0:
        raise ValueError("shift must be >= 0")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("factor value must be >= 0")
    tau = horizon - t
    A, B, _, _ = riccati_coefficients(params, tau)
    return np.exp(A - B * x - shift * tau)


def affine_transform_dt(params: CirParams, shift: float, tau, x) -> tuple[np.ndarray, np.ndarray]:
    """Transform and its derivative with respect to the horizon.

    Returns ``(phi, dphi)`` where ``phi = E[exp(-int_0^tau (shift + X))]``.
    ``-dphi`` is the density-weighted expectation used for first-default
    integrals: ``E[exp(-int (shift+X)) (shift + X_tau)] = -dphi``.
    """
    A, B, dA, dB = riccati_coefficients(params, tau)
    x = np.asarray(x, dtype=float)
    phi = np.exp(A - B * x - shift * np.asarray(tau))
    return phi, phi * (dA - dB * x - shift)
