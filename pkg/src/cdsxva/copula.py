"""Common-shock default model for the reference name (1), counterparty (2) and investor (3).

Seven default groups can trigger the first default:

    1: name 1 alone      4: names 2 and 3 together
    2: name 2 alone      5: names 1 and 2 together
    3: name 3 alone      6: names 1 and 3 together
                         7: all three together

Group intensities l^1..l^3 are affine in the factors and l^4..l^7 are
constant shocks, chosen so that the marginal intensity of name i is exactly
``a_i + X^i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .factors import CirParams, FactorPath, affine_transform

GROUP_NAMES: dict[int, frozenset[int]] = {
    1: frozenset({1}),
    2: frozenset({2}),
    3: frozenset({3}),
    4: frozenset({2, 3}),
    5: frozenset({1, 2}),
    6: frozenset({1, 3}),
    7: frozenset({1, 2, 3}),
}
_NAMES_GROUP = {v: k for k, v in GROUP_NAMES.items()}

# groups in which the named party defaults
REFERENCE_GROUPS = (1, 5, 6, 7)
COUNTERPARTY_GROUPS = (2, 4, 5, 7)
INVESTOR_GROUPS = (3, 4, 6, 7)


@dataclass(frozen=True)
class ShockStructure:
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    c4: float = 0.0
    c5: float = 0.0
    c6: float = 0.0
    c7: float = 0.0

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "c4", "c5", "c6", "c7"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"must be a finite number >= 0, got {v!r}", name)
        # small slack so that round-tripped decimal inputs are not rejected
        eps = 1e-15
        if self.a1 + eps < self.c5 + self.c6 + self.c7:
            raise ConfigError("a1 must be >= c5 + c6 + c7", "a1")
        if self.a2 + eps < self.c4 + self.c5 + self.c7:
            raise ConfigError("a2 must be >= c4 + c5 + c7", "a2")
        if self.a3 + eps < self.c4 + self.c6 + self.c7:
            raise ConfigError("a3 must be >= c4 + c6 + c7", "a3")

    @property
    def a(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])

    @property
    def idiosyncratic_base(self) -> np.ndarray:
        """Constant parts of l^1, l^2, l^3."""
        return np.array(
            [
                max(self.a1 - (self.c5 + self.c6 + self.c7), 0.0),
                max(self.a2 - (self.c4 + self.c5 + self.c7), 0.0),
                max(self.a3 - (self.c4 + self.c6 + self.c7), 0.0),
            ]
        )

    @property
    def shocks(self) -> np.ndarray:
        return np.array([self.c4, self.c5, self.c6, self.c7])

    @property
    def total_constant(self) -> float:
        """Constant part of the first-to-default intensity l."""
        return self.a1 + self.a2 + self.a3 - self.c4 - self.c5 - self.c6 - 2 * self.c7


@dataclass(frozen=True)
class GroupIntensities:
    l: np.ndarray  # (..., 7)

    @property
    def total(self) -> np.ndarray:
        return self.l.sum(axis=-1)

    def marginal(self, name: int) -> np.ndarray:
        """q^name: sum of l^i over groups containing ``name``."""
        cols = [g - 1 for g, names in GROUP_NAMES.items() if name in names]
        return self.l[..., cols].sum(axis=-1)


@dataclass(frozen=True)
class FirstDefault:
    time: float  # math.inf when nothing defaults before the horizon
    group: int | None

    def __post_init__(self):
        if (self.group is None) != math.isinf(self.time):
            raise ValueError("group must be set exactly when a default occurs")


def group_intensity_array(shocks: ShockStructure, x: np.ndarray) -> np.ndarray:
    """l^1..l^7 for factor values ``x`` of shape (..., 3); returns (..., 7)."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape[:-1] + (7,))
    out[..., :3] = shocks.idiosyncratic_base + x
    out[..., 3:] = shocks.shocks
    return out


def group_intensities(shocks: ShockStructure, x: Sequence[float]) -> GroupIntensities:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("factor values must be >= 0")
    return GroupIntensities(group_intensity_array(shocks, x))


def classify_group(t1: float, t2: float, t3: float) -> int | None:
    """Group of the first default given the three default times (``None`` if all infinite)."""
    times = (t1, t2, t3)
    first = min(times)
    if math.isinf(first):
        return None
    names = frozenset(i + 1 for i, t in enumerate(times) if t == first)
    return _NAMES_GROUP[names]


def _last_interval(nodes: np.ndarray, horizon: float) -> int:
    if horizon > nodes[-1] + 1e-12:
        raise ValueError("horizon beyond the end of the simulated path")
    last = int(np.searchsorted(nodes, horizon, side="left"))
    return max(1, min(last, nodes.size - 1))


def _invert(rate, nodes, horizon, u1):
    """Solve int_0^tau rate = -log(u1) with ``rate`` constant on each grid interval."""
    n, last = rate.shape
    ends = nodes[1 : last + 1].copy()
    ends[-1] = min(ends[-1], horizon)
    dt = ends - nodes[:last]
    hazard = np.zeros((n, last + 1))
    np.cumsum(rate * dt, axis=1, out=hazard[:, 1:])
    with np.errstate(divide="ignore"):
        target = -np.log(u1)
    hit = hazard[:, 1:] >= target[:, None]
    defaulted = hit.any(axis=1)
    k = np.where(defaulted, hit.argmax(axis=1), -1)
    tau = np.full(n, np.inf)
    rows = np.nonzero(defaulted)[0]
    if rows.size:
        kk = k[rows]
        r = rate[rows, kk]
        step = np.divide(target[rows] - hazard[rows, kk], r, out=np.zeros(rows.size), where=r > 0)
        tau[rows] = np.minimum(nodes[kk] + step, ends[kk])
    return tau, k, target, hazard


def invert_hazard(rate: np.ndarray, nodes: np.ndarray, horizon: float, u1: np.ndarray):
    """Default times for piecewise-constant hazards.

    Column ``k`` of ``rate`` is the hazard on ``(t_k, t_{k+1}]``. Returns
    ``(tau, k)`` with ``tau = inf`` and ``k = -1`` when no default occurs
    before ``horizon``.
    """
    last = _last_interval(nodes, horizon)
    tau, k, _, _ = _invert(np.asarray(rate)[:, :last], nodes, horizon, u1)
    return tau, k


def sample_first_defaults(
    x: np.ndarray,
    nodes: np.ndarray,
    shocks: ShockStructure,
    horizon: float,
    u1: np.ndarray,
    u2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised first-default sampler.

    Intensities are held at their left-node values on each grid interval. The
    default time solves ``int_0^tau l = -log(u1)``; the group is then drawn
    with probabilities ``l^i / l`` at the default interval using ``u2``.

    Parameters
    ----------
    x : (n, n_nodes, 3) factor paths
    nodes : (n_nodes,) grid times; ``horizon`` must not exceed ``nodes[-1]``

    Returns
    -------
    tau : (n,) default times, ``inf`` when no default up to ``horizon``
    group : (n,) int, 0 when no default
    k : (n,) index of the left node of the default interval, -1 when no default
    """
    const = shocks.idiosyncratic_base.sum() + shocks.shocks.sum()
    last = _last_interval(nodes, horizon)
    total = const + x[:, :last, :].sum(axis=-1)
    tau, k, _, _ = _invert(total, nodes, horizon, u1)
    defaulted = k >= 0
    n = x.shape[0]
    group = np.zeros(n, dtype=np.int64)
    rows = np.nonzero(defaulted)[0]
    if rows.size:
        kk = k[rows]
        cum = np.cumsum(group_intensity_array(shocks, x[rows, kk, :]), axis=1)
        group[rows] = 1 + np.argmax(u2[rows, None] * cum[:, -1:] < cum, axis=1)
    return tau, group, k


def sample_first_default(path: FactorPath, shocks: ShockStructure, horizon: float, uniforms) -> FirstDefault:
    u1, u2 = uniforms
    tau, group, _ = sample_first_defaults(
        path.values[None], path.grid.nodes, shocks, horizon, np.array([u1]), np.array([u2])
    )
    if group[0] == 0:
        return FirstDefault(math.inf, None)
    return FirstDefault(float(tau[0]), int(group[0]))


SURVIVAL_KINDS = ("marginal-1", "marginal-2", "marginal-3", "first-to-default")


def survival(
    shocks: ShockStructure,
    params: Sequence[CirParams],
    kind: str,
    t: float,
    horizon: float,
    x: Sequence[float],
) -> float:
    """Closed-form survival probability from ``t`` to ``horizon`` given X_t = x."""
    if horizon < t:
        raise ValueError("horizon must be >= t")
    x = np.asarray(x, dtype=float)
    if kind.startswith("marginal-"):
        i = int(kind[-1])
        if i not in (1, 2, 3):
            raise ValueError(f"unknown survival kind {kind!r}")
        return float(affine_transform(params[i - 1], shocks.a[i - 1], t, horizon, x[i - 1]))
    if kind != "first-to-default":
        raise ValueError(f"unknown survival kind {kind!r}")
    out = math.exp(-shocks.total_constant * (horizon - t))
    for i in range(3):
        out *= float(affine_transform(params[i], 0.0, t, horizon, x[i]))
    return out
