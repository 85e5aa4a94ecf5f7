"""Bilateral margin account with thresholds, minimum transfer amount and haircut.

Collateral ``C`` is held by the investor when positive (posted by the
counterparty) and by the counterparty when negative. It changes only at
margin-call dates and is left-continuous: the value in force on
``(t_i, t_{i+1}]`` is the one set at ``t_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, MarginStateError

HAIRCUT_CONVENTIONS = ("market", "effective")


@dataclass(frozen=True)
class MarginAgreement:
    """Terms of the margin agreement.

    Parameters
    ----------
    gamma_cpty : counterparty threshold, ``>= 0``; ``math.inf`` means no
        collateral is ever called from the counterparty.
    gamma_inv : investor threshold, ``<= 0``; ``-math.inf`` disables calls on
        the investor.
    mta : minimum transfer amount.
    call_times : margin-call dates in ``(0, T)``. ``None`` means every interior
        node of the simulation grid.
    delta : margin period of risk in years.
    haircut : ``h`` in ``[0, 1)``; the valuation percentage is ``1 - h``.
    haircut_convention : ``"market"`` when the recursion tracks the market
        value of the posted collateral (so close-out uses ``(1 - h) C``),
        ``"effective"`` when it already tracks the credit support.
    """

    gamma_cpty: float = math.inf
    gamma_inv: float = -math.inf
    mta: float = 0.0
    call_times: tuple[float, ...] | None = None
    delta: float = 0.0
    haircut: float = 0.0
    haircut_convention: str = "market"

    def __post_init__(self):
        if math.isnan(self.gamma_cpty) or self.gamma_cpty < 0:
            raise ConfigError("must be >= 0", "gamma_cpty")
        if math.isnan(self.gamma_inv) or self.gamma_inv > 0:
            raise ConfigError("must be <= 0", "gamma_inv")
        if not (math.isfinite(self.mta) and self.mta >= 0):
            raise ConfigError("must be a finite number >= 0", "mta")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ConfigError("must be a finite number >= 0", "delta")
        if not (0.0 <= self.haircut < 1.0):
            raise ConfigError("haircut must lie in [0, 1)", "haircut")
        if self.haircut_convention not in HAIRCUT_CONVENTIONS:
            raise ConfigError(f"expected one of {HAIRCUT_CONVENTIONS}", "haircut_convention")
        if self.call_times is not None:
            ct = tuple(float(t) for t in self.call_times)
            if any(not (t > 0 and math.isfinite(t)) for t in ct):
                raise ConfigError("call times must be positive and finite", "call_times")
            if any(b <= a for a, b in zip(ct, ct[1:])):
                raise ConfigError("call times must be strictly increasing", "call_times")
            object.__setattr__(self, "call_times", ct)

    @property
    def uncollateralized(self) -> bool:
        return math.isinf(self.gamma_cpty) and math.isinf(self.gamma_inv)

    def call_nodes(self, nodes: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Indices of the grid nodes at which margin calls take place.

        An explicit call time off the grid is executed at the last node before
        it. Call times must lie strictly inside the grid's span and map to
        distinct nodes.
        """
        nodes = np.asarray(nodes)
        if self.call_times is None:
            return np.arange(1, nodes.size - 1)
        ct = np.asarray(self.call_times)
        if ct.size and (ct[-1] >= nodes[-1] - tol or ct[0] <= nodes[0] + tol):
            raise ConfigError("call times must lie strictly inside the simulated horizon", "call_times")
        idx = np.searchsorted(nodes, ct + tol, side="right") - 1
        if np.any(np.diff(idx) <= 0):
            raise ConfigError("call times closer than the grid step", "call_times")
        return idx


@dataclass(frozen=True)
class MarginState:
    """History of the margin account on one path.

    ``times[j]`` is the j-th executed call and ``values[j]`` the collateral
    set there. ``collateral`` is the value currently in force.
    """

    collateral: float = 0.0
    last_update: float = 0.0
    frozen_at: float | None = None
    times: tuple[float, ...] = field(default=(), repr=False)
    values: tuple[float, ...] = field(default=(), repr=False)


def margin_increment(s, c, agreement: MarginAgreement):
    """Collateral change at a call given exposure ``s`` and current collateral ``c``.

    Vectorised over arrays. At most one gate can open because
    ``gamma_inv <= gamma_cpty``.
    """
    up = s - agreement.gamma_cpty - c
    down = s - agreement.gamma_inv - c
    # infinite thresholds give +-inf here; the gates then stay shut
    return np.where(up > agreement.mta, up, np.where(down < -agreement.mta, down, 0.0))


def margin_level(s, c, agreement: MarginAgreement):
    """Collateral after a call: ``s - gamma`` on the triggered side, else ``c``.

    Same gates as :func:`margin_increment`, but the new level is set directly
    so it equals ``s - gamma`` without rounding through ``c + dc``.
    """
    up = s - agreement.gamma_cpty - c
    down = s - agreement.gamma_inv - c
    return np.where(up > agreement.mta, s - agreement.gamma_cpty, np.where(down < -agreement.mta, s - agreement.gamma_inv, c))


def margin_update(state: MarginState, agreement: MarginAgreement, t_i: float, s: float) -> MarginState:
    """Apply the call at ``t_i`` with clean mark-to-market ``s``."""
    if state.frozen_at is not None:
        raise MarginStateError(f"margin account frozen at {state.frozen_at}; no calls allowed")
    if state.times and t_i <= state.last_update:
        raise MarginStateError("margin calls must be made in increasing time order")
    c = float(margin_level(s, state.collateral, agreement))
    return replace(state, collateral=c, last_update=t_i, times=state.times + (t_i,), values=state.values + (c,))


def freeze(state: MarginState, tau_hat: float) -> MarginState:
    """Stop the account at the first default of a trading party."""
    if state.frozen_at is not None:
        raise MarginStateError("margin account already frozen")
    return replace(state, frozen_at=tau_hat)


def collateral_at(state: MarginState, agreement: MarginAgreement, t: float, tau_hat: float = math.inf) -> float:
    """Collateral in force at ``t`` as replayed from the account history.

    Before ``tau_hat`` the value is the one set at the last call strictly
    before ``t``. On ``(tau_hat, tau_hat + delta)`` the account is frozen at
    the value set at the last call up to ``tau_hat``. After that it has been
    settled and 0 is returned.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    times = np.asarray(state.times, dtype=float)
    if t <= tau_hat:
        j = int(np.searchsorted(times, t, side="left")) - 1
    elif t < tau_hat + agreement.delta:
        j = int(np.searchsorted(times, tau_hat, side="right")) - 1
    else:
        return 0.0
    return float(state.values[j]) if j >= 0 else 0.0


def effective_collateral(c, agreement: MarginAgreement):
    """Credit support usable at close-out."""
    if agreement.haircut >= 1.0:
        raise ConfigError("haircut must be < 1", "haircut")
    if agreement.haircut_convention == "effective" or agreement.haircut == 0.0:
        return c
    return (1.0 - agreement.haircut) * c


def required_posting(c_effective, agreement: MarginAgreement):
    """Market value to post so that the effective support equals ``c_effective``."""
    if agreement.haircut >= 1.0:
        raise ConfigError("haircut must be < 1", "haircut")
    return c_effective / (1.0 - agreement.haircut)


def collateral_paths(s_calls: np.ndarray, agreement: MarginAgreement, c0=0.0) -> np.ndarray:
    """Run the margin recursion on a batch of paths.

    Parameters
    ----------
    s_calls : (n, n_calls) clean MtM at each call date
    c0 : collateral in force before the first call, scalar or (n,)

    Returns
    -------
    (n, n_calls) collateral set at each call.
    """
    n, m = s_calls.shape
    out = np.empty((n, m))
    c = np.broadcast_to(np.asarray(c0, dtype=float), (n,)).copy()
    if agreement.uncollateralized:
        out[:] = c[:, None]
        return out
    for j in range(m):
        c = margin_level(s_calls[:, j], c, agreement)
        out[:, j] = c
    return out


def collateral_before(c_after: np.ndarray, call_nodes: np.ndarray, k: np.ndarray, c0=0.0) -> np.ndarray:
    """Collateral in force on ``(t_k, t_{k+1}]`` for each path.

    That is the value set at the last call node ``<= k``; ``c0`` if none.
    """
    j = np.searchsorted(call_nodes, k, side="right") - 1
    rows = np.arange(c_after.shape[0])
    c0 = np.broadcast_to(np.asarray(c0, dtype=float), (c_after.shape[0],))
    if c_after.shape[1] == 0:
        return c0.copy()
    return np.where(j >= 0, c_after[rows, np.maximum(j, 0)], c0)
