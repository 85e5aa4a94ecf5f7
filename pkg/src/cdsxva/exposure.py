"""Close-out cash flows, exposures and valuation adjustments.

Sign convention: values are seen from the investor, who buys protection on
the reference name from the counterparty. At the first default ``tau`` of
any of the three names the contract is closed out. For default group ``g``
the counterparty-risk-free payment is ``delta_hat^g`` and the risky one
``delta_bar^g``; their difference ``xi^g`` is the exposure, positive when the
investor loses on the counterparty and negative when the counterparty loses
on the investor.

Monte Carlo work is split into fixed-size blocks of path indices. Each path
draws from its own random substreams, so results do not depend on how blocks
are scheduled, and all reductions are compensated sums in block order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import rng
from .cds import CleanPricer, NodePriceTable, build_clean_curve, fair_spread, risky_annuity
from .collateral import MarginAgreement, collateral_before, collateral_paths, effective_collateral
from .config import RunConfig, worker_count
from .copula import (
    COUNTERPARTY_GROUPS,
    INVESTOR_GROUPS,
    REFERENCE_GROUPS,
    FirstDefault,
    invert_hazard,
    sample_first_defaults,
)
from .errors import ConfigError, PricingError
from .factors import TimeGrid, euler_paths, riccati_coefficients, simulate_factor_batch

BPS = 1e4


# -- close-out algebra -------------------------------------------------------


@dataclass(frozen=True)
class CloseoutLeg:
    group: int
    delta_bar: float
    delta_hat: float
    xi: float


def _in(group, groups) -> np.ndarray:
    return np.isin(group, groups)


def closeout_arrays(group, s, lgd, c, r2: float, r3: float):
    """Vectorised ``(delta_bar, delta_hat, xi)`` for groups ``group`` (0 = no default).

    ``s`` is the pre-default clean price at ``tau`` and ``c`` the effective
    collateral. When the reference name is part of the group its recovery
    claim ``lgd`` replaces ``s``.
    """
    group = np.asarray(group)
    s = np.asarray(s, dtype=float)
    base = np.where(_in(group, REFERENCE_GROUPS), lgd, s)
    y = base - c
    pos = np.maximum(y, 0.0)
    neg = np.maximum(-y, 0.0)
    loss_cpty = np.where(_in(group, COUNTERPARTY_GROUPS), (1.0 - r2) * pos, 0.0)
    loss_inv = np.where(_in(group, INVESTOR_GROUPS), (1.0 - r3) * neg, 0.0)
    alive = group > 0
    xi = loss_cpty - loss_inv
    dhat = np.where(alive, base, 0.0)
    return dhat - xi, dhat, xi


def closeout_cashflow(group: int, s: float, lgd: float, c: float, spec) -> CloseoutLeg:
    """Close-out values for one default event of group ``group`` (1..7)."""
    if group not in range(1, 8):
        raise ValueError(f"group must be in 1..7, got {group}")
    dbar, dhat, xi = closeout_arrays(group, s, lgd, c, spec.recovery_cpty, spec.recovery_inv)
    return CloseoutLeg(group, float(dbar), float(dhat), float(xi))


def literal_closeout(group, s, lgd, c, r2: float, r3: float) -> np.ndarray:
    """Total risky cash flow at ``tau``, summed jump by jump.

    Collateral transfer, then the reference-default payment ``lgd - c``, the
    counterparty and investor close-out payments, the joint-default
    corrections. Algebraically equal to ``delta_bar``; kept separate as an
    independent route.
    """
    group = np.asarray(group)
    ref = _in(group, REFERENCE_GROUPS)
    h2 = _in(group, COUNTERPARTY_GROUPS)
    h3 = _in(group, INVESTOR_GROUPS)
    joint23 = _in(group, (4, 7))
    joint_hat1 = _in(group, (5, 6, 7))
    s_tau = np.where(ref, 0.0, s)
    y = s_tau + np.where(ref, lgd, 0.0) - c
    pos, neg = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    out = np.where(group > 0, c, 0.0)
    out = out + np.where(ref, lgd - c, 0.0)
    out = out + np.where(h2, r2 * pos - neg, 0.0)
    out = out + np.where(h3, pos - r3 * neg, 0.0)
    out = out + np.where(joint23, -y, 0.0)
    out = out + np.where(joint_hat1, -(lgd - c), 0.0)
    return out


def pfe_sample(first_default: FirstDefault, s: float, lgd: float, c: float, spec) -> float:
    """Signed exposure at the first default; 0 when nothing defaults."""
    if first_default.group is None:
        return 0.0
    if first_default.time > spec.maturity:
        raise ValueError("default after maturity")
    _, _, xi = closeout_arrays(first_default.group, s, lgd, c, spec.recovery_cpty, spec.recovery_inv)
    return float(xi)


# -- estimates and reports ---------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    n: int

    @classmethod
    def of(cls, samples: np.ndarray) -> "Estimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            return cls(math.nan, math.nan, 0)
        m = math.fsum(x) / n
        if n == 1:
            return cls(m, math.nan, 1)
        var = math.fsum((x - m) ** 2) / (n - 1)
        return cls(m, math.sqrt(var / n), n)


@dataclass(frozen=True)
class PathPayoffs:
    """Per-path discounted exposure samples, in path-index order."""

    ucva: np.ndarray
    dva: np.ndarray
    cva: np.ndarray
    tau: np.ndarray
    group: np.ndarray


@dataclass(frozen=True)
class ExposureProfile:
    """Exposures bucketed by default time; NaN marks an empty bucket."""

    edges: np.ndarray
    epe: np.ndarray
    epe_se: np.ndarray
    epe_count: np.ndarray
    ene: np.ndarray
    ene_se: np.ndarray
    ene_count: np.ndarray
    mean_collateral: np.ndarray
    mean_collateral_se: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.edges[1:]


@dataclass(frozen=True)
class ForwardCvaCurve:
    times: np.ndarray
    mean_cva: np.ndarray
    se: np.ndarray
    alive: np.ndarray


@dataclass(frozen=True)
class ExposureReport:
    cva0: float
    ucva0: float
    dva0: float
    cva0_se: float
    ucva0_se: float
    dva0_se: float
    n_paths: int
    seed: int
    label: str = ""
    profile: ExposureProfile | None = None
    forward: ForwardCvaCurve | None = None
    payoffs: PathPayoffs | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class SpreadReport:
    """Spreads per unit time (decimal); ``sva0_bps`` in basis points per year.

    ``kappa0_c`` and ``sva0`` follow the adjustment route
    ``kappa0_c = kappa0 - cva0 / rdv01_c``. ``kappa0_c_direct`` is the ratio
    of the simulated risky legs ``plc0 / rdv01_c``; ``route_gap`` is the
    difference of the two SVA routes and ``route_gap_se`` its standard error.
    """

    kappa0: float
    kappa0_c: float
    sva0: float
    rdv01: float
    rdv01_c: float
    rdv01_c_se: float
    plc0: float
    plc0_se: float
    cva0: float
    cva0_se: float
    kappa0_c_direct: float
    route_gap: float
    route_gap_se: float
    sva0_se: float

    @property
    def sva0_bps(self) -> float:
        return self.sva0 * BPS


# -- simulation engine -------------------------------------------------------


def _blocks(n_paths: int, block_size: int, offset: int = 0) -> list[np.ndarray]:
    return [np.arange(offset + s, offset + min(s + block_size, n_paths)) for s in range(0, n_paths, block_size)]


def _map_blocks(fn: Callable, blocks: Sequence[np.ndarray]) -> list:
    workers = worker_count()
    if workers == 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


@dataclass
class _Block:
    idx: np.ndarray
    tau: np.ndarray
    group: np.ndarray
    k: np.ndarray
    s_tau: np.ndarray
    s_calls: np.ndarray
    discount: np.ndarray
    annuity: np.ndarray


class Engine:
    """Shared state for all estimators on one configuration.

    The contract is priced at ``config.contract.spread``, or at the clean
    fair spread when that is ``None``.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.seed = config.require_seed()
        self.spec = config.contract
        self.grid = TimeGrid(0.0, self.spec.maturity, config.grid_step)
        p1 = config.factors[0]
        self.curve0 = build_clean_curve(p1, config.shocks.a1, self.spec, 0.0, p1.x0, config.quad_step)
        self.kappa0 = fair_spread(self.curve0, self.spec)
        self.rdv01 = risky_annuity(self.curve0, self.spec)
        self.kappa = self.kappa0 if self.spec.spread is None else float(self.spec.spread)
        self.pricer = CleanPricer(p1, config.shocks.a1, self.spec, self.kappa, config.quad_step)

    @cached_property
    def table(self) -> NodePriceTable:
        return self.pricer.node_table(self.grid)

    def call_nodes(self, agreement: MarginAgreement) -> np.ndarray:
        try:
            return agreement.call_nodes(self.grid.nodes)
        except ConfigError as e:
            raise ConfigError(str(e)[len(e.path) + 2 :], f"margin.{e.path}") from None

    def _all_call_nodes(self, agreements: Sequence[MarginAgreement]) -> np.ndarray:
        nodes = [self.call_nodes(a) for a in agreements if not a.uncollateralized]
        if not nodes:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(nodes))

    def simulate_block(self, idx: np.ndarray, call_union: np.ndarray) -> _Block:
        cfg = self.config
        x = simulate_factor_batch(cfg.factors, self.grid, self.seed, idx)
        u = rng.uniforms(self.seed, idx, rng.DEFAULT_TIME, 2)
        tau, group, k = sample_first_defaults(x, self.grid.nodes, cfg.shocks, self.spec.maturity, u[:, 0], u[:, 1])
        s_tau = np.zeros(idx.size)
        rows = np.nonzero(k >= 0)[0]
        if rows.size:
            s_tau[rows] = self.pricer.price(tau[rows], x[rows, k[rows], 0])
        if call_union.size:
            s_calls = self.table.lookup(call_union[None, :], x[:, call_union, 0])
        else:
            s_calls = np.zeros((idx.size, 0))
        t_end = np.minimum(tau, self.spec.maturity)
        discount = np.where(k >= 0, np.exp(-self.spec.rate * np.where(k >= 0, tau, 0.0)), 0.0)
        return _Block(idx, tau, group, k, s_tau, s_calls, discount, self.spec.annuity_to(t_end))

    def collateral_at_default(self, blk: _Block, agreement: MarginAgreement, call_union: np.ndarray) -> np.ndarray:
        """Effective collateral in force at each path's default time."""
        if agreement.uncollateralized:
            return np.zeros(blk.idx.size)
        nodes = self.call_nodes(agreement)
        cols = np.searchsorted(call_union, nodes)
        c_after = collateral_paths(blk.s_calls[:, cols], agreement)
        c_tau = collateral_before(c_after, nodes, blk.k)
        return effective_collateral(c_tau, agreement)

    def payoffs(self, blk: _Block, c_tau: np.ndarray):
        spec = self.spec
        dbar, dhat, xi = closeout_arrays(blk.group, blk.s_tau, spec.lgd, c_tau, spec.recovery_cpty, spec.recovery_inv)
        ucva = blk.discount * np.maximum(xi, 0.0)
        dva = blk.discount * np.maximum(-xi, 0.0)
        return ucva, dva, dbar * blk.discount, dhat * blk.discount


def _concat(parts: list, i: int) -> np.ndarray:
    return np.concatenate([p[i] for p in parts]) if parts else np.zeros(0)


def _report(label: str, ucva: np.ndarray, dva: np.ndarray, tau, group, seed: int, keep: bool) -> ExposureReport:
    cva = ucva - dva
    u, d, c = Estimate.of(ucva), Estimate.of(dva), Estimate.of(cva)
    return ExposureReport(
        cva0=u.value - d.value,
        ucva0=u.value,
        dva0=d.value,
        cva0_se=c.se,
        ucva0_se=u.se,
        dva0_se=d.se,
        n_paths=ucva.size,
        seed=seed,
        label=label,
        payoffs=PathPayoffs(ucva, dva, cva, tau, group) if keep else None,
    )


@dataclass(frozen=True)
class CaseResult:
    label: str
    exposure: ExposureReport
    spread: SpreadReport


def _spread_report(engine: Engine, rep: ExposureReport, dbar_d: np.ndarray, dhat_d: np.ndarray, annuity: np.ndarray):
    rd = Estimate.of(annuity)
    if not rd.value > 0:
        raise PricingError("risky annuity of the counterparty-risky contract is zero")
    c = Estimate(rep.cva0, rep.cva0_se, rep.n_paths)
    pl = Estimate.of(dbar_d)
    kappa0 = engine.kappa0
    sva = c.value / rd.value
    # clean representation residual: mean is the price of the clean contract at kappa0
    f = Estimate.of(dhat_d - kappa0 * annuity)
    direct = pl.value / rd.value
    return SpreadReport(
        kappa0=kappa0,
        kappa0_c=kappa0 - sva,
        sva0=sva,
        rdv01=engine.rdv01,
        rdv01_c=rd.value,
        rdv01_c_se=rd.se,
        plc0=pl.value,
        plc0_se=pl.se,
        cva0=c.value,
        cva0_se=c.se,
        kappa0_c_direct=direct,
        route_gap=(kappa0 - direct) - sva,
        route_gap_se=f.se / rd.value,
        sva0_se=c.se / rd.value,
    )


def run_cases(
    config: RunConfig,
    agreements: Sequence[tuple[str, MarginAgreement]],
    n_paths: int | None = None,
    keep_payoffs: bool = False,
    path_offset: int = 0,
) -> list[CaseResult]:
    """CVA and spread reports for several margin agreements on common paths."""
    engine = Engine(config)
    n = config.n_paths if n_paths is None else n_paths
    if n < 1:
        raise ValueError("n_paths must be >= 1")
    ags = [a for _, a in agreements]
    call_union = engine._all_call_nodes(ags)

    def work(idx):
        blk = engine.simulate_block(idx, call_union)
        out = []
        for a in ags:
            c_tau = engine.collateral_at_default(blk, a, call_union)
            out.append(engine.payoffs(blk, c_tau))
        return blk.tau, blk.group, blk.annuity, out

    parts = _map_blocks(work, _blocks(n, config.block_size, path_offset))
    tau = np.concatenate([p[0] for p in parts])
    group = np.concatenate([p[1] for p in parts])
    annuity = np.concatenate([p[2] for p in parts])
    results = []
    for j, (label, _) in enumerate(agreements):
        per = [p[3][j] for p in parts]
        ucva, dva, dbar_d, dhat_d = (_concat(per, i) for i in range(4))
        rep = _report(label, ucva, dva, tau, group, engine.seed, keep_payoffs)
        results.append(CaseResult(label, rep, _spread_report(engine, rep, dbar_d, dhat_d, annuity)))
    return results


def cva0_mc(config: RunConfig, n_paths: int | None = None, keep_payoffs: bool = False) -> ExposureReport:
    """Sampled-default estimator of CVA, UCVA and DVA at time 0."""
    return run_cases(config, [("", config.margin)], n_paths, keep_payoffs)[0].exposure


def risky_spread_and_sva(config: RunConfig, n_paths: int | None = None) -> SpreadReport:
    return run_cases(config, [("", config.margin)], n_paths)[0].spread


def bucket_edges(maturity: float, width: float) -> np.ndarray:
    # relative slack so a rounded width such as 0.0833333333333 gives 60 monthly buckets
    n = max(1, int(math.ceil(maturity / width * (1 - 1e-9))))
    edges = np.minimum(width * np.arange(n + 1), maturity)
    edges[-1] = maturity
    return edges


def epe_ene_curves(config: RunConfig, n_paths: int | None = None, buckets=None) -> ExposureProfile:
    """Expected positive and negative exposure bucketed by default time.

    EPE in bucket ``(b_j, b_{j+1}]`` averages ``(1 - R2) (y)^+`` over paths
    whose counterparty defaults there, ENE averages ``(1 - R3) (y)^-`` over
    investor defaults. Exposures are undiscounted. ``mean_collateral`` is the
    average effective collateral in force at each right bucket edge over
    paths still alive.
    """
    engine = Engine(config)
    spec = engine.spec
    edges = bucket_edges(spec.maturity, config.bucket_width) if buckets is None else np.asarray(buckets, float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("need at least one bucket")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bucket edges must be strictly increasing (zero-width bucket)")
    if edges[0] < 0 or edges[-1] > spec.maturity + 1e-12:
        raise ValueError("buckets must lie within [0, T]")
    n = config.n_paths if n_paths is None else n_paths
    agreement = config.margin
    call_union = engine._all_call_nodes([agreement])
    nodes = engine.grid.nodes
    # interval (t_k, t_{k+1}] whose right end is the bucket edge
    k_edge = np.searchsorted(nodes, edges[1:] - 1e-9, side="left") - 1
    k_edge = np.maximum(k_edge, 0)

    def work(idx):
        blk = engine.simulate_block(idx, call_union)
        if agreement.uncollateralized:
            c_tau = np.zeros(idx.size)
            c_edge = np.zeros((idx.size, k_edge.size))
        else:
            cn = engine.call_nodes(agreement)
            c_after = collateral_paths(blk.s_calls[:, np.searchsorted(call_union, cn)], agreement)
            c_tau = effective_collateral(collateral_before(c_after, cn, blk.k), agreement)
            c_edge = np.stack([collateral_before(c_after, cn, np.full(idx.size, ke)) for ke in k_edge], axis=1)
            c_edge = effective_collateral(c_edge, agreement)
        base = np.where(np.isin(blk.group, REFERENCE_GROUPS), spec.lgd, blk.s_tau)
        y = base - c_tau
        return blk.tau, blk.group, (1 - spec.recovery_cpty) * np.maximum(y, 0), (1 - spec.recovery_inv) * np.maximum(-y, 0), c_edge

    parts = _map_blocks(work, _blocks(n, config.block_size))
    tau, group, pos, neg, c_edge = (np.concatenate([p[i] for p in parts]) for i in range(5))
    bucket = np.searchsorted(edges, tau, side="left") - 1  # tau in (b_j, b_{j+1}]
    nb = edges.size - 1
    cp = np.isin(group, COUNTERPARTY_GROUPS)
    iv = np.isin(group, INVESTOR_GROUPS)

    def bucketed(values, mask):
        mean = np.full(nb, np.nan)
        se = np.full(nb, np.nan)
        count = np.zeros(nb, dtype=np.int64)
        for j in range(nb):
            sel = mask & (bucket == j)
            count[j] = int(sel.sum())
            if count[j]:
                e = Estimate.of(values[sel])
                mean[j], se[j] = e.value, e.se
        return mean, se, count

    epe, epe_se, epe_n = bucketed(pos, cp)
    ene, ene_se, ene_n = bucketed(neg, iv)
    mc = np.full(nb, np.nan)
    mc_se = np.full(nb, np.nan)
    for j in range(nb):
        alive = tau > edges[j + 1]
        if alive.any():
            e = Estimate.of(c_edge[alive, j])
            mc[j], mc_se[j] = e.value, e.se
    return ExposureProfile(edges, epe, epe_se, epe_n, ene, ene_se, ene_n, mc, mc_se)


# -- forward CVA -------------------------------------------------------------


def observation_grid(config: RunConfig) -> np.ndarray:
    return bucket_edges(config.contract.maturity, config.observation_step)


def forward_cva(
    config: RunConfig,
    outer_paths: int | None = None,
    inner_paths: int | None = None,
    observation_times=None,
    agreements: Sequence[tuple[str, MarginAgreement]] | None = None,
) -> list[ForwardCvaCurve]:
    """Mean forward CVA path by nested simulation.

    Outer paths carry the full state. At each observation time ``t`` every
    outer path still alive restarts ``inner_paths`` paths of the reference
    factor from ``(t, X^1_t, C_t)``. Along each inner path the remaining
    default risk is integrated exactly: the counterparty and investor factors
    enter only through their closed-form transforms, so the inner estimator is
    the conditional expectation of the close-out exposure given the reference
    factor path. Collateral follows the margin recursion along the inner path.
    """
    cfg = config
    engine = Engine(cfg)
    spec = engine.spec
    grid = engine.grid
    nodes = grid.nodes
    n_outer = cfg.outer_paths if outer_paths is None else outer_paths
    n_inner = cfg.inner_paths if inner_paths is None else inner_paths
    obs = observation_grid(cfg) if observation_times is None else np.asarray(observation_times, float)
    obs_k = np.array([grid.index_of(t) for t in obs])
    if agreements is None:
        agreements = [("", cfg.margin)]
    ags = [a for _, a in agreements]
    call_union = engine._all_call_nodes(ags)
    call_sets = [engine.call_nodes(a) for a in ags]

    p1, p2, p3 = cfg.factors
    base = cfg.shocks.idiosyncratic_base
    c4, c5, c6, c7 = cfg.shocks.shocks
    k0 = float(base.sum() + cfg.shocks.shocks.sum())
    r2, r3, lgd = spec.recovery_cpty, spec.recovery_inv, spec.lgd
    outer_block = max(1, 1024 // n_inner)

    def inner_estimates(idx, x, c_t, j, kj):
        """CVA at node kj for outer rows (n,) by case, shape (n_cases, n)."""
        n = idx.size
        m = nodes.size - 1 - kj
        if m == 0:
            return np.zeros((len(ags), n))
        dt = np.diff(nodes[kj:])
        z = np.empty((n, n_inner, m))
        for row, p in enumerate(idx):
            z[row] = rng.substream(engine.seed, int(p), rng.INNER, j).standard_normal((n_inner, m))
        x1_0 = np.repeat(x[:, kj, 0], n_inner)
        x1 = euler_paths([p1], dt, z.reshape(n * n_inner, m, 1), x1_0[:, None])[:, :, 0]
        ks = np.arange(kj, nodes.size)
        s = engine.table.lookup(ks[None, :], x1)
        # a default in (t_m, t_m+1] is closed out at the price mid-step with the
        # factor frozen at t_m, as in the direct estimator; collateral stays at its t_m value
        s_mid = 0.5 * (s[:, :-1] + engine.table.lookup(ks[None, 1:], x1[:, :-1]))
        # left-point survival of the reference factor and exact transforms of the others
        e1 = np.exp(-np.concatenate([np.zeros((x1.shape[0], 1)), np.cumsum(x1[:, :-2] * dt[:-1], axis=1)], axis=1))
        u = nodes[kj:-1] - nodes[kj]
        A2, B2, dA2, dB2 = riccati_coefficients(p2, u)
        A3, B3, dA3, dB3 = riccati_coefficients(p3, u)
        phi2 = np.exp(A2 - np.outer(x[:, kj, 1], B2))
        phi3 = np.exp(A3 - np.outer(x[:, kj, 2], B3))
        psi2 = base[1] * phi2 - phi2 * (dA2 - np.outer(x[:, kj, 1], dB2))
        psi3 = base[2] * phi3 - phi3 * (dA3 - np.outer(x[:, kj, 2], dB3))
        w = np.exp(-(k0 + spec.rate) * u)
        # weights per outer row, broadcast over inner paths
        w2 = np.repeat(w * psi2 * phi3, n_inner, axis=0)
        w3 = np.repeat(w * phi2 * psi3, n_inner, axis=0)
        w0 = np.repeat(w * phi2 * phi3, n_inner, axis=0)
        out = np.empty((len(ags), n))
        for ci, (a, cn) in enumerate(zip(ags, call_sets)):
            if a.uncollateralized:
                cm = np.zeros_like(s_mid)
            else:
                rel = cn[cn >= kj] - kj
                c0 = np.repeat(c_t[ci], n_inner)
                c_after = collateral_paths(s[:, rel], a, c0)
                jm = np.searchsorted(rel, np.arange(m), side="right") - 1
                cm = np.where(jm[None, :] >= 0, c_after[:, np.maximum(jm, 0)] if rel.size else 0.0, c0[:, None])
                cm = effective_collateral(cm, a)
            y = s_mid - cm
            yd = lgd - cm
            xi2 = (1 - r2) * np.maximum(y, 0)
            xi3 = -(1 - r3) * np.maximum(-y, 0)
            xi5 = (1 - r2) * np.maximum(yd, 0)
            xi6 = -(1 - r3) * np.maximum(-yd, 0)
            integrand = e1 * (w2 * xi2 + w3 * xi3 + w0 * (c4 * (xi2 + xi3) + c5 * xi5 + c6 * xi6 + c7 * (xi5 + xi6)))
            per_path = np.sum(integrand * dt, axis=-1)
            out[ci] = per_path.reshape(n, n_inner).mean(axis=1)
        return out

    def work(idx):
        blk_x = simulate_factor_batch(cfg.factors, grid, engine.seed, idx)
        u = rng.uniforms(engine.seed, idx, rng.DEFAULT_TIME, 2)
        tau, _, _ = sample_first_defaults(blk_x, nodes, cfg.shocks, spec.maturity, u[:, 0], u[:, 1])
        s_calls = engine.table.lookup(call_union[None, :], blk_x[:, call_union, 0]) if call_union.size else None
        c_after = []
        for a, cn in zip(ags, call_sets):
            if a.uncollateralized:
                c_after.append(None)
            else:
                c_after.append(collateral_paths(s_calls[:, np.searchsorted(call_union, cn)], a))
        vals = np.full((len(ags), len(obs), idx.size), np.nan)
        for j, kj in enumerate(obs_k):
            alive = tau > nodes[kj]
            if not alive.any():
                continue
            rows = np.nonzero(alive)[0]
            c_t = np.zeros((len(ags), rows.size))
            for ci, (a, cn) in enumerate(zip(ags, call_sets)):
                if c_after[ci] is not None and kj > 0:
                    c_t[ci] = collateral_before(c_after[ci][rows], cn, np.full(rows.size, kj - 1))
            vals[:, j, rows] = inner_estimates(idx[rows], blk_x[rows], c_t, j, kj)
        return vals

    parts = _map_blocks(work, _blocks(n_outer, outer_block))
    vals = np.concatenate(parts, axis=2)
    curves = []
    for ci in range(len(ags)):
        mean = np.full(len(obs), np.nan)
        se = np.full(len(obs), np.nan)
        alive = np.zeros(len(obs), dtype=np.int64)
        for j in range(len(obs)):
            v = vals[ci, j]
            v = v[~np.isnan(v)]
            alive[j] = v.size
            if v.size:
                e = Estimate.of(v)
                mean[j], se[j] = e.value, (e.se if v.size > 1 else 0.0)
        curves.append(ForwardCvaCurve(obs.copy(), mean, se, alive))
    return curves


# -- deterministic-intensity route ------------------------------------------


def cva0_deterministic(config: RunConfig, intervals: int = 20_000) -> float:
    """CVA at time 0 by quadrature when all factors are deterministic (sigma = 0).

    Uncollateralized only. The first-default density of each group is
    ``l^g(u) exp(-int_0^u l)``; the exposure is a function of the
    deterministic clean price.
    """
    cfg = config
    if any(p.sigma != 0 for p in cfg.factors):
        raise ValueError("quadrature route needs deterministic factors (sigma = 0)")
    if not cfg.margin.uncollateralized:
        raise ValueError("quadrature route is for the uncollateralized contract")
    spec = cfg.contract
    p1 = cfg.factors[0]
    curve0 = build_clean_curve(p1, cfg.shocks.a1, spec, 0.0, p1.x0, cfg.quad_step)
    kappa = fair_spread(curve0, spec) if spec.spread is None else spec.spread
    pricer = CleanPricer(p1, cfg.shocks.a1, spec, kappa, cfg.quad_step)
    if intervals % 2:
        intervals += 1
    u = np.linspace(0.0, spec.maturity, intervals + 1)
    xs, integ = [], []
    for p in cfg.factors:
        A, B, _, _ = riccati_coefficients(p, u)
        integ.append(-(A - B * p.x0))  # int_0^u X for a deterministic path
        if p.zeta == 0:
            xs.append(np.full_like(u, p.x0))
        else:
            xs.append(p.mu + (p.x0 - p.mu) * np.exp(-p.zeta * u))
    x = np.stack(xs, axis=1)
    base = cfg.shocks.idiosyncratic_base
    c4, c5, c6, c7 = cfg.shocks.shocks
    k0 = base.sum() + cfg.shocks.shocks.sum()
    surv = np.exp(-k0 * u - sum(integ))
    s = pricer.price(u, x[:, 0])
    r2, r3 = spec.recovery_cpty, spec.recovery_inv
    xi2 = (1 - r2) * np.maximum(s, 0)
    xi3 = -(1 - r3) * np.maximum(-s, 0)
    xi5 = (1 - r2) * max(spec.lgd, 0.0)
    xi6 = -(1 - r3) * max(-spec.lgd, 0.0)
    f = np.exp(-spec.rate * u) * surv * (
        (base[1] + x[:, 1]) * xi2 + (base[2] + x[:, 2]) * xi3 + c4 * (xi2 + xi3) + c5 * xi5 + c6 * xi6 + c7 * (xi5 + xi6)
    )
    h = spec.maturity / intervals
    w = np.ones(intervals + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return float(h / 3 * np.dot(w, f))


# -- flatness diagnostics ----------------------------------------------------


def clean_flatness(config: RunConfig, n_paths: int | None = None, spread: float | None = None) -> Estimate:
    """Mean discounted total cash flow of the clean contract.

    The reference default time is drawn from its own intensity ``a1 + X^1``
    on a dedicated substream; the contract pays ``lgd`` at default and the
    spread continuously until default or maturity.
    """
    engine = Engine(config)
    spec = engine.spec
    kappa = engine.kappa0 if spread is None else spread
    n = config.n_paths if n_paths is None else n_paths
    nodes = engine.grid.nodes
    a1 = config.shocks.a1

    def work(idx):
        x = simulate_factor_batch(config.factors, engine.grid, engine.seed, idx)
        u = rng.uniforms(engine.seed, idx, rng.REFERENCE_TIME, 1)[:, 0]
        tau1, k = invert_hazard(a1 + x[:, :-1, 0], nodes, spec.maturity, u)
        hit = k >= 0
        d = np.where(hit, np.exp(-spec.rate * np.where(hit, tau1, 0.0)), 0.0)
        return d * spec.lgd - kappa * spec.annuity_to(np.minimum(tau1, spec.maturity))

    flows = np.concatenate(_map_blocks(work, _blocks(n, config.block_size)))
    return Estimate.of(flows)


def risky_flatness(
    config: RunConfig, spread: float, n_paths: int | None = None, path_offset: int | None = None
) -> Estimate:
    """Mean discounted total cash flow of the counterparty-risky contract at ``spread``.

    The close-out is summed jump by jump. Paths start at ``path_offset``
    (default ``n_paths``) so that they are independent of a reference run on
    indices ``[0, n_paths)``.
    """
    engine = Engine(config)
    spec = engine.spec
    n = config.n_paths if n_paths is None else n_paths
    offset = n if path_offset is None else path_offset
    agreement = config.margin
    call_union = engine._all_call_nodes([agreement])

    def work(idx):
        blk = engine.simulate_block(idx, call_union)
        c_tau = engine.collateral_at_default(blk, agreement, call_union)
        jump = literal_closeout(blk.group, blk.s_tau, spec.lgd, c_tau, spec.recovery_cpty, spec.recovery_inv)
        return blk.discount * jump - spread * blk.annuity

    flows = np.concatenate(_map_blocks(work, _blocks(n, config.block_size, offset)))
    return Estimate.of(flows)
