"""Run configuration and its YAML loader.

A run file looks like::

    seed: 12345
    contract: {maturity: 5, spread: fair, lgd: 0.6, recovery_cpty: 0.4, recovery_inv: 0.4, rate: 0}
    factors: {reference: high, counterparty: high, investor: high}
    shocks: {a1: 0, a2: 0, a3: 0, c4: 0, c5: 0, c6: 0, c7: 0}
    margin: {gamma_cpty: unbounded, gamma_inv: unbounded, mta: 0, calls: grid, delta: 0, haircut: 0}
    simulation: {grid_step: 0.004, paths: 10000, outer_paths: 2000, inner_paths: 500}
    cases: [{label: A, gamma_cpty: unbounded, gamma_inv: unbounded}, ...]

Infinite thresholds are written as the token ``unbounded``. Any invalid entry
raises ``ConfigError`` whose ``path`` names the entry, e.g. ``margin.mta``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .cds import DEFAULT_QUAD_STEP, ContractSpec
from .collateral import HAIRCUT_CONVENTIONS, MarginAgreement
from .copula import ShockStructure
from .errors import ConfigError
from .factors import DEFAULT_STEP, CirParams, FactorRegime

UNBOUNDED = "unbounded"
WORKERS_ENV = "CDSXVA_WORKERS"


@dataclass(frozen=True)
class CaseRow:
    label: str
    gamma_cpty: float
    gamma_inv: float


@dataclass(frozen=True)
class CaseTable:
    rows: tuple[CaseRow, ...]

    def __post_init__(self):
        labels = [r.label for r in self.rows]
        if len(set(labels)) != len(labels):
            raise ConfigError("case labels must be unique", "cases")

    @classmethod
    def default(cls) -> "CaseTable":
        inf = math.inf
        return cls(
            (
                CaseRow("A", inf, -inf),
                CaseRow("B", 1.5e-3, -0.4e-3),
                CaseRow("C", 1e-3, -0.2e-3),
                CaseRow("D", 0.5e-3, -0.1e-3),
                CaseRow("E", 0.25e-3, -0.05e-3),
                CaseRow("F", 0.0, 0.0),
            )
        )

    def agreements(self, base: MarginAgreement) -> list[tuple[str, MarginAgreement]]:
        return [(r.label, replace(base, gamma_cpty=r.gamma_cpty, gamma_inv=r.gamma_inv)) for r in self.rows]


@dataclass(frozen=True)
class RunConfig:
    contract: ContractSpec = field(default_factory=ContractSpec)
    factors: tuple[CirParams, CirParams, CirParams] = (
        FactorRegime.HIGH.params,
        FactorRegime.HIGH.params,
        FactorRegime.HIGH.params,
    )
    shocks: ShockStructure = field(default_factory=ShockStructure)
    margin: MarginAgreement = field(default_factory=MarginAgreement)
    seed: int | None = None
    grid_step: float = DEFAULT_STEP
    quad_step: float = DEFAULT_QUAD_STEP
    n_paths: int = 10_000
    outer_paths: int = 2_000
    inner_paths: int = 500
    block_size: int = 256
    bucket_width: float = 1.0 / 12.0
    observation_step: float = 0.25
    cases: CaseTable = field(default_factory=CaseTable.default)
    output_dir: str = "results"

    def __post_init__(self):
        if len(self.factors) != 3:
            raise ConfigError("exactly three factors are required", "factors")
        if self.seed is not None and (not isinstance(self.seed, (int, np.integer)) or self.seed < 0):
            raise ConfigError("must be a non-negative integer", "seed")
        for name in ("n_paths", "outer_paths", "inner_paths", "block_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError("must be a positive integer", f"simulation.{name}")
        for name in ("grid_step", "quad_step", "bucket_width", "observation_step"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError("must be > 0", f"simulation.{name}")

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required for any run that reports numbers", "seed")
        return int(self.seed)

    def with_margin(self, margin: MarginAgreement) -> "RunConfig":
        return replace(self, margin=margin)


def worker_count() -> int:
    """Worker threads for path blocks; results never depend on it."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", WORKERS_ENV) from None
    if n < 1:
        raise ConfigError("must be >= 1", WORKERS_ENV)
    return n


# -- YAML ingestion ----------------------------------------------------------


def _section(raw: Any, path: str, allowed: set[str]) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", path)
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)}", path)
    return raw


def _number(raw: Any, path: str, *, lo: float | None = None, allow_unbounded: float | None = None) -> float:
    if allow_unbounded is not None and raw == UNBOUNDED:
        return allow_unbounded
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"expected a number, got {raw!r}", path)
    v = float(raw)
    if not math.isfinite(v):
        raise ConfigError(f"must be finite (use {UNBOUNDED!r} for no threshold)", path)
    if lo is not None and v < lo:
        raise ConfigError(f"must be >= {lo}", path)
    return v


def _integer(raw: Any, path: str, lo: int = 1) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(f"expected an integer, got {raw!r}", path)
    if raw < lo:
        raise ConfigError(f"must be >= {lo}", path)
    return raw


def _wrap(path: str, fn, **kwargs):
    """Build a domain object, prefixing its validation errors with ``path``."""
    try:
        return fn(**kwargs)
    except ConfigError as e:
        inner = f"{path}.{e.path}" if e.path else path
        msg = str(e)[len(e.path) + 2 :] if e.path else str(e)
        raise ConfigError(msg, inner) from None


def _contract(raw: Any) -> ContractSpec:
    keys = {"maturity", "spread", "lgd", "recovery_cpty", "recovery_inv", "rate"}
    d = _section(raw, "contract", keys)
    kw: dict[str, Any] = {}
    for k in keys - {"spread"}:
        if k in d:
            kw[k] = _number(d[k], f"contract.{k}")
    if "spread" in d and d["spread"] != "fair":
        kw["spread"] = _number(d["spread"], "contract.spread")
    return _wrap("contract", ContractSpec, **kw)


def _factor(raw: Any, path: str) -> CirParams:
    if isinstance(raw, str):
        try:
            return FactorRegime.parse(raw).params
        except ConfigError as e:
            raise ConfigError(str(e), path) from None
    d = _section(raw, path, {"zeta", "mu", "sigma", "x0"})
    missing = {"zeta", "mu", "sigma", "x0"} - set(d)
    if missing:
        raise ConfigError(f"missing key(s) {sorted(missing)}", path)
    kw = {k: _number(d[k], f"{path}.{k}") for k in d}
    return _wrap(path, CirParams, **kw)


def _factors(raw: Any) -> tuple[CirParams, CirParams, CirParams]:
    names = ("reference", "counterparty", "investor")
    d = _section(raw, "factors", set(names))
    return tuple(_factor(d.get(n, "high"), f"factors.{n}") for n in names)  # type: ignore[return-value]


def _shocks(raw: Any) -> ShockStructure:
    keys = {"a1", "a2", "a3", "c4", "c5", "c6", "c7"}
    d = _section(raw, "shocks", keys)
    kw = {k: _number(d[k], f"shocks.{k}") for k in d}
    return _wrap("shocks", ShockStructure, **kw)


def _calls(raw: Any, path: str):
    if raw is None or raw == "grid":
        return None
    if isinstance(raw, dict):
        d = _section(raw, path, {"every", "maturity"})
        if "every" not in d:
            raise ConfigError("expected key 'every'", path)
        step = _number(d["every"], f"{path}.every", lo=0.0)
        if step <= 0:
            raise ConfigError("must be > 0", f"{path}.every")
        return step
    if isinstance(raw, list):
        return tuple(_number(v, f"{path}[{i}]", lo=0.0) for i, v in enumerate(raw))
    raise ConfigError("expected 'grid', a list of times or {every: step}", path)


def _margin(raw: Any, maturity: float) -> MarginAgreement:
    keys = {"gamma_cpty", "gamma_inv", "mta", "calls", "delta", "haircut", "haircut_convention"}
    d = _section(raw, "margin", keys)
    kw: dict[str, Any] = {}
    if "gamma_cpty" in d:
        kw["gamma_cpty"] = _number(d["gamma_cpty"], "margin.gamma_cpty", allow_unbounded=math.inf)
    if "gamma_inv" in d:
        kw["gamma_inv"] = _number(d["gamma_inv"], "margin.gamma_inv", allow_unbounded=-math.inf)
    for k in ("mta", "delta", "haircut"):
        if k in d:
            kw[k] = _number(d[k], f"margin.{k}")
    if "haircut_convention" in d:
        if d["haircut_convention"] not in HAIRCUT_CONVENTIONS:
            raise ConfigError(f"expected one of {HAIRCUT_CONVENTIONS}", "margin.haircut_convention")
        kw["haircut_convention"] = d["haircut_convention"]
    calls = _calls(d.get("calls"), "margin.calls")
    if isinstance(calls, float):
        n = int(math.floor(maturity / calls + 1e-9))
        calls = tuple(calls * i for i in range(1, n + 1) if calls * i < maturity - 1e-9)
    kw["call_times"] = calls
    return _wrap("margin", MarginAgreement, **kw)


def _cases(raw: Any) -> CaseTable:
    if raw is None:
        return CaseTable.default()
    if not isinstance(raw, list) or not raw:
        raise ConfigError("expected a non-empty list", "cases")
    rows = []
    for i, item in enumerate(raw):
        p = f"cases[{i}]"
        d = _section(item, p, {"label", "gamma_cpty", "gamma_inv"})
        if not {"label", "gamma_cpty", "gamma_inv"} <= set(d):
            raise ConfigError("each case needs label, gamma_cpty and gamma_inv", p)
        gc = _number(d["gamma_cpty"], f"{p}.gamma_cpty", allow_unbounded=math.inf)
        gi = _number(d["gamma_inv"], f"{p}.gamma_inv", allow_unbounded=-math.inf)
        if gc < 0:
            raise ConfigError("must be >= 0", f"{p}.gamma_cpty")
        if gi > 0:
            raise ConfigError("must be <= 0", f"{p}.gamma_inv")
        rows.append(CaseRow(str(d["label"]), gc, gi))
    return CaseTable(tuple(rows))


def config_from_dict(raw: Any) -> RunConfig:
    top = {"seed", "contract", "factors", "shocks", "margin", "simulation", "cases", "output"}
    d = _section(raw, "", top) if raw is not None else {}
    contract = _contract(d.get("contract"))
    kw: dict[str, Any] = dict(
        contract=contract,
        factors=_factors(d.get("factors")),
        shocks=_shocks(d.get("shocks")),
        margin=_margin(d.get("margin"), contract.maturity),
        cases=_cases(d.get("cases")),
    )
    if "seed" in d and d["seed"] is not None:
        kw["seed"] = _integer(d["seed"], "seed", lo=0)
    sim_keys = {
        "grid_step": "grid_step",
        "quad_step": "quad_step",
        "paths": "n_paths",
        "outer_paths": "outer_paths",
        "inner_paths": "inner_paths",
        "block_size": "block_size",
        "bucket_width": "bucket_width",
        "observation_step": "observation_step",
    }
    sim = _section(d.get("simulation"), "simulation", set(sim_keys))
    for k, attr in sim_keys.items():
        if k not in sim:
            continue
        if attr in ("n_paths", "outer_paths", "inner_paths", "block_size"):
            kw[attr] = _integer(sim[k], f"simulation.{k}")
        else:
            v = _number(sim[k], f"simulation.{k}", lo=0.0)
            if v <= 0:
                raise ConfigError("must be > 0", f"simulation.{k}")
            kw[attr] = v
    out = _section(d.get("output"), "output", {"dir"})
    if "dir" in out:
        kw["output_dir"] = str(out["dir"])
    return RunConfig(**kw)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML: {e}", str(path)) from None
    return config_from_dict(raw)
