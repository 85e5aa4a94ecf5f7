"""Command-line entry point.

    cdsxva price       --config run.yaml [--seed N] [--paths N] [--out DIR]
    cdsxva case-table  --config run.yaml
    cdsxva profiles    --config run.yaml
    cdsxva forward-cva --config run.yaml

Numbers are written with 12 significant digits. CVA, UCVA and DVA are in
value per unit notional, spreads and SVA in bps per year. Errors are reported
as one JSON object on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config
from .errors import CdsXvaError, ConfigError
from .exposure import BPS, epe_ene_curves, forward_cva, run_cases

log = logging.getLogger("cdsxva")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def fmt(v) -> str:
    """12 significant digits; empty string for NaN (absent value)."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "unbounded" if v > 0 else "-unbounded"
    return format(v, ".12g")


def _json_num(v):
    s = fmt(v)
    if s == "":
        return None
    if "unbounded" in s:
        return s
    return float(s)


def write_csv(path: Path, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else fmt(x) for x in r])
    text = buf.getvalue()
    path.write_text(text)
    return text


def write_json(path: Path, payload: dict) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    path.write_text(text)
    return text


def _out_dir(config: RunConfig) -> Path:
    p = Path(config.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def run_price(config: RunConfig) -> dict:
    res = run_cases(config, [("", config.margin)])[0]
    e, s = res.exposure, res.spread
    payload = {
        "units": {"cva": "value per unit notional", "spread": "bps per year", "rdv01": "years"},
        "seed": e.seed,
        "paths": e.n_paths,
        "kappa0_bps": _json_num(s.kappa0 * BPS),
        "kappa0_c_bps": _json_num(s.kappa0_c * BPS),
        "kappa0_c_direct_bps": _json_num(s.kappa0_c_direct * BPS),
        "sva0_bps": _json_num(s.sva0_bps),
        "sva0_bps_se": _json_num(s.sva0_se * BPS),
        "sva_route_gap_bps": _json_num(s.route_gap * BPS),
        "sva_route_gap_bps_se": _json_num(s.route_gap_se * BPS),
        "rdv01": _json_num(s.rdv01),
        "rdv01_c": _json_num(s.rdv01_c),
        "rdv01_c_se": _json_num(s.rdv01_c_se),
        "cva0": _json_num(e.cva0),
        "cva0_se": _json_num(e.cva0_se),
        "ucva0": _json_num(e.ucva0),
        "ucva0_se": _json_num(e.ucva0_se),
        "dva0": _json_num(e.dva0),
        "dva0_se": _json_num(e.dva0_se),
    }
    write_json(_out_dir(config) / "price.json", payload)
    return payload


CASE_HEADER = [
    "label", "gamma_cpty", "gamma_inv",
    "cva0", "cva0_se", "ucva0", "ucva0_se", "dva0", "dva0_se",
    "sva0_bps", "sva0_bps_se", "kappa0_bps", "kappa0_c_bps", "rdv01_c",
]


def run_case_table(config: RunConfig, cases=None) -> list[list]:
    cases = config.cases if cases is None else cases
    agreements = cases.agreements(config.margin)
    results = run_cases(config, agreements)
    rows = []
    for row, r in zip(cases.rows, results):
        e, s = r.exposure, r.spread
        rows.append([
            row.label, row.gamma_cpty, row.gamma_inv,
            e.cva0, e.cva0_se, e.ucva0, e.ucva0_se, e.dva0, e.dva0_se,
            s.sva0_bps, s.sva0_se * BPS, s.kappa0 * BPS, s.kappa0_c * BPS, s.rdv01_c,
        ])
    write_csv(_out_dir(config) / "case_table.csv", CASE_HEADER, rows)
    return rows


PROFILE_HEADER = [
    "time", "epe", "ene", "mean_collateral", "se_epe", "se_ene", "se_mean_collateral", "n_epe", "n_ene",
]
FORWARD_HEADER = ["time", "mean_cva", "se", "alive_paths"]


def _forward_rows(config: RunConfig) -> list[list]:
    curve = forward_cva(config)[0]
    return [[t, m, s, int(a)] for t, m, s, a in zip(curve.times, curve.mean_cva, curve.se, curve.alive)]


def run_forward(config: RunConfig) -> list[list]:
    rows = _forward_rows(config)
    write_csv(_out_dir(config) / "forward_cva.csv", FORWARD_HEADER, [[*r[:3], str(r[3])] for r in rows])
    return rows


def run_profiles(config: RunConfig) -> list[list]:
    p = epe_ene_curves(config)
    rows = [
        [t, a, b, c, d, e, f, str(int(g)), str(int(h))]
        for t, a, b, c, d, e, f, g, h in zip(
            p.times, p.epe, p.ene, p.mean_collateral, p.epe_se, p.ene_se, p.mean_collateral_se, p.epe_count, p.ene_count
        )
    ]
    write_csv(_out_dir(config) / "profiles.csv", PROFILE_HEADER, rows)
    run_forward(config)
    return rows


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cdsxva", description="Counterparty risk on a collateralized CDS.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("price", "spreads, SVA and CVA for the configured margin agreement"),
        ("case-table", "CVA and SVA for each threshold case on common paths"),
        ("profiles", "EPE/ENE/collateral curves and the forward CVA curve"),
        ("forward-cva", "mean forward CVA path by nested simulation"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML run file")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--paths", type=int, help="override the number of paths")
        p.add_argument("--outer-paths", type=int)
        p.add_argument("--inner-paths", type=int)
        p.add_argument("--grid-step", type=float, help="simulation step in years")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    kw = {}
    for attr, val in [
        ("seed", args.seed),
        ("n_paths", args.paths),
        ("outer_paths", args.outer_paths),
        ("inner_paths", args.inner_paths),
        ("grid_step", args.grid_step),
        ("output_dir", args.out),
    ]:
        if val is not None:
            kw[attr] = val
    return replace(config, **kw) if kw else config


def _diagnostic(kind: str, exc: Exception) -> None:
    payload = {"error": kind, "message": str(exc)}
    if isinstance(exc, ConfigError) and exc.path:
        payload["path"] = exc.path
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _apply_overrides(load_config(args.config), args)
        config.require_seed()
        log.info("running %s with seed %d", args.command, config.seed)
        if args.command == "price":
            payload = run_price(config)
            sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        elif args.command == "case-table":
            run_case_table(config)
        elif args.command == "profiles":
            run_profiles(config)
        else:
            run_forward(config)
    except ConfigError as e:
        _diagnostic("config", e)
        return EXIT_CONFIG
    except (CdsXvaError, ValueError) as e:
        _diagnostic(type(e).__name__, e)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
