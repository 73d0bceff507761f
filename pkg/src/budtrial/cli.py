"""Command-line front end: ``budtrial <subcommand> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import config as cfgmod
from . import dp, harness
from .errors import BudError, ConfigError
from .policies import HSchedule


def _resolve(ref: str) -> Path:
    """A scenario file path, or the name of a bundled preset."""
    p = Path(ref)
    if not p.exists() and ref in cfgmod.preset_names():
        return cfgmod.preset_path(ref)
    return p


def _load(args):
    raw = cfgmod.read_json(_resolve(args.config))
    errors = cfgmod.validate(raw)
    if errors:
        raise ConfigError(errors)
    raw = cfgmod.with_overrides(raw, seed=args.seed, reps=args.reps, h=args.h)
    return raw, cfgmod.scenario_from_dict(raw)


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    try:
        out.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise BudError(f"{path}: cannot write ({exc.strerror})") from exc
    return path


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: harness._fmt(r[k]) if isinstance(r[k], float) else r[k] for k in columns})
    return buf.getvalue()


def _finish(args, raw: dict, files: dict, subcommand: str):
    out = Path(args.out)
    written = [_write(out, name, text) for name, text in files.items()]
    written.append(_write(out, "config.json", json.dumps(raw, indent=2, sort_keys=True) + "\n"))
    man = harness.manifest(raw, raw.get("seed", 0))
    man["subcommand"] = subcommand
    written.append(_write(out, "manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n"))
    for p in written:
        print(p)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    raw, cfg = _load(args)
    reports = harness.run_batch(cfg, workers=args.workers)
    js = json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    _finish(args, raw, {"report.csv": harness.reports_to_csv(reports), "report.json": js}, "simulate")


def cmd_regret(args):
    raw, cfg = _load(args)
    if cfg.family != "multi-arm-controlled" or cfg.draws_truth:
        raise ConfigError(["family: the oracle regret curve needs a controlled binary scenario with explicit truth"])
    T_values = args.T or raw.get("sweep", {}).get("T_values") or [cfg.T]
    rows = harness.regret_curve(cfg, T_values, workers=args.workers)
    _finish(args, raw, {"regret.csv": _csv(rows, ("T", "design", "regret", "se", "oracle"))}, "regret")


def cmd_bi(args):
    raw, cfg = _load(args)
    bi = raw.get("bi", {})
    T_values = args.T or bi.get("T_values") or [cfg.T]
    budget = bi.get("budget", dp.DEFAULT_BUDGET)
    rows = []
    for T in T_values:
        if cfg.family == "co-primary":
            res = dp.solve_coprimary(T, bi.get("n_arms", 3), cfg.metric, cfg.designs, cfg.prior,
                                     bi.get("grid", 64), budget)
            gain, value = res.shortfall_pct("gain"), res.shortfall_pct("value")
            for k, v in res.designs.items():
                rows.append({"T": T, "design": k, "value": v, "optimal": res.optimal, "regret": res.optimal - v,
                             "shortfall_gain_pct": gain[k], "shortfall_value_pct": value[k]})
        elif cfg.family in cfgmod.BINARY_FAMILIES:
            n_arms = bi.get("n_arms", cfg.n_arms)
            res = dp.solve_binary(cfg.metric, n_arms, T, cfg.designs, cfg.prior, budget)
            base = res.optimal - res.prior_value
            for k, v in res.designs.items():
                rows.append({"T": T, "design": k, "value": v, "optimal": res.optimal, "regret": res.optimal - v,
                             "shortfall_gain_pct": 100 * (res.optimal - v) / base if base else 0.0,
                             "shortfall_value_pct": 100 * (res.optimal - v) / abs(res.optimal)})
        else:
            raise ConfigError([f"family: backward induction is not available for {cfg.family}"])
    cols = ("T", "design", "value", "optimal", "regret", "shortfall_gain_pct", "shortfall_value_pct")
    _finish(args, raw, {"bi.csv": _csv(rows, cols)}, "bi")


def cmd_oracle(args):
    raw, cfg = _load(args)
    if cfg.family not in cfgmod.BINARY_FAMILIES or cfg.draws_truth:
        raise ConfigError(["family: the oracle needs a binary scenario with explicit truth"])
    theta = cfg.truth_table()
    alloc, value = dp.oracle_allocation(theta, cfg.prior, cfg.T, control=cfg.metric.control)
    rows = [{"arm": "control" if a == 0 and cfg.metric.control else f"arm{a}", "theta": float(theta[a]),
             "allocation": int(alloc[a]), "expected_utility": value} for a in range(theta.size)]
    _finish(args, raw, {"oracle.csv": _csv(rows, ("arm", "theta", "allocation", "expected_utility"))}, "oracle")


def cmd_limits(args):
    raw, cfg = _load(args)
    sig = cfgmod.sigmas_for_limit(cfg)
    if args.h is not None:
        h = float(args.h)
    else:
        buds = [d for d in cfg.designs if d.kind == "BUD"]
        h = buds[0].h.scale if buds else HSchedule().scale
    rho = dp.asymptotic_limit(sig, h)
    rows = [{"arm": a, "sigma": float(sig[a]), "h": h, "proportion": float(rho[a]), "expected_allocation": float(cfg.T * rho[a])}
            for a in range(sig.size)]
    _finish(args, raw, {"limits.csv": _csv(rows, ("arm", "sigma", "h", "proportion", "expected_allocation"))}, "limits")


def cmd_validate(args):
    raw = cfgmod.read_json(_resolve(args.config))
    errors = cfgmod.validate(raw)
    if errors:
        raise ConfigError(errors)
    print(f"{args.config}: valid")


def cmd_presets(args):
    if args.name:
        print(cfgmod.preset_path(args.name).read_text(), end="")
        return
    for name in cfgmod.preset_names():
        d = cfgmod.read_json(cfgmod.preset_path(name))
        print(f"{name}\t{d.get('description', '')}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="budtrial", description="Uncertainty-directed adaptive trial simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="scenario JSON file or bundled preset name")
        if out:
            p.add_argument("--out", default=".", help="output directory (created if missing)")
            p.add_argument("--seed", type=int, help="override the master seed")
            p.add_argument("--reps", type=int, help="override the number of replications")
            p.add_argument("--workers", type=int, help=f"worker processes (default: ${harness.WORKERS_ENV} or 1)")
            p.add_argument("--h", type=float, help="override the exponent of every uncertainty-directed design")
        return p

    common(sub.add_parser("simulate", help="simulate every design and write operating characteristics")).set_defaults(fn=cmd_simulate)
    p = common(sub.add_parser("regret", help="regret against the fixed-allocation oracle over a range of T"))
    p.add_argument("--T", type=int, nargs="+", help="sample sizes (default: sweep.T_values)")
    p.set_defaults(fn=cmd_regret)
    p = common(sub.add_parser("bi", help="exact optimal design and exact design values by backward induction"))
    p.add_argument("--T", type=int, nargs="+", help="horizons (default: bi.T_values)")
    p.set_defaults(fn=cmd_bi)
    common(sub.add_parser("oracle", help="best fixed allocation for the scenario's true rates")).set_defaults(fn=cmd_oracle)
    common(sub.add_parser("limits", help="limiting allocation proportions of the uncertainty-directed rule")).set_defaults(fn=cmd_limits)
    common(sub.add_parser("validate", help="check a scenario file"), out=False).set_defaults(fn=cmd_validate)
    p = sub.add_parser("presets", help="list bundled scenario files, or print one")
    p.add_argument("name", nargs="?")
    p.set_defaults(fn=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 1
    except BudError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
