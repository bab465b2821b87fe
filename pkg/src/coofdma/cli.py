"""Command-line entry point: ``coofdma {run,airtime,cfo-sim,trigger-stats,sweep}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import phy
from .runner import OUT_ENV, default_out_dir, run_scenario, run_sweep
from .scenario import (Scenario, ScenarioError, apply_overrides, build_scenario, bundled_names,
                       parse_scenario, parse_value)
from .sim import to_us

EXIT_FAIL = 1
EXIT_USAGE = 2


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not a u64")
    return v


def _scenario_args(p: argparse.ArgumentParser, default=None):
    p.add_argument("--scenario", required=default is None, default=default,
                   help="scenario file, or the name of a bundled one "
                        f"({', '.join(bundled_names())})")
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./coofdma-out)")
    p.add_argument("--seed", type=_u64, help="master seed; replaces the file's seed")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a scenario value, e.g. n_sym=9, backoff=0 or mac.cw_min=31")
    p.add_argument("--plots", action="store_true", help="also write SVG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="coofdma", description="Simulate coordinated OFDMA across Wi-Fi APs and check the results.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    _scenario_args(sub.add_parser("run", help="run every section of a scenario and check it"))

    a = sub.add_parser("airtime", help="PPDU duration and field layout")
    a.add_argument("--kind", choices=("su", "mu", "legacy"), default="su")
    a.add_argument("--bytes", type=int, default=500)
    a.add_argument("--mcs", type=int, default=7)
    a.add_argument("--ru", type=int, default=242, help="RU tones (26, 52, 106, 242)")
    a.add_argument("--rate", type=int, default=6, help="legacy rate in Mbps")
    a.add_argument("--sig-b", type=int, default=1, help="HE-SIG-B symbols (MU)")
    a.add_argument("--override", action="append", default=[], metavar="n_sym=K")

    _scenario_args(sub.add_parser("cfo-sim", help="run only the clock section"), "cfo_loop")
    t = sub.add_parser("trigger-stats", help="run only the trigger round-trip section")
    _scenario_args(t, "trigger_rtt")
    t.add_argument("--trials", type=int, help="round trips per initiating side")

    s = sub.add_parser("sweep", help="cartesian parameter sweep over a scenario")
    _scenario_args(s)
    s.add_argument("--param", action="append", default=[], metavar="KEY=V1,V2",
                   help="dotted scenario key and its values (comma list or TOML array)")
    s.add_argument("--jobs", type=int, help="worker processes (default: CPU count)")
    return ap


def _load(args) -> Scenario:
    sc = parse_scenario(args.scenario)
    if args.override:
        sc = apply_overrides(sc, args.override)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    return sc


def _only(sc, keep: set, expect_prefix: tuple):
    raw = {k: v for k, v in sc.raw.items() if k not in ("topology", "traffic", "clock",
                                                         "trigger_stats") or k in keep}
    raw["expect"] = {k: v for k, v in raw.get("expect", {}).items() if k.startswith(expect_prefix)}
    return build_scenario(raw, "", sc.name)


def _report(rep) -> int:
    sys.stdout.write(rep.summary_text())
    print(f"outputs in {rep.out_dir}")
    return 0 if rep.ok else EXIT_FAIL


def _out(args, sc) -> Path:
    return args.out if args.out is not None else default_out_dir() / sc.name


def cmd_run(args) -> int:
    sc = _load(args)
    return _report(run_scenario(sc, _out(args, sc), args.plots))


def cmd_cfo(args) -> int:
    sc = _only(_load(args), {"clock"}, ("cfo_",))
    if sc.clock is None:
        raise ScenarioError(["scenario has no [clock] section"], str(args.scenario))
    return _report(run_scenario(sc, _out(args, sc), args.plots))


def cmd_trigger(args) -> int:
    sc = _load(args)
    if args.trials is not None:
        sc = apply_overrides(sc, [f"trigger_stats.trials={args.trials}"])
    sc = _only(sc, {"trigger_stats"}, ("rtt_", "one_way_"))
    if sc.trigger_stats is None:
        raise ScenarioError(["scenario has no [trigger_stats] section"], str(args.scenario))
    return _report(run_scenario(sc, _out(args, sc), args.plots))


def cmd_airtime(args) -> int:
    n_sym = None
    for o in args.override:
        key, _, val = o.partition("=")
        if key.strip() != "n_sym" or not val.strip().isdigit():
            raise ScenarioError([f"airtime accepts only n_sym=<k>, got {o!r}"])
        n_sym = int(val)
    if args.kind == "legacy":
        total = phy.legacy_duration(args.bytes, args.rate)
        print("field,start_us,duration_us")
        print(f"preamble,0.0,{to_us(phy.LEGACY_PREAMBLE):.1f}")
        print(f"data,{to_us(phy.LEGACY_PREAMBLE):.1f},{to_us(total - phy.LEGACY_PREAMBLE):.1f}")
        print(f"total_us={to_us(total):.1f}")
        return 0
    std = phy.he_n_sym(args.bytes, phy.ru_type(args.ru), phy.mcs(args.mcs))
    k = n_sym or std
    rows = phy.field_breakdown(args.kind, k, args.sig_b)
    print("field,start_us,duration_us")
    for name, start, dur in rows:
        print(f"{name},{to_us(start):.1f},{to_us(dur):.1f}")
    total = rows[-1][1] + rows[-1][2]
    print(f"total_us={to_us(total):.1f} n_sym={k} standard_n_sym={std}")
    return 0


def _sweep_values(text: str) -> list:
    v = parse_value(text)
    if isinstance(v, list):
        return v
    return [parse_value(x.strip()) for x in text.split(",")]


def cmd_sweep(args) -> int:
    sc = _load(args)
    params = {}
    for p in args.param:
        key, sep, vals = p.partition("=")
        if not sep or not vals:
            raise ScenarioError([f"--param {p!r} is not KEY=V1,V2"])
        params[key.strip()] = _sweep_values(vals)
    if not params:
        raise ScenarioError(["sweep needs at least one --param"])
    out = args.out if args.out is not None else default_out_dir() / f"{sc.name}-sweep"
    rows = run_sweep(sc, params, out, args.jobs)
    failed = sum(r["checks_failed"] for r in rows)
    print(f"{len(rows)} points, {failed} failed checks; table in {out / 'sweep.csv'}")
    return 0 if failed == 0 else EXIT_FAIL


COMMANDS = {"run": cmd_run, "airtime": cmd_airtime, "cfo-sim": cmd_cfo,
            "trigger-stats": cmd_trigger, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.cmd](args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
