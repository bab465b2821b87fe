"""Run a scenario end to end, write its artifacts and evaluate its checks."""
from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .backhaul import TriggerStats, trigger_statistics, write_trigger_log
from .clock import CfoResult, exceedance_point
from .mac import MacSim, RunMetrics
from .scenario import Scenario, build_scenario, set_dotted
from .sim import derive_seed, to_us, us

OUT_ENV = "COOFDMA_OUT"
DEFAULT_OUT = "coofdma-out"


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class RunReport:
    scenario: Scenario
    out_dir: Path
    runs: dict = field(default_factory=dict)
    cfo: Optional[CfoResult] = None
    trigger: Optional[TriggerStats] = None
    files: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary_text(self) -> str:
        return compare(self)


def _fmt_us(ns: Optional[int]) -> str:
    return "n/a" if ns is None else f"{to_us(ns):.3f}"


def run_mac(sc: Scenario, scheme: str, n_sym_override=..., use_numba=None) -> RunMetrics:
    n_sym = sc.n_sym_override if n_sym_override is ... else n_sym_override
    sim = MacSim(sc.topology, sc.packets(scheme), scheme, sc.mac, sc.seed, sc.backhaul,
                 sc.co_ofdma.participants, sc.co_ofdma.cs_required, sc.co_ofdma.bss_color,
                 sc.co_ofdma.sig_b_syms, n_sym, use_numba)
    return sim.run(sc.sim_duration_ns)


def _write_allocations(m: RunMetrics, path: Path) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["txop", "initiator", "grant_ns", "ap", "sta_id", "ru", "mcs", "n_sym",
                    "duration_us", "padded", "start_ns", "withdrawn"])
        for t in m.txops:
            for ap, sid, size, idx, mcs, n_sym, dur in t.alloc.dump_rows():
                w.writerow([t.txop, t.initiator, t.grant, ap, sid, f"RU{size}-{idx}", mcs, n_sym,
                            f"{dur:.1f}", int(sid in t.alloc.padded), t.starts.get(ap, ""),
                            int(ap in t.withdrawn)])
    return path


def _write_cfo(res: CfoResult, out: Path) -> list[Path]:
    files = []
    for name in res.closed:
        files.append(res.series(name).write_csv(out / f"cfo_{name}.csv"))
    if len(res.closed) >= 2:
        a, _ = res._pair()
        path = out / "cfo_diff.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "diff_hz", "loop"])
            k = res.settle_periods
            for t, d in zip(res.closed[a].time_s[k:], res.steady_difference_hz()):
                w.writerow([f"{t:.1f}", f"{d:.3f}", "closed"])
            if a in res.open:
                for t, d in zip(res.open[a].time_s, res.open_difference_hz()):
                    w.writerow([f"{t:.1f}", f"{d:.3f}", "open"])
        files.append(path)
    return files


def _write_rtt(stats: TriggerStats, path: Path) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["initiator", "trial", "rtt_ns"])
        for side, vals in stats.rtt_ns.items():
            for i, v in enumerate(vals):
                w.writerow([side, i, int(v)])
    return path


def evaluate_checks(rep: RunReport) -> list[Check]:
    e = rep.scenario.expect
    runs = rep.runs
    out: list[Check] = []

    def completion(key) -> Optional[int]:
        m = runs.get(key)
        return None if m is None else m.completion_ns

    def exact(name, key):
        want = us(e[name])
        got = completion(key)
        out.append(Check(name, got == want, f"{_fmt_us(got)} us (expected {to_us(want):.3f} us)"))

    if "rtscts_completion_us" in e:
        exact("rtscts_completion_us", "RTSCTS")
    if "co_ofdma_completion_us" in e:
        exact("co_ofdma_completion_us", "CO_OFDMA")
    if "co_ofdma_standard_completion_us" in e:
        exact("co_ofdma_standard_completion_us",
              "CO_OFDMA_std" if "CO_OFDMA_std" in runs else "CO_OFDMA")
    if "co_ofdma_faster" in e:
        a, b = completion("CO_OFDMA"), completion("RTSCTS")
        ok = a is not None and b is not None and (a < b) == bool(e["co_ofdma_faster"])
        out.append(Check("co_ofdma_faster", ok, f"{_fmt_us(a)} us vs {_fmt_us(b)} us"))
    main = {k: m for k, m in runs.items() if not k.endswith("_std")}
    if "max_collisions" in e:
        worst = max((m.collision_count for m in main.values()), default=0)
        out.append(Check("max_collisions", worst <= e["max_collisions"],
                         f"{worst} collided frames (limit {e['max_collisions']})"))
    if "all_delivered" in e:
        got = all(m.complete for m in main.values())
        counts = ", ".join(f"{k} {len(m.delivered)}/{len(m.packets)}" for k, m in main.items())
        out.append(Check("all_delivered", got == bool(e["all_delivered"]), counts or "no runs"))
    if "withdrawals" in e:
        m = runs.get("CO_OFDMA")
        n = None if m is None else sum(r.withdrawn for r in m.triggers)
        out.append(Check("withdrawals", n == e["withdrawals"], f"{n} (expected {e['withdrawals']})"))
    if "max_start_skew_ns" in e:
        m = runs.get("CO_OFDMA")
        skew = None if m is None else m.max_start_skew_ns
        out.append(Check("max_start_skew_ns", skew is not None and skew <= e["max_start_skew_ns"],
                         f"{skew} ns (limit {e['max_start_skew_ns']} ns)"))
    if "nav_respected" in e:
        bad = sum(len(m.nav_violations()) for m in runs.values())
        out.append(Check("nav_respected", (bad == 0) == bool(e["nav_respected"]),
                         f"{bad} transmissions inside a NAV reservation"))

    res = rep.cfo
    if res is not None:
        if "cfo_steady_max_hz" in e:
            d = np.abs(res.steady_difference_hz())
            out.append(Check("cfo_steady_max_hz", bool(d.max() <= e["cfo_steady_max_hz"]),
                             f"max |df| {d.max():.3f} Hz (limit {e['cfo_steady_max_hz']} Hz)"))
        if "cfo_exceedance_max_hz" in e:
            x = exceedance_point(res.steady_difference_hz(), 0.1)
            out.append(Check("cfo_exceedance_max_hz", x <= e["cfo_exceedance_max_hz"],
                             f"10% exceedance {x:.3f} Hz (limit {e['cfo_exceedance_max_hz']} Hz)"))
        if "cfo_open_loop_exceeds_hz" in e:
            t = res.first_exceedance_s(e["cfo_open_loop_exceeds_hz"])
            out.append(Check("cfo_open_loop_exceeds_hz", t is not None,
                             "never within horizon" if t is None else f"after {t:.1f} s"))
        if "cfo_converge_periods" in e:
            conv = res.converged_within(100.0)
            ok = all(v is not None and v <= e["cfo_converge_periods"] for v in conv.values())
            out.append(Check("cfo_converge_periods", ok,
                             ", ".join(f"{k} {v}" for k, v in conv.items())
                             + f" (limit {e['cfo_converge_periods']})"))
        if "cfo_quant_bound_hz" in e:
            err = max(float(np.max(np.abs(s.est_hz - s.true_hz))) for s in res.closed.values())
            out.append(Check("cfo_quant_bound_hz", err <= e["cfo_quant_bound_hz"] + 1e-6,
                             f"max |est - true| {err:.3f} Hz (limit {e['cfo_quant_bound_hz']} Hz)"))
    st = rep.trigger
    if st is not None:
        if "rtt_mean_ns" in e:
            tol = e.get("rtt_mean_tol_ns", 20)
            out.append(Check("rtt_mean_ns", abs(st.mean_ns - e["rtt_mean_ns"]) <= tol,
                             f"{st.mean_ns:.2f} ns (expected {e['rtt_mean_ns']} +/- {tol} ns)"))
        if "one_way_spread_max_ns" in e:
            out.append(Check("one_way_spread_max_ns", st.one_way_spread_ns <= e["one_way_spread_max_ns"],
                             f"{st.one_way_spread_ns} ns (limit {e['one_way_spread_max_ns']} ns)"))
    known = {c.name for c in out} | {"rtt_mean_tol_ns"}
    for name in sorted(set(e) - known):
        out.append(Check(name, False, "no data in this scenario to evaluate it"))
    return out


def run_scenario(sc: Scenario, out_dir=None, plots: bool = False, use_numba=None) -> RunReport:
    out = Path(out_dir) if out_dir is not None else default_out_dir() / sc.name
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    rep = RunReport(sc, out)
    if sc.topology is not None and sc.traffic:
        for scheme in sc.schemes:
            m = run_mac(sc, scheme, use_numba=use_numba)
            rep.runs[scheme] = m
            rep.files.append(m.write_packets_csv(out / f"packets_{scheme}.csv"))
            rep.files.append(m.write_frames_csv(out / f"frames_{scheme}.csv"))
            if scheme == "CO_OFDMA":
                rep.files.append(write_trigger_log(m.triggers, out / "triggers_CO_OFDMA.csv"))
                rep.files.append(_write_allocations(m, out / "allocations_CO_OFDMA.csv"))
                if sc.n_sym_override is not None:
                    std = run_mac(sc, scheme, None, use_numba)
                    rep.runs["CO_OFDMA_std"] = std
                    rep.files.append(std.write_packets_csv(out / "packets_CO_OFDMA_std.csv"))
    if sc.clock is not None:
        rep.cfo = sc.clock.run(use_numba=use_numba)
        rep.files += _write_cfo(rep.cfo, out)
    if sc.trigger_stats is not None:
        rep.trigger = trigger_statistics(sc.backhaul, sc.trigger_stats.trials, sc.seed,
                                         sc.trigger_stats.sides)
        rep.files.append(_write_rtt(rep.trigger, out / "trigger_rtt.csv"))
    rep.checks = evaluate_checks(rep)
    summary = out / "summary.txt"
    summary.write_text(compare(rep))
    rep.files.append(summary)
    if plots:
        from . import plots as _plots
        rep.files += _plots.render(rep, out)
    return rep


def compare(rep: RunReport) -> str:
    """Plain-text summary: per-scheme metrics, the scheme comparison and check verdicts."""
    sc = rep.scenario
    lines = [f"scenario {sc.name} seed {sc.seed}"]
    for key, m in rep.runs.items():
        label = "CO_OFDMA standard n_sym" if key == "CO_OFDMA_std" else key
        parts = [f"completion_us={_fmt_us(m.completion_ns)}", f"airtime_us={_fmt_us(m.airtime_ns)}",
                 f"collision_count={m.collision_count}", f"retries={m.retries}",
                 f"delivered={len(m.delivered)}/{len(m.packets)}"]
        if key.startswith("CO_OFDMA"):
            parts += [f"txops={len(m.txops)}", f"max_start_skew_ns={m.max_start_skew_ns}",
                      f"withdrawals={sum(r.withdrawn for r in m.triggers)}"]
        lines.append(f"[{label}] " + " ".join(parts))
    a, b = rep.runs.get("RTSCTS"), rep.runs.get("CO_OFDMA")
    if a is not None and b is not None and a.completion_ns and b.completion_ns:
        lines.append(f"compare: completion RTSCTS/CO_OFDMA = {a.completion_ns / b.completion_ns:.4f}"
                     f" airtime RTSCTS/CO_OFDMA = {a.airtime_ns / b.airtime_ns:.4f}")
    if rep.cfo is not None:
        res = rep.cfo
        for name, s in res.closed.items():
            conv = res.converged_within(100.0)[name]
            lines.append(f"[clock {name}] start_hz={s.true_hz[0]:.3f} final_hz={s.operating_hz[-1]:.3f}"
                         f" converged_periods={conv}"
                         f" tunings_per_min={res.tuning_events_per_min()[name]:.3f}")
        if len(res.closed) >= 2:
            d = res.steady_difference_hz()
            lines.append(f"[clock diff] periods={d.size} max_abs_hz={np.abs(d).max():.3f}"
                         f" exceedance10_hz={exceedance_point(d, 0.1):.3f}")
            if res.open:
                t = res.first_exceedance_s(350.0)
                lines.append("[clock open loop] first |df|>350 Hz after "
                             + ("never" if t is None else f"{t:.1f} s"))
    if rep.trigger is not None:
        st = rep.trigger
        sides = " ".join(f"{k}_mean_ns={v[0]:.2f} {k}_std_ns={v[1]:.2f}"
                         for k, v in st.per_side().items())
        lines.append(f"[trigger] trials={st.all_rtt.size} mean_ns={st.mean_ns:.2f}"
                     f" std_ns={st.std_ns:.2f} one_way_spread_ns={st.one_way_spread_ns} {sides}")
    lines.append("checks:")
    lines += [f"  {c.line()}" for c in rep.checks] or ["  (none)"]
    lines.append(f"verdict: {'PASS' if rep.ok else 'FAIL'}")
    return "\n".join(lines) + "\n"


# -- sweeps ------------------------------------------------------------------------


def sweep_points(params: dict) -> list[dict]:
    keys = list(params)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(params[k] for k in keys))]


def _sweep_worker(raw: dict, point_id: str, out_dir: str, use_numba) -> dict:
    sc = build_scenario(raw, "", point_id)
    rep = run_scenario(sc, Path(out_dir) / point_id, use_numba=use_numba)
    row = {"point": point_id, "seed": sc.seed}
    for key, m in rep.runs.items():
        row[f"{key}_completion_us"] = _fmt_us(m.completion_ns)
        row[f"{key}_collisions"] = m.collision_count
    row["checks_failed"] = sum(not c.passed for c in rep.checks)
    return row


def run_sweep(sc: Scenario, params: dict, out_dir, jobs: Optional[int] = None,
              use_numba=None) -> list[dict]:
    """Cartesian sweep over dotted scenario keys; point ``i`` gets seed ``derive_seed(seed, i)``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    points = sweep_points(params)
    width = max(3, len(str(len(points) - 1)))
    for i, point in enumerate(points):
        raw = sc.raw
        for k, v in point.items():
            raw = set_dotted(raw, k, v)
        raw = set_dotted(raw, "seed", derive_seed(sc.seed, i))
        build_scenario(raw, "", sc.name)  # fail fast on a bad point
        tasks.append((raw, f"p{i:0{width}d}", str(out), use_numba))
    if jobs == 1 or len(tasks) <= 1:
        rows = [_sweep_worker(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_worker, *zip(*tasks)))
    for row, point in zip(rows, points):
        for k, v in point.items():
            row[k] = v
    rows.sort(key=lambda r: r["point"])
    cols = ["point", "seed", *params] + sorted({k for r in rows for k in r} - {"point", "seed", *params})
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows
