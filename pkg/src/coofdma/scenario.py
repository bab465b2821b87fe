"""Scenario files: strict TOML with every field checked before anything runs."""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .backhaul import FiberLinkConfig, calibrated_base_ns
from .clock import (CARRIER_CH1_HZ, CfoEstimatorConfig, CfoExperiment, OscillatorState,
                    TuningControllerConfig, drift_per_s)
from .mac import MacParams, Packet, Topology
from .sim import us

SCHEMES = ("RTSCTS", "CO_OFDMA", "BOTH")

# allowed keys per section; a nested dict value means a sub-table with its own keys
_TOP = {"name", "description", "seed", "scheme", "sim_duration_us", "topology", "traffic", "mac",
        "overrides", "co_ofdma", "backhaul", "clock", "trigger_stats", "expect"}
_TOPOLOGY = {"links", "one_way", "aps", "stas"}
_AP = {"channel"}
_STA = {"ap", "sta_id"}
_TRAFFIC = {"ap", "sta", "bytes", "enqueue_us", "rtscts_enqueue_us", "mcs", "count", "interval_us"}
_MAC = {"sifs_us", "difs_us", "slot_us", "cw_min", "cw_max", "retry_limit", "rts_threshold",
        "ack_enabled", "deterministic_backoff", "control_rate_mbps"}
_OVERRIDES = {"n_sym", "backoff"}
_CO = {"participants", "cs_required", "bss_color", "sig_b_syms"}
_BACKHAUL = {"one_way_base_ns", "target_rtt_ns", "wr_clock_hz", "jitter_cycles_max",
             "jitter_mode", "up"}
_CLOCK = {"duration_s", "carrier_hz", "nominal_hz", "ref_hz", "period_s", "deadband_counts",
          "max_step_per_period", "enabled", "settle_periods", "open_loop_s",
          "open_loop_drift_ppm_per_min", "ap"}
_CLOCK_AP = {"offset_ppm", "offset_hz", "drift_ppm_per_min", "tuning_lsb_ppm",
             "stability_bound_ppm"}
_TRIGGER_STATS = {"trials", "sides"}
EXPECT_KEYS = {
    "rtscts_completion_us", "co_ofdma_completion_us", "co_ofdma_standard_completion_us",
    "co_ofdma_faster", "max_collisions", "all_delivered", "withdrawals", "max_start_skew_ns",
    "nav_respected", "cfo_steady_max_hz", "cfo_exceedance_max_hz", "cfo_open_loop_exceeds_hz",
    "cfo_converge_periods", "cfo_quant_bound_hz", "rtt_mean_ns", "rtt_mean_tol_ns",
    "one_way_spread_max_ns",
}


class ScenarioError(ValueError):
    def __init__(self, errors: list[str], source: str = "<scenario>"):
        self.errors = errors
        self.source = source
        super().__init__(f"{source}: " + "; ".join(errors) if len(errors) == 1 else
                         f"{source}: {len(errors)} errors\n  " + "\n  ".join(errors))


@dataclass
class TrafficEntry:
    ap: str
    sta: str
    bytes: int
    enqueue_ns: int
    rtscts_enqueue_ns: Optional[int] = None
    mcs: int = 7
    count: int = 1
    interval_ns: int = 0


@dataclass
class CoOfdmaConfig:
    participants: Optional[list] = None
    cs_required: bool = True
    bss_color: int = 0
    sig_b_syms: int = 1


@dataclass
class TriggerStatsConfig:
    trials: int = 1000
    sides: tuple = ("AP1", "AP2")


@dataclass
class Scenario:
    name: str
    seed: int
    scheme: str
    topology: Optional[Topology]
    traffic: list
    mac: MacParams
    co_ofdma: CoOfdmaConfig
    backhaul: FiberLinkConfig
    n_sym_override: Optional[int] = None
    sim_duration_ns: Optional[int] = None
    clock: Optional[CfoExperiment] = None
    trigger_stats: Optional[TriggerStatsConfig] = None
    expect: dict = field(default_factory=dict)
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def schemes(self) -> list[str]:
        return ["RTSCTS", "CO_OFDMA"] if self.scheme == "BOTH" else [self.scheme]

    def packets(self, scheme: str) -> list[Packet]:
        out, pid = [], 0
        for t in self.traffic:
            t0 = t.rtscts_enqueue_ns if scheme == "RTSCTS" and t.rtscts_enqueue_ns is not None \
                else t.enqueue_ns
            for k in range(t.count):
                out.append(Packet(pid, t.ap, t.sta, t.bytes, t0 + k * t.interval_ns, t.mcs))
                pid += 1
        return out

    def with_seed(self, seed: int) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        exp = None if self.clock is None else replace(self.clock, seed=seed)
        return replace(self, seed=seed, clock=exp, raw=raw)


def _line_of(text: str, path: tuple) -> Optional[int]:
    """Best-effort line number of the key at ``path`` inside ``text``."""
    path = tuple(path)
    while path and isinstance(path[-1], int):
        path = path[:-1]  # element of an inline array: point at the array's key
    if not text or not path:
        return None
    lines = text.splitlines()
    pos, found = 0, None
    for n in range(1, len(path)):
        name = ".".join(str(p) for p in path[:n] if not isinstance(p, int))
        if n < len(path) and isinstance(path[n], int):
            pat = re.compile(r"^\s*\[\[\s*" + re.escape(name) + r"\s*\]\]")
            hits = [i for i in range(pos, len(lines)) if pat.match(lines[i])]
            if len(hits) > path[n]:
                pos = found = hits[path[n]]
        elif not isinstance(path[n - 1], int):
            pat = re.compile(r"^\s*\[\s*" + re.escape(name) + r"\s*\]")
            hit = next((i for i in range(pos, len(lines)) if pat.match(lines[i])), None)
            if hit is not None:
                pos = found = hit
    key = str(path[-1])
    key_pat = re.compile(r'^\s*"?' + re.escape(key) + r'"?\s*=')
    hdr_pat = re.compile(r"^\s*\[\[?\s*[^\]]*\.?" + re.escape(key) + r"\s*\]\]?")
    for i in range(pos, len(lines)):
        if i > pos and found is not None and lines[i].lstrip().startswith("[["):
            break
        if key_pat.match(lines[i]) or hdr_pat.match(lines[i]):
            return i + 1
    return None if found is None else found + 1


class _Checker:
    def __init__(self, text: str):
        self.text = text
        self.errors: list[str] = []

    def err(self, path: tuple, msg: str):
        dotted = ".".join(f"[{p}]" if isinstance(p, int) else str(p) for p in path)
        line = _line_of(self.text, path)
        where = f"line {line}: " if line else ""
        self.errors.append(f"{where}{dotted}: {msg}")

    def keys(self, table, allowed: set, path: tuple):
        if not isinstance(table, dict):
            self.err(path, f"expected a table, got {type(table).__name__}")
            return False
        for k in table:
            if k not in allowed:
                self.err(path + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return True

    def get(self, table: dict, key: str, kind, path: tuple, default=None, required=False,
            check=None, what=""):
        if key not in table:
            if required:
                self.err(path + (key,), "missing required key")
            return default
        v = table[key]
        kinds = kind if isinstance(kind, tuple) else (kind,)
        ok = isinstance(v, kinds) and not (isinstance(v, bool) and bool not in kinds)
        if not ok:
            names = "/".join(k.__name__ for k in kinds)
            self.err(path + (key,), f"expected {names}, got {v!r}")
            return default
        if check is not None and not check(v):
            self.err(path + (key,), f"{v!r} is not {what}")
            return default
        return v


def _nonneg(v):
    return v >= 0


def _pos(v):
    return v > 0


def _us_ns(c: _Checker, table, key, path, default=None, required=False):
    v = c.get(table, key, (int, float), path, default, required, _nonneg, ">= 0")
    if v is None:
        return None
    try:
        return us(v)
    except ValueError as e:
        c.err(path + (key,), str(e))
        return None


def build_scenario(raw: dict, text: str = "", source: str = "<scenario>") -> Scenario:
    c = _Checker(text)
    c.keys(raw, _TOP, ())
    seed = c.get(raw, "seed", int, (), required=True, check=_nonneg, what="a u64")
    name = c.get(raw, "name", str, (), default=Path(source).stem)
    scheme = c.get(raw, "scheme", str, (), default="BOTH", check=lambda s: s in SCHEMES,
                   what=f"one of {SCHEMES}")
    sim_dur = _us_ns(c, raw, "sim_duration_us", ())

    topo, ap_names, sta_map = None, [], {}
    t = raw.get("topology")
    if t is not None and c.keys(t, _TOPOLOGY, ("topology",)):
        aps, stas = {}, {}
        for ap, tbl in (t.get("aps") or {}).items():
            p = ("topology", "aps", ap)
            if c.keys(tbl, _AP, p):
                ch = c.get(tbl, "channel", int, p, required=True, check=lambda x: 1 <= x <= 14,
                           what="a 2.4 GHz channel 1..14")
                if ch is not None:
                    aps[ap] = ch
        seen_ids, rejected = {}, set()
        for sta, tbl in (t.get("stas") or {}).items():
            p = ("topology", "stas", sta)
            if not c.keys(tbl, _STA, p):
                continue
            ap = c.get(tbl, "ap", str, p, required=True)
            sid = c.get(tbl, "sta_id", int, p, required=True, check=lambda x: 0 <= x < 2048,
                        what="an 11-bit id")
            if ap is not None and ap not in aps:
                c.err(p + ("ap",), f"unknown AP {ap!r}")
                continue
            if sid is not None and sid in seen_ids:
                c.err(p + ("sta_id",), f"duplicate sta_id {sid} (also {seen_ids[sid]})")
                rejected.add(sta)
                continue
            if ap is not None and sid is not None:
                seen_ids[sid] = sta
                stas[sta] = (ap, sid)
        names = set(aps) | set(stas) | rejected
        pairs = {}
        for key in ("links", "one_way"):
            lst = c.get(t, key, list, ("topology",), default=[])
            good = []
            for i, pr in enumerate(lst):
                if (not isinstance(pr, list) or len(pr) != 2
                        or not all(isinstance(x, str) for x in pr)):
                    c.err(("topology", key, i), f"expected a pair of node names, got {pr!r}")
                elif not set(pr) <= names:
                    c.err(("topology", key, i), f"unknown node in {pr!r}")
                elif not set(pr) & rejected:
                    good.append(tuple(pr))
            pairs[key] = good
        if aps:
            ap_names, sta_map = list(aps), stas
            try:
                topo = Topology.build(aps, stas, pairs["links"], pairs["one_way"])
            except ValueError as e:
                c.err(("topology",), str(e))

    traffic = []
    tr = raw.get("traffic", [])
    if not isinstance(tr, list):
        c.err(("traffic",), "expected an array of tables ([[traffic]])")
        tr = []
    if tr and topo is None:
        c.err(("traffic",), "traffic needs a [topology] with APs")
    for i, e in enumerate(tr):
        p = ("traffic", i)
        if not c.keys(e, _TRAFFIC, p):
            continue
        ap = c.get(e, "ap", str, p, required=True)
        sta = c.get(e, "sta", str, p, required=True)
        nbytes = c.get(e, "bytes", int, p, required=True, check=_pos, what="> 0")
        enq = _us_ns(c, e, "enqueue_us", p, default=0)
        enq_rts = _us_ns(c, e, "rtscts_enqueue_us", p)
        mcs = c.get(e, "mcs", int, p, default=7, check=lambda x: 0 <= x <= 11, what="MCS 0..11")
        count = c.get(e, "count", int, p, default=1, check=_pos, what="> 0")
        interval = _us_ns(c, e, "interval_us", p, default=0)
        if topo is not None and ap is not None and sta is not None:
            if sta in rejected:
                continue
            if sta not in sta_map:
                c.err(p + ("sta",), f"{sta!r} is not an associated STA")
                continue
            if sta_map[sta][0] != ap:
                c.err(p + ("sta",), f"{sta} is associated with {sta_map[sta][0]}, not {ap}")
                continue
        if None not in (ap, sta, nbytes, enq, mcs, count, interval):
            traffic.append(TrafficEntry(ap, sta, nbytes, enq, enq_rts, mcs, count, interval))

    m = raw.get("mac", {})
    mac_kw = {}
    if c.keys(m, _MAC, ("mac",)):
        for k in ("sifs_us", "difs_us", "slot_us"):
            v = _us_ns(c, m, k, ("mac",))
            if v is not None:
                mac_kw[k[:-3]] = v
        for k in ("cw_min", "cw_max", "retry_limit", "rts_threshold", "control_rate_mbps"):
            v = c.get(m, k, int, ("mac",), check=_nonneg, what=">= 0")
            if v is not None:
                mac_kw[k] = v
        for k in ("ack_enabled", "deterministic_backoff"):
            v = c.get(m, k, bool, ("mac",))
            if v is not None:
                mac_kw[k] = v

    o = raw.get("overrides", {})
    n_sym = None
    if c.keys(o, _OVERRIDES, ("overrides",)):
        n_sym = c.get(o, "n_sym", int, ("overrides",), check=_pos, what=">= 1")
        if "backoff" in o:
            b = o["backoff"]
            forced = None
            if isinstance(b, int) and not isinstance(b, bool) and b >= 0:
                forced = {ap: b for ap in ap_names}
            elif isinstance(b, dict):
                forced = {}
                for ap, v in b.items():
                    ok_int = isinstance(v, int) and not isinstance(v, bool) and v >= 0
                    ok_list = isinstance(v, list) and all(
                        isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in v)
                    if ap not in ap_names:
                        c.err(("overrides", "backoff", ap), "unknown AP")
                    elif not (ok_int or ok_list):
                        c.err(("overrides", "backoff", ap), f"expected slots >= 0, got {v!r}")
                    else:
                        forced[ap] = v
            else:
                c.err(("overrides", "backoff"), f"expected slots or a per-AP table, got {b!r}")
            if forced is not None:
                mac_kw["deterministic_backoff"] = True
                mac_kw["backoff_slots"] = forced
    mac = MacParams()
    try:
        mac = MacParams(**mac_kw)
    except ValueError as e:
        c.err(("mac",), str(e))

    co = CoOfdmaConfig()
    cr = raw.get("co_ofdma", {})
    if c.keys(cr, _CO, ("co_ofdma",)):
        parts = c.get(cr, "participants", list, ("co_ofdma",))
        if parts is not None:
            bad = [x for x in parts if x not in ap_names]
            if bad:
                c.err(("co_ofdma", "participants"), f"unknown APs {bad}")
        co = CoOfdmaConfig(
            parts,
            c.get(cr, "cs_required", bool, ("co_ofdma",), default=True),
            c.get(cr, "bss_color", int, ("co_ofdma",), default=0, check=lambda x: 0 <= x < 64,
                  what="a 6-bit color"),
            c.get(cr, "sig_b_syms", int, ("co_ofdma",), default=1, check=_pos, what=">= 1"))

    link = FiberLinkConfig()
    b = raw.get("backhaul", {})
    if c.keys(b, _BACKHAUL, ("backhaul",)):
        kw = {}
        v = c.get(b, "one_way_base_ns", int, ("backhaul",), check=_nonneg, what=">= 0")
        if v is not None:
            kw["one_way_base_ns"] = v
        v = c.get(b, "wr_clock_hz", (int, float), ("backhaul",), check=_pos, what="> 0")
        if v is not None:
            kw["wr_clock_hz"] = float(v)
        v = c.get(b, "jitter_cycles_max", int, ("backhaul",), check=_nonneg, what=">= 0")
        if v is not None:
            kw["jitter_cycles_max"] = v
        v = c.get(b, "jitter_mode", str, ("backhaul",), check=lambda s: s in ("one_sided", "symmetric"),
                  what="one_sided or symmetric")
        if v is not None:
            kw["jitter_mode"] = v
        v = c.get(b, "up", bool, ("backhaul",))
        if v is not None:
            kw["up"] = v
        try:
            link = FiberLinkConfig(**kw)
            target = c.get(b, "target_rtt_ns", (int, float), ("backhaul",), check=_pos, what="> 0")
            if target is not None:
                if "one_way_base_ns" in kw:
                    c.err(("backhaul", "target_rtt_ns"), "give either target_rtt_ns or one_way_base_ns")
                else:
                    link = replace(link, one_way_base_ns=calibrated_base_ns(target, link))
        except ValueError as e:
            c.err(("backhaul",), str(e))

    clock = None
    k = raw.get("clock")
    if k is not None and c.keys(k, _CLOCK, ("clock",)):
        p = ("clock",)
        carrier = float(c.get(k, "carrier_hz", (int, float), p, default=CARRIER_CH1_HZ, check=_pos,
                              what="> 0"))
        est = CfoEstimatorConfig(
            float(c.get(k, "nominal_hz", (int, float), p, default=40e6, check=_pos, what="> 0")),
            float(c.get(k, "ref_hz", (int, float), p, default=125e6, check=_pos, what="> 0")),
            float(c.get(k, "period_s", (int, float), p, default=2.5, check=_pos, what="> 0")))
        ctrl = None
        try:
            ctrl = TuningControllerConfig(
                c.get(k, "deadband_counts", int, p, default=2),
                c.get(k, "max_step_per_period", int, p),
                c.get(k, "enabled", bool, p, default=True))
        except ValueError as e:
            c.err(p, str(e))
        oscs = {}
        for ap, tbl in (k.get("ap") or {}).items():
            q = p + ("ap", ap)
            if not c.keys(tbl, _CLOCK_AP, q):
                continue
            if ("offset_ppm" in tbl) == ("offset_hz" in tbl):
                c.err(q, "give exactly one of offset_ppm or offset_hz")
                continue
            off = c.get(tbl, "offset_ppm", (int, float), q)
            if off is None:
                hz = c.get(tbl, "offset_hz", (int, float), q)
                off = None if hz is None else hz / carrier * 1e6
            drift = c.get(tbl, "drift_ppm_per_min", (int, float), q, default=0.0, check=_nonneg,
                          what=">= 0")
            kw = {}
            for key in ("tuning_lsb_ppm", "stability_bound_ppm"):
                v = c.get(tbl, key, (int, float), q, check=_pos, what="> 0")
                if v is not None:
                    kw[key] = float(v)
            if off is None or drift is None:
                continue
            try:
                oscs[ap] = OscillatorState(float(off), drift_per_s(drift), est.nominal_hz, **kw)
            except ValueError as e:
                c.err(q, str(e))
        if len(oscs) < 1 and not any("clock.ap" in e for e in c.errors):
            c.err(p + ("ap",), "need at least one [clock.ap.<name>] table")
        ol_drift = c.get(k, "open_loop_drift_ppm_per_min", (int, float), p, check=_nonneg,
                         what=">= 0")
        if ctrl is not None and oscs:
            clock = CfoExperiment(
                oscs,
                float(c.get(k, "duration_s", (int, float), p, default=600.0, check=_pos, what="> 0")),
                carrier, est, ctrl,
                c.get(k, "settle_periods", int, p, default=3, check=_nonneg, what=">= 0"),
                float(c.get(k, "open_loop_s", (int, float), p, default=0.0, check=_nonneg,
                            what=">= 0")),
                None if ol_drift is None else drift_per_s(ol_drift),
                0 if seed is None else seed)

    trig = None
    ts = raw.get("trigger_stats")
    if ts is not None and c.keys(ts, _TRIGGER_STATS, ("trigger_stats",)):
        sides = c.get(ts, "sides", list, ("trigger_stats",), default=["AP1", "AP2"],
                      check=lambda s: len(s) == 2 and all(isinstance(x, str) for x in s),
                      what="two node names")
        trig = TriggerStatsConfig(
            c.get(ts, "trials", int, ("trigger_stats",), default=1000, check=_pos, what="> 0"),
            tuple(sides))

    expect = {}
    e = raw.get("expect", {})
    if c.keys(e, EXPECT_KEYS, ("expect",)):
        for key, v in e.items():
            if isinstance(v, bool):
                expect[key] = v
            elif isinstance(v, (int, float)):
                expect[key] = v
            else:
                c.err(("expect", key), f"expected a number or boolean, got {v!r}")

    if c.errors:
        raise ScenarioError(c.errors, source)
    return Scenario(name, seed, scheme, topo, traffic, mac, co, link, n_sym, sim_dur, clock, trig,
                    expect, raw.get("description", ""), copy.deepcopy(raw))


def load_text(text: str, source: str = "<scenario>") -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError([str(e)], source) from None
    return build_scenario(raw, text, source)


def bundled_dir():
    return resources.files("coofdma") / "scenarios"


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in bundled_dir().iterdir() if p.name.endswith(".toml"))


def resolve(path_or_name) -> Path:
    """A scenario path, or the name of a bundled scenario."""
    p = Path(path_or_name)
    if p.exists():
        return p
    cand = bundled_dir() / (p.name if p.suffix == ".toml" else p.name + ".toml")
    if cand.is_file():
        return Path(str(cand))
    raise FileNotFoundError(f"no scenario file or bundled scenario named {path_or_name!r}")


def parse_scenario(path_or_name) -> Scenario:
    path = resolve(path_or_name)
    return load_text(path.read_text(), str(path))


def set_dotted(raw: dict, dotted: str, value: Any) -> dict:
    """Copy of ``raw`` with ``a.b.c = value``; shortcuts ``n_sym`` and ``backoff`` live in [overrides]."""
    out = copy.deepcopy(raw)
    parts = dotted.split(".")
    if parts in (["n_sym"], ["backoff"]):
        parts = ["overrides"] + parts
    node = out
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ScenarioError([f"{dotted}: {p} is not a table"])
    node[parts[-1]] = value
    return out


def parse_value(text: str) -> Any:
    """Interpret a command-line value with TOML rules, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(sc: Scenario, assignments) -> Scenario:
    raw = sc.raw
    for a in assignments:
        if "=" not in a:
            raise ScenarioError([f"override {a!r} is not key=value"])
        key, val = a.split("=", 1)
        raw = set_dotted(raw, key.strip(), parse_value(val.strip()))
    return build_scenario(raw, "", sc.name)

