"""Fiber link between APs: trigger messaging with clock-domain-crossing jitter.

Frequency distribution over the link is treated as ideal; only the trigger
latency is modeled. Latency is a fixed base plus a whole number of WR system
clock cycles drawn per message.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .sim import rng_stream, stream_id

TURNAROUND_NS = 5_000
START_ALIGNMENT_NS = 400


@dataclass(frozen=True)
class FiberLinkConfig:
    one_way_base_ns: int = 1917
    wr_clock_hz: float = 62.5e6
    jitter_cycles_max: int = 3
    jitter_mode: str = "one_sided"
    up: bool = True

    def __post_init__(self):
        if self.jitter_mode not in ("one_sided", "symmetric"):
            raise ValueError(f"jitter_mode must be one_sided or symmetric, not {self.jitter_mode!r}")
        if self.jitter_cycles_max < 0 or self.one_way_base_ns < 0:
            raise ValueError("latency parameters must be >= 0")
        q = 1e9 / self.wr_clock_hz
        if abs(q - round(q)) > 1e-9:
            raise ValueError(f"WR clock period {q} ns is not a whole number of ns")

    @property
    def quantum_ns(self) -> int:
        return round(1e9 / self.wr_clock_hz)

    @property
    def jitter_bound_ns(self) -> int:
        return self.jitter_cycles_max * self.quantum_ns

    @property
    def cycle_range(self) -> tuple[int, int]:
        m = self.jitter_cycles_max
        return (0, m) if self.jitter_mode == "one_sided" else (-m, m)

    def latency_bounds(self) -> tuple[int, int]:
        lo, hi = self.cycle_range
        return self.one_way_base_ns + lo * self.quantum_ns, self.one_way_base_ns + hi * self.quantum_ns

    def one_way_moments(self) -> tuple[float, float]:
        """Mean and variance of one leg's latency in ns (discrete uniform jitter)."""
        lo, hi = self.cycle_range
        n = hi - lo + 1
        mean = self.one_way_base_ns + self.quantum_ns * (lo + hi) / 2
        var = self.quantum_ns ** 2 * (n * n - 1) / 12
        return mean, var


@dataclass(frozen=True)
class TriggerMsg:
    initiator: str
    alloc_ref: str
    tx_start_hint: int
    cs_required: bool = True


def draw_cycles(link: FiberLinkConfig, rng: np.random.Generator, size=None):
    lo, hi = link.cycle_range
    return rng.integers(lo, hi + 1, size=size)


def send_trigger(link: FiberLinkConfig, msg: TriggerMsg, t: int,
                 rng: np.random.Generator) -> Optional[int]:
    """Delivery time of ``msg`` sent at ``t``, or None when the link is down."""
    if not link.up:
        return None
    return int(t + link.one_way_base_ns + int(draw_cycles(link, rng)) * link.quantum_ns)


def round_trip(link: FiberLinkConfig, t: int, rng_out: np.random.Generator,
               rng_back: np.random.Generator) -> Optional[int]:
    probe = TriggerMsg("rtt", "", t, False)
    there = send_trigger(link, probe, t, rng_out)
    if there is None:
        return None
    back = send_trigger(link, probe, there, rng_back)
    return None if back is None else back - t


def calibrated_base_ns(target_rtt_ns: float, link: FiberLinkConfig) -> int:
    """Base latency whose expected round trip equals ``target_rtt_ns`` under ``link``'s jitter."""
    lo, hi = link.cycle_range
    return round(target_rtt_ns / 2 - link.quantum_ns * (lo + hi) / 2)


def analytic_rtt(link: FiberLinkConfig) -> tuple[float, float]:
    mean, var = link.one_way_moments()
    return 2 * mean, math.sqrt(2 * var)


@dataclass
class TriggerStats:
    link: FiberLinkConfig
    rtt_ns: dict[str, np.ndarray]
    one_way_ns: np.ndarray

    @property
    def all_rtt(self) -> np.ndarray:
        return np.concatenate(list(self.rtt_ns.values()))

    @property
    def mean_ns(self) -> float:
        return float(self.all_rtt.mean())

    @property
    def std_ns(self) -> float:
        return float(self.all_rtt.std(ddof=1))

    @property
    def one_way_spread_ns(self) -> int:
        return int(self.one_way_ns.max() - self.one_way_ns.min())

    def per_side(self) -> dict[str, tuple[float, float]]:
        return {k: (float(v.mean()), float(v.std(ddof=1))) for k, v in self.rtt_ns.items()}


def trigger_statistics(link: FiberLinkConfig, trials_per_side: int, seed: int,
                       sides=("AP1", "AP2")) -> TriggerStats:
    """Ping-pong triggers initiated from each side in turn; the peer echoes on receipt."""
    a, b = sides
    fwd = rng_stream(seed, stream_id(f"{a}->{b}", "fiber"))
    rev = rng_stream(seed, stream_id(f"{b}->{a}", "fiber"))
    q, base = link.quantum_ns, link.one_way_base_ns
    legs_ab = base + q * draw_cycles(link, fwd, 2 * trials_per_side)
    legs_ba = base + q * draw_cycles(link, rev, 2 * trials_per_side)
    n = trials_per_side
    rtt = {a: legs_ab[:n] + legs_ba[:n], b: legs_ba[n:] + legs_ab[n:]}
    return TriggerStats(link, rtt, np.concatenate((legs_ab, legs_ba)).astype(np.int64))


@dataclass(frozen=True)
class TriggerLogRow:
    t_send_ns: int
    t_deliver_ns: int
    initiator: str
    withdrawn: bool


def write_trigger_log(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_send_ns", "t_deliver_ns", "initiator", "withdrawn"])
        for r in rows:
            w.writerow([r.t_send_ns, r.t_deliver_ns, r.initiator, int(r.withdrawn)])
    return path
