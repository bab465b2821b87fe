"""Crystal oscillator model, cycle-counting CFO estimator and DCXO tuning loop.

Sign convention: a positive tuning word moves the effective frequency up,
so the effective offset is ``offset_ppm + tuning_word * tuning_lsb_ppm`` and
a correction for a positive estimate is a negative tuning delta.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .sim import S, rng_stream, stream_id

CARRIER_CH1_HZ = 2412e6


@dataclass
class OscillatorState:
    offset_ppm: float
    drift_ppm_per_s: float = 0.0
    nominal_hz: float = 40e6
    tuning_word: int = 0
    tuning_lsb_ppm: float = 0.0125
    stability_bound_ppm: float = 18.1

    def __post_init__(self):
        if self.tuning_lsb_ppm <= 0:
            raise ValueError("tuning_lsb_ppm must be > 0")
        if abs(self.offset_ppm) > self.stability_bound_ppm:
            raise ValueError(
                f"initial offset {self.offset_ppm} ppm outside +/-{self.stability_bound_ppm} ppm")
        if self.drift_ppm_per_s < 0:
            raise ValueError("drift scale must be >= 0")

    @property
    def effective_ppm(self) -> float:
        return self.offset_ppm + self.tuning_word * self.tuning_lsb_ppm

    @property
    def tuning_limit(self) -> int:
        """Largest |tuning_word|; the DCXO range is clamped to the crystal's stability bound."""
        return int(math.floor(self.stability_bound_ppm / self.tuning_lsb_ppm + 1e-9))


def drift_per_s(ppm_per_min: float) -> float:
    return ppm_per_min / 60.0


def ppm_to_hz(ppm, carrier_hz: float):
    return ppm * carrier_hz * 1e-6


def true_offset_hz(osc: OscillatorState, carrier_hz: float) -> float:
    if carrier_hz <= 0:
        raise ValueError("carrier_hz must be > 0")
    return ppm_to_hz(osc.effective_ppm, carrier_hz)


def apply_drift(osc: OscillatorState, dt_s: float, rng: np.random.Generator) -> float:
    """Advance the offset random walk by one step of length ``dt_s``; returns the increment."""
    step = float(rng.normal(0.0, osc.drift_ppm_per_s * dt_s)) if osc.drift_ppm_per_s else 0.0
    osc.offset_ppm += step
    return step


@dataclass(frozen=True)
class CfoEstimatorConfig:
    nominal_hz: float = 40e6
    ref_hz: float = 125e6
    period_s: float = 2.5

    @property
    def expected_edges(self) -> int:
        return round(self.nominal_hz * self.period_s)

    @property
    def ref_cycles(self) -> int:
        return round(self.ref_hz * self.period_s)

    @property
    def resolution_ppm(self) -> float:
        return 1e6 / self.expected_edges

    @property
    def period_ns(self) -> int:
        return round(self.period_s * S)


@dataclass(frozen=True)
class CfoSample:
    t: int
    count_deviation: int
    est_ppm: float
    est_hz_at_carrier: float


def measure(osc: OscillatorState, cfg: CfoEstimatorConfig, t: int,
            carrier_hz: float = CARRIER_CH1_HZ, phase: float = 0.0) -> CfoSample:
    """Count LO edges over one reference window.

    ``phase`` in [0, 1) is the LO phase at the window start relative to an
    edge; it makes the count land on either neighbour of the true ratio.
    """
    if not 0.0 <= phase < 1.0:
        raise ValueError("phase must be in [0, 1)")
    count = math.floor(osc.effective_ppm / cfg.resolution_ppm + phase)
    est_ppm = count * cfg.resolution_ppm
    return CfoSample(t, count, est_ppm, ppm_to_hz(est_ppm, carrier_hz))


@dataclass(frozen=True)
class TuningControllerConfig:
    deadband_counts: int = 2
    max_step_per_period: Optional[int] = None
    enabled: bool = True

    def __post_init__(self):
        if self.deadband_counts < 0:
            raise ValueError("deadband_counts must be >= 0")
        if self.max_step_per_period is not None and self.max_step_per_period < 0:
            raise ValueError("max_step_per_period must be >= 0")


def _round_half_away(x: float) -> int:
    r = int(math.floor(abs(x) + 0.5))
    return r if x >= 0 else -r


def control_step(sample: CfoSample, ctrl: TuningControllerConfig,
                 tuning_lsb_ppm: float = 0.0125) -> int:
    """Deadbeat correction in DCXO steps, or 0 inside the deadband."""
    if not ctrl.enabled or abs(sample.count_deviation) <= ctrl.deadband_counts:
        return 0
    delta = -_round_half_away(sample.est_ppm / tuning_lsb_ppm)
    if ctrl.max_step_per_period is not None:
        delta = max(-ctrl.max_step_per_period, min(ctrl.max_step_per_period, delta))
    return delta


def apply_tuning(osc: OscillatorState, delta: int) -> int:
    """Apply ``delta`` within the DCXO range; returns the step actually taken."""
    lim = osc.tuning_limit
    new = max(-lim, min(lim, osc.tuning_word + delta))
    taken = new - osc.tuning_word
    osc.tuning_word = new
    return taken


def exceedance_point(series, fraction: float = 0.1) -> float:
    """Smallest x such that at most ``fraction`` of the |samples| exceed x."""
    a = np.sort(np.abs(np.asarray(series, dtype=float)))
    if a.size == 0:
        raise ValueError("empty series")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    allowed = math.floor(fraction * a.size + 1e-9)
    return float(a[a.size - 1 - allowed])


@dataclass
class CfoSeries:
    """Per-period record for one AP.

    ``true_hz`` is the offset in effect while the period was measured,
    ``operating_hz`` the offset right after that period's correction.
    """
    name: str
    time_s: np.ndarray
    true_hz: np.ndarray
    est_hz: np.ndarray
    counts: np.ndarray
    tuning_word: np.ndarray
    tuned: np.ndarray
    operating_hz: np.ndarray

    def __len__(self):
        return len(self.time_s)

    def concat(self, other: "CfoSeries") -> "CfoSeries":
        return CfoSeries(self.name, *(np.concatenate((getattr(self, f), getattr(other, f)))
                                      for f in ("time_s", "true_hz", "est_hz", "counts",
                                                "tuning_word", "tuned", "operating_hz")))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "true_offset_hz", "est_hz", "tuning_word", "tuned"])
            for row in zip(self.time_s, self.true_hz, self.est_hz, self.tuning_word, self.tuned):
                w.writerow([f"{row[0]:.1f}", f"{row[1]:.3f}", f"{row[2]:.3f}", int(row[3]), int(row[4])])
        return path


def run_loop(name: str, osc: OscillatorState, est: CfoEstimatorConfig,
             ctrl: TuningControllerConfig, n_periods: int, rng: np.random.Generator,
             carrier_hz: float = CARRIER_CH1_HZ, t0_s: float = 0.0,
             use_numba=None) -> CfoSeries:
    """Simulate ``n_periods`` measure/tune cycles and leave ``osc`` at the final state."""
    drift = rng.normal(0.0, osc.drift_ppm_per_s * est.period_s, n_periods) \
        if osc.drift_ppm_per_s else np.zeros(n_periods)
    phases = rng.random(n_periods)
    max_step = -1 if ctrl.max_step_per_period is None else ctrl.max_step_per_period
    measured, counts, words, tuned, operating = kernels.cfo_loop(
        osc.offset_ppm, osc.tuning_word, drift, phases, est.resolution_ppm,
        osc.tuning_lsb_ppm, ctrl.deadband_counts, max_step, osc.tuning_limit,
        ctrl.enabled, use_numba=use_numba)
    if n_periods:
        # same sequential sum the kernel performs
        osc.offset_ppm = float(np.cumsum(np.concatenate(([osc.offset_ppm], drift)))[-1])
        osc.tuning_word = int(words[-1])
    time_s = t0_s + est.period_s * np.arange(1, n_periods + 1)
    return CfoSeries(name, time_s, ppm_to_hz(measured, carrier_hz),
                     ppm_to_hz(counts * est.resolution_ppm, carrier_hz), counts, words,
                     tuned, ppm_to_hz(operating, carrier_hz))


@dataclass
class CfoExperiment:
    """Two or more APs disciplined to a shared syntonized reference, then left free-running."""
    oscillators: dict[str, OscillatorState]
    duration_s: float = 600.0
    carrier_hz: float = CARRIER_CH1_HZ
    estimator: CfoEstimatorConfig = field(default_factory=CfoEstimatorConfig)
    controller: TuningControllerConfig = field(default_factory=TuningControllerConfig)
    settle_periods: int = 3
    open_loop_s: float = 0.0
    open_loop_drift_ppm_per_s: Optional[float] = None
    seed: int = 0

    def run(self, use_numba=None) -> "CfoResult":
        period = self.estimator.period_s
        n_closed = int(round((self.settle_periods * period + self.duration_s) / period))
        n_open = int(round(self.open_loop_s / period))
        closed, opened = {}, {}
        for name, osc0 in self.oscillators.items():
            osc = OscillatorState(**vars(osc0))
            rng = rng_stream(self.seed, stream_id(name, "cfo"))
            closed[name] = run_loop(name, osc, self.estimator, self.controller, n_closed,
                                    rng, self.carrier_hz, use_numba=use_numba)
            if n_open:
                if self.open_loop_drift_ppm_per_s is not None:
                    osc.drift_ppm_per_s = self.open_loop_drift_ppm_per_s
                free = TuningControllerConfig(self.controller.deadband_counts, None, False)
                opened[name] = run_loop(name, osc, self.estimator, free, n_open, rng,
                                        self.carrier_hz, t0_s=n_closed * period,
                                        use_numba=use_numba)
        return CfoResult(closed, opened, self.settle_periods)


@dataclass
class CfoResult:
    closed: dict[str, CfoSeries]
    open: dict[str, CfoSeries]
    settle_periods: int

    def series(self, name: str) -> CfoSeries:
        s = self.closed[name]
        return s.concat(self.open[name]) if name in self.open else s

    def _pair(self):
        names = list(self.closed)
        if len(names) < 2:
            raise ValueError("inter-AP difference needs two APs")
        return names[0], names[1]

    def steady_difference_hz(self) -> np.ndarray:
        a, b = self._pair()
        k = self.settle_periods
        return self.closed[a].true_hz[k:] - self.closed[b].true_hz[k:]

    def open_difference_hz(self) -> np.ndarray:
        a, b = self._pair()
        if a not in self.open:
            return np.empty(0)
        return self.open[a].true_hz - self.open[b].true_hz

    def first_exceedance_s(self, limit_hz: float = 350.0) -> Optional[float]:
        d = self.open_difference_hz()
        hit = np.flatnonzero(np.abs(d) > limit_hz)
        if hit.size == 0:
            return None
        a, _ = self._pair()
        t_open = self.closed[a].time_s[-1]
        return float(self.open[a].time_s[hit[0]] - t_open)

    def converged_within(self, limit_hz: float = 100.0) -> dict[str, Optional[int]]:
        """Per AP, how many measurement periods pass before the operating offset stays below ``limit_hz``."""
        out = {}
        for name, s in self.closed.items():
            bad = np.flatnonzero(np.abs(s.operating_hz) >= limit_hz)
            k = 0 if bad.size == 0 else int(bad[-1]) + 1
            out[name] = k + 1 if k < len(s) else None
        return out

    def tuning_events_per_min(self) -> dict[str, float]:
        out = {}
        for name, s in self.closed.items():
            k = self.settle_periods
            span = s.time_s[-1] - s.time_s[k - 1] if len(s) > k else 0.0
            out[name] = float(s.tuned[k:].sum() / (span / 60.0)) if span else 0.0
        return out
