"""CSMA/CA medium access, the RTS/CTS baseline and backhaul-triggered Co-OFDMA.

Capture is all-or-nothing: a frame is lost at a receiver whenever anything
the receiver hears overlaps it in time and frequency. ACKs are off by
default, matching the best-case schedule arithmetic.
"""
from __future__ import annotations

import csv
import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels, phy
from .backhaul import FiberLinkConfig, TriggerLogRow, TriggerMsg, send_trigger
from .ru import RuAllocation, RuRequest, allocate, validate_joint
from .sim import US, Engine

FULL = kernels.FULL_MASK
RTS_BYTES = 20
CTS_BYTES = 14
ACK_BYTES = 14


class Kind(str, Enum):
    RTS = "RTS"
    CTS = "CTS"
    ACK = "ACK"
    DATA_SU = "DATA_SU"
    DATA_MU = "DATA_MU"
    CO_OFDMA = "CO_OFDMA"
    TRIGGER_WIRED = "TRIGGER_WIRED"


class Scheme(str, Enum):
    RTSCTS = "RTSCTS"
    CO_OFDMA = "CO_OFDMA"


@dataclass
class MacParams:
    sifs: int = 16 * US
    difs: int = 34 * US
    slot: int = 9 * US
    cw_min: int = 15
    cw_max: int = 1023
    retry_limit: int = 7
    rts_threshold: int = 0
    ack_enabled: bool = False
    deterministic_backoff: bool = False
    backoff_slots: dict = field(default_factory=dict)
    control_rate_mbps: int = 6

    def __post_init__(self):
        if self.difs != self.sifs + 2 * self.slot:
            raise ValueError("DIFS must equal SIFS + 2 slots")
        if not 0 < self.cw_min <= self.cw_max:
            raise ValueError("need 0 < cw_min <= cw_max")

    @property
    def rts(self) -> int:
        return phy.legacy_duration(RTS_BYTES, self.control_rate_mbps)

    @property
    def cts(self) -> int:
        return phy.legacy_duration(CTS_BYTES, self.control_rate_mbps)

    @property
    def ack(self) -> int:
        return phy.legacy_duration(ACK_BYTES, self.control_rate_mbps)


def channels_overlap(a: int, b: int) -> bool:
    return abs(a - b) < kernels.CHANNEL_SEPARATION


@dataclass(frozen=True)
class Node:
    name: str
    role: str
    channel: int
    ap: Optional[str] = None
    sta_id: Optional[int] = None


class Topology:
    """Nodes plus a directed hearing relation: ``hears(rx, tx)``."""

    def __init__(self, nodes, hears_pairs=()):
        self.nodes = list(nodes)
        self.index = {n.name: i for i, n in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise ValueError("duplicate node names")
        ids = {}
        for n in self.nodes:
            if n.role == "STA":
                if n.ap not in self.index or self.by_name(n.ap).role != "AP":
                    raise ValueError(f"{n.name} is associated with unknown AP {n.ap!r}")
                if n.sta_id in ids:
                    raise ValueError(f"sta_id {n.sta_id} used by {ids[n.sta_id]} and {n.name}")
                ids[n.sta_id] = n.name
        self.matrix = np.zeros((len(self.nodes), len(self.nodes)), dtype=bool)
        for rx, tx in hears_pairs:
            self.matrix[self.index[rx], self.index[tx]] = True

    @classmethod
    def build(cls, aps: dict, stas: dict, links=(), one_way=()):
        """``aps``: name -> channel; ``stas``: name -> (ap, sta_id).

        ``links`` are mutual hearing pairs, ``one_way`` are (listener, talker).
        """
        nodes = [Node(a, "AP", int(ch)) for a, ch in aps.items()]
        nodes += [Node(s, "STA", int(aps[ap]), ap, int(sid)) for s, (ap, sid) in stas.items()]
        pairs = [(a, b) for a, b in links] + [(b, a) for a, b in links] + list(one_way)
        return cls(nodes, pairs)

    def by_name(self, name: str) -> Node:
        return self.nodes[self.index[name]]

    def hears(self, rx: str, tx: str) -> bool:
        return bool(self.matrix[self.index[rx], self.index[tx]])

    def channel(self, name: str) -> int:
        return self.by_name(name).channel

    @property
    def aps(self) -> list[str]:
        return [n.name for n in self.nodes if n.role == "AP"]

    @property
    def stas(self) -> list[str]:
        return [n.name for n in self.nodes if n.role == "STA"]

    def sta_by_id(self, sta_id: int) -> str:
        for n in self.nodes:
            if n.role == "STA" and n.sta_id == sta_id:
                return n.name
        raise KeyError(sta_id)


@dataclass
class FrameTx:
    tx_node: str
    kind: Kind
    start: int
    duration: int
    dest: tuple
    channel: Optional[int]
    mask: int = FULL
    pre_ns: Optional[int] = None
    txop: int = -1
    nav_until: int = 0
    packet_id: Optional[int] = None
    fid: int = -1

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def pre_end(self) -> int:
        return self.end if self.pre_ns is None else self.start + self.pre_ns

    @property
    def wired(self) -> bool:
        return self.kind is Kind.TRIGGER_WIRED

    @property
    def footprint(self) -> frozenset:
        return frozenset(i for i in range(9) if self.mask >> i & 1)


def _frame_arrays(frames, topo: Topology):
    return (np.array([f.start for f in frames], dtype=np.int64),
            np.array([f.end for f in frames], dtype=np.int64),
            np.array([f.pre_end for f in frames], dtype=np.int64),
            np.array([f.mask for f in frames], dtype=np.int64),
            np.array([f.channel for f in frames], dtype=np.int64),
            np.array([topo.index[f.tx_node] for f in frames], dtype=np.int64),
            np.array([f.txop for f in frames], dtype=np.int64))


def detect_collisions(frames, topo: Topology, use_numba=None) -> set:
    """Ids (list positions) of on-air frames lost at one or more destinations."""
    air = [(i, f) for i, f in enumerate(frames) if not f.wired]
    if not air:
        return set()
    q_frame, q_rx, owner = [], [], []
    for k, (i, f) in enumerate(air):
        for d in f.dest:
            q_frame.append(k)
            q_rx.append(topo.index[d])
            owner.append(i)
    if not q_frame:
        return set()
    lost = kernels.collided(np.array(q_frame), np.array(q_rx),
                            *_frame_arrays([f for _, f in air], topo), topo.matrix,
                            use_numba=use_numba)
    return {owner[k] for k in np.flatnonzero(lost)}


def csma_grant(t_ready: int, busy, params: MacParams, backoff: int) -> int:
    """Access time for an AP that needs DIFS plus ``backoff`` idle slots.

    ``busy`` lists (start, end) intervals in which the AP senses the medium
    busy (carrier or NAV). The countdown freezes while busy and restarts
    with a fresh DIFS afterwards; a busy period starting exactly at the
    access instant is too late to be sensed.
    """
    t, remaining = t_ready, backoff
    spans = sorted((s, e) for s, e in busy if e > t_ready)
    i = 0
    while True:
        while i < len(spans) and spans[i][1] <= t:
            i += 1
        if i < len(spans) and spans[i][0] <= t:
            t = spans[i][1]
            continue
        grant = t + params.difs + remaining * params.slot
        if i == len(spans) or grant <= spans[i][0]:
            return grant
        nb = spans[i][0]
        remaining = max(0, remaining - max(0, (nb - t - params.difs) // params.slot))
        t = nb


def rtscts_exchange(ap: str, sta: str, payload_bytes: int, mcs: int, grant: int,
                    params: MacParams, channel: int = 1, packet_id=None) -> list:
    """Frames of one uncontested RTS / CTS / DATA exchange starting at ``grant``."""
    data = phy.he_su_duration(phy.he_n_sym(payload_bytes, phy.ru_type(242), phy.mcs(mcs)))
    rts_end = grant + params.rts
    cts_start = rts_end + params.sifs
    data_start = cts_start + params.cts + params.sifs
    end = data_start + data
    if params.ack_enabled:
        end += params.sifs + params.ack
    out = [FrameTx(ap, Kind.RTS, grant, params.rts, (sta,), channel, nav_until=end,
                   packet_id=packet_id),
           FrameTx(sta, Kind.CTS, cts_start, params.cts, (ap,), channel, nav_until=end,
                   packet_id=packet_id),
           FrameTx(ap, Kind.DATA_SU, data_start, data, (sta,), channel, packet_id=packet_id)]
    if params.ack_enabled:
        out.append(FrameTx(sta, Kind.ACK, data_start + data + params.sifs, params.ack, (ap,),
                           channel, packet_id=packet_id))
    return out


def co_ofdma_txop(initiator: str, alloc: RuAllocation, grant: int, trigger_ns: int,
                  channels: dict, sta_names: dict, txop: int = 0,
                  start_times: Optional[dict] = None) -> list:
    """Wired triggers and per-AP joint-frame parts for one Co-OFDMA TXOP.

    Every AP starts at ``grant + trigger_ns`` unless ``start_times`` gives
    its actual start.
    """
    aps = list(dict.fromkeys(u.ap for u in alloc.users))
    start_times = start_times or {}
    out = []
    for ap in aps:
        if ap != initiator:
            out.append(FrameTx(initiator, Kind.TRIGGER_WIRED, grant,
                               start_times.get(ap, grant + trigger_ns) - grant, (ap,), None,
                               mask=0, txop=txop))
    pre = phy.he_mu_preamble(alloc.preamble.sig_b_syms)
    for ap in aps:
        users = alloc.users_of(ap)
        mask = 0
        for u in users:
            mask |= u.ru.mask
        out.append(FrameTx(ap, Kind.CO_OFDMA, start_times.get(ap, grant + trigger_ns),
                           alloc.duration, tuple(sta_names[u.sta_id] for u in users),
                           channels[ap], mask=mask, pre_ns=pre, txop=txop))
    return out


def ru_size_for(n_users: int) -> int:
    """Widest RU size that gives every user its own RU."""
    for size, count in ((242, 1), (106, 2), (52, 4), (26, 9)):
        if n_users <= count:
            return size
    raise ValueError(f"{n_users} users do not fit in one 20 MHz channel")


@dataclass
class Packet:
    pid: int
    ap: str
    sta: str
    payload_bytes: int
    enqueue: int
    mcs: int = 7
    retries: int = 0
    start: Optional[int] = None
    end: Optional[int] = None
    status: str = "queued"

    @property
    def latency(self) -> Optional[int]:
        return None if self.end is None else self.end - self.enqueue


@dataclass
class TxopRecord:
    txop: int
    initiator: str
    grant: int
    alloc: RuAllocation
    starts: dict = field(default_factory=dict)
    withdrawn: list = field(default_factory=list)
    outstanding: int = 0

    @property
    def skew(self) -> int:
        return max(self.starts.values()) - min(self.starts.values()) if self.starts else 0


@dataclass
class _ApState:
    queue: deque = field(default_factory=deque)
    cw: int = 15
    remaining: Optional[int] = None
    draws: int = 0
    idle_from: int = 0
    grant_at: int = 0
    grant_ev: Optional[int] = None
    wake_ev: Optional[int] = None
    busy: bool = False
    token: Optional[object] = None
    yielded: bool = False


@dataclass
class RunMetrics:
    scheme: str
    packets: list
    frames: list
    triggers: list
    txops: list
    nav_log: list
    trace_text: str
    end_time: int

    @property
    def delivered(self) -> list:
        return [p for p in self.packets if p.status == "delivered"]

    @property
    def complete(self) -> bool:
        return all(p.status == "delivered" for p in self.packets)

    @property
    def completion_ns(self) -> Optional[int]:
        ends = [p.end for p in self.delivered]
        return max(ends) if ends else None

    @property
    def airtime_ns(self) -> int:
        spans = sorted((f.start, f.end) for f in self.frames if not f.wired)
        total, cur_s, cur_e = 0, None, None
        for s, e in spans:
            if cur_e is None or s > cur_e:
                if cur_e is not None:
                    total += cur_e - cur_s
                cur_s, cur_e = s, e
            else:
                cur_e = max(cur_e, e)
        if cur_e is not None:
            total += cur_e - cur_s
        return total

    @property
    def collided_frames(self) -> list:
        return [f for f in self.frames if getattr(f, "collided", False)]

    @property
    def collision_count(self) -> int:
        return len(self.collided_frames)

    @property
    def retries(self) -> int:
        return sum(p.retries for p in self.packets)

    @property
    def max_start_skew_ns(self) -> int:
        return max((t.skew for t in self.txops), default=0)

    @property
    def max_trigger_latency_ns(self) -> int:
        return max((r.t_deliver_ns - r.t_send_ns for r in self.triggers if r.t_deliver_ns >= 0),
                   default=0)

    def airtime_by_node(self) -> dict:
        out: dict = {}
        for f in self.frames:
            if not f.wired:
                out[f.tx_node] = out.get(f.tx_node, 0) + f.duration
        return out

    def nav_violations(self) -> list:
        """Frames started by a node while its NAV, set by an overheard RTS/CTS, was active."""
        bad = []
        for node, t_set, until in self.nav_log:
            for f in self.frames:
                if f.tx_node == node and not f.wired and t_set <= f.start < until:
                    bad.append((node, f))
        return bad

    def write_packets_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["packet_id", "ap", "sta", "scheme", "enqueue_ns", "start_ns", "end_ns",
                        "collided", "retries"])
            for p in self.packets:
                w.writerow([p.pid, p.ap, p.sta, self.scheme, p.enqueue,
                            "" if p.start is None else p.start, "" if p.end is None else p.end,
                            int(p.status == "collided"), p.retries])
        return path

    def write_frames_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fid", "tx", "kind", "start_ns", "end_ns", "dest", "channel", "ru_mask",
                        "txop", "collided"])
            for f in self.frames:
                w.writerow([f.fid, f.tx_node, f.kind.value, f.start, f.end, "|".join(f.dest),
                            "" if f.channel is None else f.channel, f"{f.mask:03x}", f.txop,
                            int(getattr(f, "collided", False))])
        return path


class MacSim:
    """Event-driven run of one scheme over a fixed topology and packet list."""

    def __init__(self, topo: Topology, packets, scheme=Scheme.RTSCTS, params=None, seed=0,
                 link: Optional[FiberLinkConfig] = None, participants=None,
                 cs_required: bool = True, bss_color: int = 0, sig_b_syms: int = 1,
                 n_sym_override: Optional[int] = None, use_numba=None):
        self.topo = topo
        self.scheme = Scheme(scheme)
        self.params = params or MacParams()
        self.engine = Engine(seed)
        self.link = link or FiberLinkConfig()
        self.participants = list(participants if participants is not None else topo.aps)
        self.cs_required = cs_required
        self.bss_color = bss_color
        self.sig_b_syms = sig_b_syms
        self.n_sym_override = n_sym_override
        self.use_numba = use_numba
        self.packets = [Packet(**vars(p)) if isinstance(p, Packet) else p for p in packets]
        self.frames: list[FrameTx] = []
        self.triggers: list[TriggerLogRow] = []
        self.txops: list[TxopRecord] = []
        self.nav_log: list = []
        self.nav = {n.name: 0 for n in topo.nodes}
        self.state = {ap: _ApState(cw=self.params.cw_min) for ap in topo.aps}
        self._active: list[FrameTx] = []
        self._txop: Optional[TxopRecord] = None
        self._txop_ids = itertools.count()
        for p in self.packets:
            if topo.by_name(p.sta).ap != p.ap:
                raise ValueError(f"packet {p.pid}: {p.sta} is not associated with {p.ap}")
            self.engine.schedule(p.enqueue, self._arrive, p, tag=f"arrive {p.ap} #{p.pid}")

    # -- medium sensing ------------------------------------------------------

    def _senses(self, node: str, f: FrameTx) -> bool:
        return (f.tx_node != node and not f.wired and self.topo.hears(node, f.tx_node)
                and channels_overlap(self.topo.channel(node), f.channel))

    def busy_until(self, node: str) -> int:
        now = self.engine.now
        until = max(now, self.nav[node])
        for f in self._active:
            if f.start <= now < f.end and self._senses(node, f):
                until = max(until, f.end)
        return until

    def _transmitting(self, node: str) -> bool:
        now = self.engine.now
        return any(f.tx_node == node and f.start <= now < f.end for f in self._active)

    def _lost(self, frame: FrameTx, rx: str) -> bool:
        cands = [frame] + [f for f in self.frames if f is not frame and not f.wired
                           and f.start < frame.end and frame.start < f.end]
        res = kernels.collided(np.array([0]), np.array([self.topo.index[rx]]),
                               *_frame_arrays(cands, self.topo), self.topo.matrix,
                               use_numba=self.use_numba)
        return bool(res[0])

    # -- contention ------------------------------------------------------------

    def _draw_backoff(self, ap: str) -> int:
        st = self.state[ap]
        if self.params.deterministic_backoff:
            forced = self.params.backoff_slots.get(ap, ())
            if isinstance(forced, int):
                return forced
            k, st.draws = st.draws, st.draws + 1
            return int(forced[k]) if k < len(forced) else 0
        return int(self.engine.rng(ap, "backoff").integers(0, st.cw + 1))

    def _contend(self, ap: str):
        st = self.state[ap]
        if st.busy or not st.queue or st.grant_ev is not None or st.wake_ev is not None:
            return
        if st.remaining is None:
            st.remaining = self._draw_backoff(ap)
        self._resume(ap)

    def _resume(self, ap: str):
        st = self.state[ap]
        st.wake_ev = None
        now = self.engine.now
        until = self.busy_until(ap)
        if until > now:
            st.wake_ev = self.engine.schedule(until, self._resume, ap, tag=f"wake {ap}")
            return
        st.idle_from = now
        st.grant_at = now + self.params.difs + st.remaining * self.params.slot
        st.grant_ev = self.engine.schedule(st.grant_at, self._grant, ap, tag=f"grant {ap}")

    def _freeze(self, ap: str):
        st = self.state[ap]
        now = self.engine.now
        if st.grant_ev is None or st.grant_at <= now:
            return
        self.engine.cancel(st.grant_ev)
        st.grant_ev = None
        done = max(0, (now - st.idle_from - self.params.difs) // self.params.slot)
        st.remaining = max(0, st.remaining - done)
        self._resume(ap)

    def _stop_contending(self, ap: str):
        st = self.state[ap]
        for ev in (st.grant_ev, st.wake_ev):
            if ev is not None:
                self.engine.cancel(ev)
        st.grant_ev = st.wake_ev = None

    def _set_nav(self, node: str, until: int):
        if until > self.nav[node]:
            self.nav_log.append((node, self.engine.now, until))
            self.nav[node] = until
            if node in self.state:
                self._freeze(node)

    # -- transmission ------------------------------------------------------------

    def _transmit(self, frame: FrameTx):
        frame.fid = len(self.frames)
        self.frames.append(frame)
        if frame.wired:
            return
        now = self.engine.now
        self._active = [f for f in self._active if f.end > now]
        self._active.append(frame)
        self.engine.schedule(frame.end, self._frame_end, frame,
                             tag=f"end {frame.kind.value} {frame.tx_node}")
        for ap in self.state:
            if self._senses(ap, frame):
                self._freeze(ap)

    def _send_at(self, frame: FrameTx):
        self.engine.schedule(frame.start, self._transmit, frame,
                             tag=f"tx {frame.kind.value} {frame.tx_node}")

    def _overhear_nav(self, frame: FrameTx):
        for n in self.topo.nodes:
            name = n.name
            if name == frame.tx_node or name in frame.dest:
                continue
            if self._senses(name, frame) and not self._lost(frame, name):
                self._set_nav(name, frame.nav_until)

    def _arrive(self, p: Packet):
        st = self.state[p.ap]
        st.queue.append(p)
        if self.scheme is Scheme.CO_OFDMA and st.yielded:
            return
        self._contend(p.ap)

    def _grant(self, ap: str):
        st = self.state[ap]
        st.grant_ev = None
        st.remaining = None
        st.busy = True
        if self.scheme is Scheme.CO_OFDMA and ap in self.participants:
            self._co_grant(ap)
        else:
            self._start_exchange(ap)

    def _start_exchange(self, ap: str):
        st = self.state[ap]
        p = st.queue[0]
        now = self.engine.now
        ch = self.topo.channel(ap)
        token = object()
        st.token = token
        frames = rtscts_exchange(ap, p.sta, p.payload_bytes, p.mcs, now, self.params, ch, p.pid)
        if p.payload_bytes >= self.params.rts_threshold:
            rts = frames[0]
            self._transmit(rts)
            self.engine.schedule(rts.end + self.params.sifs + self.params.cts + self.params.slot,
                                 self._timeout, ap, token, tag=f"cts-timeout {ap}")
        else:
            data = frames[2]
            data.start = now
            self._transmit(data)
            p.start = now

    def _timeout(self, ap: str, token):
        st = self.state[ap]
        if st.token is token:
            self._fail(ap)

    def _fail(self, ap: str):
        st = self.state[ap]
        p = st.queue[0]
        st.token = None
        p.retries += 1
        if p.retries > self.params.retry_limit:
            p.status = "dropped"
            st.queue.popleft()
            st.cw = self.params.cw_min
        else:
            st.cw = min(2 * st.cw + 1, self.params.cw_max)
        st.remaining = None
        st.busy = False
        self._contend(ap)

    def _finish(self, ap: str):
        st = self.state[ap]
        st.queue.popleft()
        st.token = None
        st.cw = self.params.cw_min
        st.remaining = None
        st.busy = False
        self._contend(ap)

    def _frame_end(self, f: FrameTx):
        lost = {d: self._lost(f, d) for d in f.dest}
        f.collided = any(lost.values())
        now = self.engine.now
        if f.kind is Kind.RTS:
            self._overhear_nav(f)
            sta = f.dest[0]
            if not lost[sta] and self.nav[sta] <= now:
                self._send_at(FrameTx(sta, Kind.CTS, now + self.params.sifs, self.params.cts,
                                      (f.tx_node,), f.channel, nav_until=f.nav_until,
                                      packet_id=f.packet_id))
        elif f.kind is Kind.CTS:
            self._overhear_nav(f)
            ap = f.dest[0]
            st = self.state[ap]
            if not lost[ap] and st.token is not None and st.queue and st.queue[0].pid == f.packet_id:
                st.token = object()  # CTS in hand; cancels the pending timeout
                p = st.queue[0]
                data = rtscts_exchange(ap, p.sta, p.payload_bytes, p.mcs, 0, self.params)[2]
                data.start, data.channel = now + self.params.sifs, f.channel
                p.start = data.start
                self._send_at(data)
        elif f.kind is Kind.DATA_SU:
            ap, sta = f.tx_node, f.dest[0]
            p = self.state[ap].queue[0]
            p.start, p.end = f.start, f.end
            if self.params.ack_enabled:
                if not lost[sta]:
                    token = object()
                    self.state[ap].token = token
                    self._send_at(FrameTx(sta, Kind.ACK, now + self.params.sifs, self.params.ack,
                                          (ap,), f.channel, packet_id=f.packet_id))
                    self.engine.schedule(now + self.params.sifs + self.params.ack + self.params.slot,
                                         self._timeout, ap, token, tag=f"ack-timeout {ap}")
                else:
                    self._fail(ap)
            else:
                p.status = "collided" if lost[sta] else "delivered"
                self._finish(ap)
        elif f.kind is Kind.ACK:
            ap = f.dest[0]
            st = self.state[ap]
            if not lost[ap] and st.token is not None:
                st.queue[0].status = "delivered"
                self._finish(ap)
        elif f.kind is Kind.CO_OFDMA:
            self._co_frame_end(f, lost)

    # -- Co-OFDMA ------------------------------------------------------------------

    def _co_grant(self, ap: str):
        st = self.state[ap]
        if self._txop is not None:
            st.busy = False
            st.yielded = True
            return
        now = self.engine.now
        members = [a for a in self.participants if self.state[a].queue
                   and (a == ap or not self.state[a].busy)]
        members.remove(ap)
        members.insert(0, ap)
        size = ru_size_for(len(members))
        reqs = []
        for a in members:
            p = self.state[a].queue[0]
            reqs.append(RuRequest(a, self.topo.by_name(p.sta).sta_id, p.payload_bytes, size, p.mcs))
        alloc = allocate(reqs, self.bss_color, self.sig_b_syms, self.n_sym_override)
        if len(members) > 1:
            violations = validate_joint([(a, alloc) for a in members])
            if violations:
                raise RuntimeError(f"joint allocation rejected: {violations}")
        rec = TxopRecord(next(self._txop_ids), ap, now, alloc, outstanding=len(members))
        self._txop = rec
        self.txops.append(rec)
        start = now + (self.link.one_way_base_ns if len(members) > 1 else 0)
        for peer in members[1:]:
            msg = TriggerMsg(ap, alloc.ref, start, self.cs_required)
            deliver = send_trigger(self.link, msg, now, self.engine.rng(f"{ap}->{peer}", "fiber"))
            self._transmit(FrameTx(ap, Kind.TRIGGER_WIRED, now,
                                   (deliver if deliver is not None else now) - now, (peer,), None,
                                   mask=0, txop=rec.txop))
            if deliver is None:
                self.triggers.append(TriggerLogRow(now, -1, ap, True))
                rec.withdrawn.append(peer)
                rec.outstanding -= 1
                continue
            self.engine.schedule(deliver, self._co_trigger_rx, peer, rec, now,
                                 tag=f"trigger {ap}->{peer}")
        self.engine.schedule(start, self._co_tx, ap, rec, tag=f"co-tx {ap}")

    def _co_trigger_rx(self, peer: str, rec: TxopRecord, t_send: int):
        st = self.state[peer]
        now = self.engine.now
        self._stop_contending(peer)
        if self.cs_required and (self.busy_until(peer) > now or self._transmitting(peer)):
            self.triggers.append(TriggerLogRow(t_send, now, rec.initiator, True))
            rec.withdrawn.append(peer)
            rec.outstanding -= 1
            st.busy = False
            st.yielded = True
            self._maybe_end_txop(rec)
            return
        self.triggers.append(TriggerLogRow(t_send, now, rec.initiator, False))
        st.busy = True
        self._co_tx(peer, rec)

    def _co_tx(self, ap: str, rec: TxopRecord):
        now = self.engine.now
        users = rec.alloc.users_of(ap)
        mask = 0
        for u in users:
            mask |= u.ru.mask
        dests = tuple(self.topo.sta_by_id(u.sta_id) for u in users)
        p = self.state[ap].queue[0]
        p.start = now
        rec.starts[ap] = now
        self._transmit(FrameTx(ap, Kind.CO_OFDMA, now, rec.alloc.duration, dests,
                               self.topo.channel(ap), mask=mask,
                               pre_ns=phy.he_mu_preamble(rec.alloc.preamble.sig_b_syms),
                               txop=rec.txop, packet_id=p.pid))

    def _co_frame_end(self, f: FrameTx, lost: dict):
        ap = f.tx_node
        st = self.state[ap]
        p = st.queue.popleft()
        p.end = f.end
        p.status = "collided" if lost[p.sta] else "delivered"
        st.cw = self.params.cw_min
        st.remaining = None
        st.busy = False
        rec = self._txop
        rec.outstanding -= 1
        self._maybe_end_txop(rec)

    def _maybe_end_txop(self, rec: TxopRecord):
        if rec.outstanding > 0 or self._txop is not rec:
            return
        self._txop = None
        for a in self.participants:
            self.state[a].yielded = False
        for a in self.participants:
            self._contend(a)

    # -- driver ----------------------------------------------------------------------

    def run(self, until: Optional[int] = None) -> RunMetrics:
        if until is None:
            self.engine.run()
        else:
            self.engine.run_until(until)
        return RunMetrics(self.scheme.value, self.packets, self.frames, self.triggers, self.txops,
                          self.nav_log, self.engine.trace_text(), self.engine.now)
