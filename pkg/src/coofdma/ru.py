"""Resource units of a 20 MHz channel and joint allocation across coordinating APs."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import phy

RU_SIZES = (26, 52, 106, 242)
RU_COUNT = {26: 9, 52: 4, 106: 2, 242: 1}
CENTER_LEAF = 4


@dataclass(frozen=True, order=True)
class RuId:
    size: int
    index: int

    def __post_init__(self):
        if self.size not in RU_COUNT or not 0 <= self.index < RU_COUNT[self.size]:
            raise ValueError(f"no {self.size}-tone RU with index {self.index}")

    @property
    def leaves(self) -> frozenset[int]:
        """26-tone positions covered; positions 0-3 and 5-8 pair up, 4 is the center RU."""
        k = self.index
        if self.size == 26:
            return frozenset((k,))
        if self.size == 52:
            lo = 2 * k if k < 2 else 2 * k + 1
            return frozenset((lo, lo + 1))
        if self.size == 106:
            return frozenset(range(0, 4)) if k == 0 else frozenset(range(5, 9))
        return frozenset(range(9))

    @property
    def mask(self) -> int:
        return sum(1 << leaf for leaf in self.leaves)

    @property
    def rtype(self) -> phy.RuType:
        return phy.ru_type(self.size)

    def __str__(self):
        return f"RU{self.size}-{self.index}"


ALL_RUS = tuple(RuId(s, i) for s in RU_SIZES for i in range(RU_COUNT[s]))


def overlaps(a: RuId, b: RuId) -> bool:
    return (a.mask & b.mask) != 0


def smallest_ru_size(min_tones: int) -> int:
    for s in RU_SIZES:
        if s >= min_tones:
            return s
    raise ValueError(f"no RU with {min_tones} tones in 20 MHz")


@dataclass(frozen=True)
class RuRequest:
    ap: str
    sta_id: int
    payload_bytes: int
    min_tones: int
    mcs: int = 7


@dataclass(frozen=True)
class UserAssignment:
    sta_id: int
    ap: str
    ru: RuId
    mcs: int
    payload_bytes: int
    n_sym: int

    def __post_init__(self):
        if not 0 <= self.sta_id < 2048:
            raise ValueError(f"sta_id {self.sta_id} does not fit in 11 bits")


@dataclass(frozen=True)
class JointPreamble:
    bss_color: int
    l_length: int  # total PPDU airtime in ns
    sig_b_entries: tuple[tuple[int, RuId, int], ...]
    sig_b_syms: int = 1

    def __post_init__(self):
        if not 0 <= self.bss_color < 64:
            raise ValueError(f"bss_color {self.bss_color} does not fit in 6 bits")


@dataclass(frozen=True)
class RuAllocation:
    users: tuple[UserAssignment, ...]
    preamble: JointPreamble
    padded: tuple[int, ...] = field(default=())

    @classmethod
    def from_users(cls, users: Iterable[UserAssignment], bss_color: int = 0,
                   sig_b_syms: int = 1, n_sym_override: Optional[int] = None) -> "RuAllocation":
        users = tuple(users)
        n_sym = n_sym_override or max(u.n_sym for u in users)
        entries = tuple((u.sta_id, u.ru, u.mcs) for u in users)
        pre = JointPreamble(bss_color, phy.he_mu_duration(n_sym, sig_b_syms), entries, sig_b_syms)
        padded = tuple(u.sta_id for u in users if u.n_sym < n_sym)
        return cls(users, pre, padded)

    @property
    def n_sym(self) -> int:
        return (self.preamble.l_length - phy.he_mu_preamble(self.preamble.sig_b_syms)) // phy.HE_SYM

    @property
    def duration(self) -> int:
        return self.preamble.l_length

    @property
    def ref(self) -> str:
        """Short content digest, used to name the allocation in trigger messages."""
        return f"{zlib.crc32(repr(self.preamble).encode()):08x}"

    def users_of(self, ap: str) -> tuple[UserAssignment, ...]:
        return tuple(u for u in self.users if u.ap == ap)

    def dump_rows(self) -> list[tuple]:
        dur = self.duration / 1000
        return [(u.ap, u.sta_id, u.ru.size, u.ru.index, u.mcs, u.n_sym, dur) for u in self.users]


class AllocationError(ValueError):
    def __init__(self, message: str, request_index: int, request: RuRequest):
        super().__init__(message)
        self.request_index = request_index
        self.request = request


def allocate(requests, bss_color: int = 0, sig_b_syms: int = 1,
             n_sym_override: Optional[int] = None) -> RuAllocation:
    """Give each request the smallest RU with at least ``min_tones`` tones.

    Requests are served in order and each takes the lowest-index free RU of
    its size. If that greedy pass gets stuck, earlier choices are revisited
    in the same preference order before giving up.
    """
    requests = list(requests)
    if not requests:
        raise ValueError("no requests")
    seen = set()
    for i, r in enumerate(requests):
        if r.sta_id in seen:
            raise AllocationError(f"duplicate sta_id {r.sta_id} in request {i}", i, r)
        seen.add(r.sta_id)
    sizes = [smallest_ru_size(r.min_tones) for r in requests]
    total = 0
    for i, s in enumerate(sizes):
        total += phy.ru_type(s).leaves
        if total > 9:
            raise AllocationError(
                f"request {i} ({requests[i]}) does not fit: needs {total} of 9 RU positions",
                i, requests[i])

    choice: list[RuId] = []
    stuck = [len(requests)]

    def place(i: int, used: int) -> bool:
        if i == len(requests):
            return True
        for ru in ALL_RUS:
            if ru.size == sizes[i] and not (ru.mask & used):
                choice.append(ru)
                if place(i + 1, used | ru.mask):
                    return True
                choice.pop()
        stuck[0] = min(stuck[0], i)
        return False

    if not place(0, 0):
        i = stuck[0]
        raise AllocationError(
            f"request {i} ({requests[i]}) cannot be placed: no disjoint {sizes[i]}-tone RU left",
            i, requests[i])
    users = [
        UserAssignment(r.sta_id, r.ap, ru, r.mcs, r.payload_bytes,
                       phy.he_n_sym(r.payload_bytes, ru.rtype, phy.mcs(r.mcs)))
        for r, ru in zip(requests, choice)
    ]
    return RuAllocation.from_users(users, bss_color, sig_b_syms, n_sym_override)


@dataclass(frozen=True)
class Violation:
    clause: str
    field: str
    detail: str


def validate_joint(plans) -> list[Violation]:
    """Check that every AP would put the same joint frame on air.

    ``plans`` holds ``(ap, allocation)`` or ``(ap, allocation, tx_rus)``;
    without ``tx_rus`` an AP transmits the RUs of its own users. An empty
    result means the plans are consistent.
    """
    plans = [tuple(p) for p in plans]
    if len(plans) < 2:
        raise ValueError("joint validation needs at least two APs")
    out: list[Violation] = []
    ref_ap, ref = plans[0][0], plans[0][1]
    for p in plans[1:]:
        ap, alloc = p[0], p[1]
        for f in ("bss_color", "l_length", "sig_b_entries", "sig_b_syms"):
            a, b = getattr(ref.preamble, f), getattr(alloc.preamble, f)
            if a != b:
                out.append(Violation("identical_preamble", f, f"{ref_ap}={a!r} vs {ap}={b!r}"))

    tx: dict[str, tuple[RuId, ...]] = {}
    for p in plans:
        ap, alloc = p[0], p[1]
        if [(u.sta_id, u.ru, u.mcs) for u in alloc.users] != list(alloc.preamble.sig_b_entries):
            out.append(Violation("sig_b", "sig_b_entries", f"{ap}: HE-SIG-B rows do not match users"))
        own = {u.ru for u in alloc.users_of(ap)}
        rus = tuple(p[2]) if len(p) > 2 else tuple(sorted(own))
        for ru in rus:
            if ru not in own:
                out.append(Violation("own_ru", "ru", f"{ap} transmits {ru} which no {ap} user holds"))
        tx[ap] = rus

    aps = list(tx)
    for i, a in enumerate(aps):
        for b in aps[i + 1:]:
            for ra in tx[a]:
                for rb in tx[b]:
                    if overlaps(ra, rb):
                        out.append(Violation("disjoint_ru", "ru", f"{a} {ra} overlaps {b} {rb}"))

    owner: dict[int, tuple[str, RuId]] = {}
    flagged = set()
    for p in plans:
        for u in p[1].users:
            prev = owner.setdefault(u.sta_id, (u.ap, u.ru))
            if prev != (u.ap, u.ru) and u.sta_id not in flagged:
                flagged.add(u.sta_id)
                out.append(Violation("unique_sta_id", "sta_id",
                                     f"sta_id {u.sta_id} used by {prev[0]} and {u.ap}"))
    return out
