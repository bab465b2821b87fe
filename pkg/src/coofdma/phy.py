"""Frame airtime and power arithmetic for legacy and HE SU/MU PPDUs.

All durations are integer nanoseconds. BCC coding is assumed (16 service
bits, 6 tail bits), HE-LTF is one 4x symbol with 0.8 us GI, and no packet
extension is added.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .sim import US

SERVICE_BITS = 16
TAIL_BITS = 6

L_STF = 8 * US
L_LTF = 8 * US
L_SIG = 4 * US
LEGACY_PREAMBLE = L_STF + L_LTF + L_SIG
RL_SIG = 4 * US
HE_SIG_A = 8 * US
HE_SIG_B_SYM = 4 * US
HE_STF = 4 * US
HE_LTF = 13_600  # 4x LTF, 0.8 us GI
HE_SYM = 13_600  # 12.8 us + 0.8 us GI
LEGACY_SYM = 4 * US

HE_SU_PREAMBLE = LEGACY_PREAMBLE + RL_SIG + HE_SIG_A + HE_STF + HE_LTF

LEGACY_RATES_MBPS = (6, 9, 12, 18, 24, 36, 48, 54)


@dataclass(frozen=True)
class McsEntry:
    index: int
    bits_per_subcarrier: int
    coding_rate: Fraction

    @property
    def modulation(self) -> str:
        return {1: "BPSK", 2: "QPSK", 4: "16-QAM", 6: "64-QAM", 8: "256-QAM",
                10: "1024-QAM"}[self.bits_per_subcarrier]


MCS_TABLE = {
    i: McsEntry(i, b, Fraction(r))
    for i, (b, r) in enumerate([
        (1, "1/2"), (2, "1/2"), (2, "3/4"), (4, "1/2"), (4, "3/4"), (6, "2/3"),
        (6, "3/4"), (6, "5/6"), (8, "3/4"), (8, "5/6"), (10, "3/4"), (10, "5/6"),
    ])
}


def mcs(index: int) -> McsEntry:
    try:
        return MCS_TABLE[index]
    except KeyError:
        raise ValueError(f"MCS {index} not in 0..11") from None


@dataclass(frozen=True)
class RuType:
    tones: int
    data_tones: int
    pilot_tones: int

    @property
    def leaves(self) -> int:
        """Number of 26-tone positions this RU spans in a 20 MHz channel."""
        return {26: 1, 52: 2, 106: 4, 242: 9}[self.tones]


RU_TYPES = {
    26: RuType(26, 24, 2),
    52: RuType(52, 48, 4),
    106: RuType(106, 102, 4),
    242: RuType(242, 234, 8),
}
CHANNEL_TONES = 242


def ru_type(tones: int) -> RuType:
    try:
        return RU_TYPES[tones]
    except KeyError:
        raise ValueError(f"no {tones}-tone RU in a 20 MHz channel") from None


def legacy_duration(payload_bytes: int, rate_mbps: int = 6) -> int:
    if rate_mbps not in LEGACY_RATES_MBPS:
        raise ValueError(f"unsupported legacy rate {rate_mbps} Mbps")
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    bits = SERVICE_BITS + 8 * payload_bytes + TAIL_BITS
    n_sym = -(-bits // (4 * rate_mbps))
    return LEGACY_PREAMBLE + LEGACY_SYM * n_sym


def n_dbps(ru: RuType, entry: McsEntry, n_ss: int = 1) -> Fraction:
    return ru.data_tones * entry.bits_per_subcarrier * entry.coding_rate * n_ss


def he_n_sym(payload_bytes: int, ru: RuType, entry: McsEntry, n_ss: int = 1) -> int:
    if payload_bytes < 1 or n_ss < 1:
        raise ValueError("need payload_bytes >= 1 and n_ss >= 1")
    bits = SERVICE_BITS + 8 * payload_bytes + TAIL_BITS
    return math.ceil(Fraction(bits) / n_dbps(ru, entry, n_ss))


def he_su_duration(n_sym: int) -> int:
    if n_sym < 1:
        raise ValueError("n_sym must be >= 1")
    return HE_SU_PREAMBLE + HE_SYM * n_sym


def he_mu_preamble(sig_b_syms: int = 1) -> int:
    return HE_SU_PREAMBLE + HE_SIG_B_SYM * sig_b_syms


def he_mu_duration(n_sym: int, sig_b_syms: int = 1) -> int:
    if n_sym < 1 or sig_b_syms < 1:
        raise ValueError("n_sym and sig_b_syms must be >= 1")
    return he_mu_preamble(sig_b_syms) + HE_SYM * n_sym


def field_breakdown(kind: str, n_sym: int, sig_b_syms: int = 1) -> list[tuple[str, int, int]]:
    """(field, start_ns, duration_ns) rows in on-air order for an HE SU or MU PPDU."""
    fields = [("L-STF", L_STF), ("L-LTF", L_LTF), ("L-SIG", L_SIG),
              ("RL-SIG", RL_SIG), ("HE-SIG-A", HE_SIG_A)]
    if kind.upper() == "MU":
        fields.append(("HE-SIG-B", HE_SIG_B_SYM * sig_b_syms))
    elif kind.upper() != "SU":
        raise ValueError(f"unknown PPDU kind {kind!r}")
    fields += [("HE-STF", HE_STF), ("HE-LTF", HE_LTF), ("Data", HE_SYM * n_sym)]
    rows, t = [], 0
    for name, dur in fields:
        rows.append((name, t, dur))
        t += dur
    return rows


def ru_power_scale_db(occupied: RuType, channel_tones: int = CHANNEL_TONES) -> float:
    """Per-tone boost that keeps an AP's total power constant when it fills only ``occupied``."""
    if occupied.tones > channel_tones:
        raise ValueError("occupied RU wider than the channel")
    return 10 * math.log10(channel_tones / occupied.tones)


def combined_burst_power_dbm(per_tx_dbm) -> float:
    powers = list(per_tx_dbm)
    if not powers:
        raise ValueError("need at least one transmitter")
    return 10 * math.log10(math.fsum(10 ** (p / 10) for p in powers))


def combined_evm_db(tx_evm_db: float, snr_db: float) -> float:
    """Received EVM floor when transmitter error power and channel noise add.

    EVM is negative dB (error relative to signal); ``tx_evm_db=-inf`` is a
    perfect transmitter.
    """
    if math.isnan(tx_evm_db) or not math.isfinite(snr_db) or tx_evm_db == math.inf:
        raise ValueError("EVM and SNR must be finite (tx_evm may be -inf)")
    return 10 * math.log10(10 ** (tx_evm_db / 10) + 10 ** (-snr_db / 10))
