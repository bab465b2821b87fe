"""Hot numeric loops, each with a numba build and a pure-numpy twin.

Both paths must return bit-identical results; random draws are made by the
callers and passed in as arrays so the kernels themselves are deterministic.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

FULL_MASK = (1 << 9) - 1
CHANNEL_SEPARATION = 5  # 2.4 GHz channel numbers closer than this overlap


# --- DCXO closed loop -------------------------------------------------------

@njit
def _cfo_loop_jit(offset0, tw0, drift_steps, phases, resolution, lsb, deadband,
                  max_step, tw_limit, enabled):
    n = drift_steps.shape[0]
    measured = np.empty(n)
    counts = np.empty(n, np.int64)
    words = np.empty(n, np.int64)
    tuned = np.zeros(n, np.bool_)
    operating = np.empty(n)
    o = offset0
    tw = tw0
    for k in range(n):
        o += drift_steps[k]
        eff = o + tw * lsb
        c = int(np.floor(eff / resolution + phases[k]))
        measured[k] = eff
        counts[k] = c
        if enabled and abs(c) > deadband:
            r = c * resolution / lsb
            d = int(np.floor(abs(r) + 0.5))
            if r > 0:
                d = -d
            if max_step >= 0:
                if d > max_step:
                    d = max_step
                elif d < -max_step:
                    d = -max_step
            new_tw = tw + d
            if new_tw > tw_limit:
                new_tw = tw_limit
            elif new_tw < -tw_limit:
                new_tw = -tw_limit
            if new_tw != tw:
                tuned[k] = True
            tw = new_tw
        words[k] = tw
        operating[k] = o + tw * lsb
    return measured, counts, words, tuned, operating


def _cfo_loop_numpy(offset0, tw0, drift_steps, phases, resolution, lsb, deadband,
                    max_step, tw_limit, enabled):
    if enabled:
        # the correction feeds back into the next sample; no closed form
        return _cfo_loop_jit.py_func(offset0, tw0, drift_steps, phases, resolution,
                                     lsb, deadband, max_step, tw_limit, enabled)
    n = drift_steps.shape[0]
    offsets = np.cumsum(np.concatenate(([offset0], drift_steps)))[1:]
    eff = offsets + tw0 * lsb
    counts = np.floor(eff / resolution + phases).astype(np.int64)
    words = np.full(n, tw0, dtype=np.int64)
    return eff, counts, words, np.zeros(n, dtype=bool), eff.copy()


def cfo_loop(offset0_ppm, tuning_word0, drift_steps, phases, resolution_ppm,
             lsb_ppm, deadband, max_step, tw_limit, enabled, use_numba=None):
    """Run the measure/tune recursion over ``len(drift_steps)`` periods.

    ``max_step < 0`` means unbounded. Returns ``(measured_ppm, counts,
    tuning_words, tuned, operating_ppm)`` where ``operating_ppm`` is the
    effective offset after that period's correction.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    fn = _cfo_loop_jit if use_numba else _cfo_loop_numpy
    return fn(float(offset0_ppm), int(tuning_word0),
              np.ascontiguousarray(drift_steps, dtype=np.float64),
              np.ascontiguousarray(phases, dtype=np.float64),
              float(resolution_ppm), float(lsb_ppm), int(deadband),
              int(max_step), int(tw_limit), bool(enabled))


# --- collision sweep ----------------------------------------------------------

@njit
def _collided_jit(q_frame, q_rx, start, end, pre_end, mask, chan, tx, txop, hears):
    k = q_frame.shape[0]
    n = start.shape[0]
    out = np.zeros(k, np.bool_)
    for qi in range(k):
        i = q_frame[qi]
        rx = q_rx[qi]
        for j in range(n):
            if j == i or tx[j] == tx[i]:
                continue
            if end[j] <= start[i] or end[i] <= start[j]:
                continue
            if tx[j] == rx:
                out[qi] = True  # receiver busy transmitting
                break
            if txop[i] >= 0 and txop[j] == txop[i]:
                continue
            if not hears[rx, tx[j]]:
                continue
            if abs(chan[i] - chan[j]) >= CHANNEL_SEPARATION:
                continue
            if chan[i] != chan[j]:
                out[qi] = True
                break
            # segments: [start, pre_end) full band, [pre_end, end) on mask
            hit = False
            for si in range(2):
                a0 = start[i] if si == 0 else pre_end[i]
                a1 = pre_end[i] if si == 0 else end[i]
                am = FULL_MASK if si == 0 else mask[i]
                if a1 <= a0:
                    continue
                for sj in range(2):
                    b0 = start[j] if sj == 0 else pre_end[j]
                    b1 = pre_end[j] if sj == 0 else end[j]
                    bm = FULL_MASK if sj == 0 else mask[j]
                    if b1 <= b0:
                        continue
                    if a0 < b1 and b0 < a1 and (am & bm) != 0:
                        hit = True
            if hit:
                out[qi] = True
                break
    return out


def _collided_numpy(q_frame, q_rx, start, end, pre_end, mask, chan, tx, txop, hears):
    out = np.zeros(q_frame.shape[0], dtype=bool)
    idx = np.arange(start.shape[0])
    for qi in range(q_frame.shape[0]):
        i = q_frame[qi]
        rx = q_rx[qi]
        live = (idx != i) & (tx != tx[i]) & (start < end[i]) & (start[i] < end)
        if np.any(live & (tx == rx)):
            out[qi] = True
            continue
        cand = live & hears[rx, tx] & (np.abs(chan - chan[i]) < CHANNEL_SEPARATION)
        if txop[i] >= 0:
            cand &= txop != txop[i]
        if np.any(cand & (chan != chan[i])):
            out[qi] = True
            continue
        same = cand & (chan == chan[i])
        hit = np.zeros_like(same)
        for a0, a1, am in ((start[i], pre_end[i], FULL_MASK), (pre_end[i], end[i], mask[i])):
            if a1 <= a0:
                continue
            for b0, b1, bm in ((start, pre_end, FULL_MASK), (pre_end, end, mask)):
                hit |= (b1 > b0) & (a0 < b1) & (b0 < a1) & ((am & bm) != 0)
        out[qi] = bool(np.any(same & hit))
    return out


def collided(q_frame, q_rx, start, end, pre_end, mask, chan, tx, txop, hears,
             use_numba=None):
    """For each query (frame, receiver) decide whether the receiver lost the frame.

    A frame is lost when the receiver is itself transmitting during it, or
    when it hears another transmitter whose frame overlaps in time and
    frequency. Frames sharing a non-negative ``txop`` id are one joint
    transmission and never interfere with each other.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    fn = _collided_jit if use_numba else _collided_numpy
    i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    return fn(i64(q_frame), i64(q_rx), i64(start), i64(end), i64(pre_end), i64(mask),
              i64(chan), i64(tx), i64(txop), np.ascontiguousarray(hears, dtype=np.bool_))
