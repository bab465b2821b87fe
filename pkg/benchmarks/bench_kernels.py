"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Compilation is excluded: each kernel is called once before timing.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from coofdma import kernels
from coofdma._accel import HAS_NUMBA


def cfo_inputs(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return (9.5, 0, rng.normal(0, 0.0004, n), rng.random(n), 0.01, 0.0125, 2, -1, 1448, True)


def collision_inputs(n_frames: int, n_nodes: int = 16, seed: int = 0):
    rng = np.random.default_rng(seed)
    start = np.sort(rng.integers(0, n_frames * 50_000, n_frames))
    end = start + rng.integers(40_000, 200_000, n_frames)
    pre_end = start + 53_600
    mask = rng.choice([0x1FF, 0x00F, 0x1E0, 0x003, 0x010], n_frames)
    chan = rng.choice([1, 1, 1, 6], n_frames)
    tx = rng.integers(0, n_nodes, n_frames)
    txop = np.full(n_frames, -1)
    hears = rng.random((n_nodes, n_nodes)) < 0.6
    q_frame = np.arange(n_frames)
    q_rx = (tx + 1 + rng.integers(0, n_nodes - 1, n_frames)) % n_nodes
    return q_frame, q_rx, start, end, pre_end, mask, chan, tx, txop, hears


def bench(label, fn, args, repeat):
    out = {}
    for backend in (True, False) if HAS_NUMBA else (False,):
        fn(*args, use_numba=backend)
        t = min(timeit.repeat(lambda: fn(*args, use_numba=backend), number=1, repeat=repeat))
        out["numba" if backend else "numpy"] = t
    parts = "  ".join(f"{k} {v * 1e3:9.3f} ms" for k, v in out.items())
    speed = f"  x{out['numpy'] / out['numba']:.1f}" if "numba" in out else ""
    print(f"{label:<28}{parts}{speed}")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    for n in (240, 35_000):
        bench(f"cfo_loop periods={n}", kernels.cfo_loop, cfo_inputs(n), args.repeat)
    for n in (200, 2_000):
        bench(f"collided frames={n}", kernels.collided, collision_inputs(n), args.repeat)


if __name__ == "__main__":
    main()
