#!/usr/bin/env python3
"""Time the selective scan across chunk sizes and report the worst relative
deviation of each chunked variant from the sequential reference.
"""

import argparse
import time

import numpy as np

from ddhf.ssm import ScanParams, selective_scan, selective_scan_chunked


def bench(n: int, c: int, ds: int, chunks: list[int], repeats: int) -> None:
    rng = np.random.default_rng(99)
    x = rng.normal(size=(n, c)).astype(np.float32)
    a = -rng.uniform(0.05, 2.0, size=(c, ds))
    params = ScanParams(
        b=rng.normal(size=(n, ds)).astype(np.float32),
        c=rng.normal(size=(n, ds)).astype(np.float32),
        delta=rng.uniform(0.005, 0.5, size=(n, c)).astype(np.float32),
    )

    best = min(
        timed(selective_scan, x, a, params) for _ in range(repeats)
    )
    ref = selective_scan(x, a, params)
    scale = np.maximum(np.abs(ref), 1.0)
    print(f"n={n} C={c} d_state={ds}")
    print(f"  {'sequential':<12} {best * 1e3:8.2f} ms")
    for chunk in chunks:
        best = min(
            timed(selective_scan_chunked, x, a, params, chunk=chunk)
            for _ in range(repeats)
        )
        out = selective_scan_chunked(x, a, params, chunk=chunk)
        err = float(np.max(np.abs(out - ref) / scale))
        print(f"  chunk={chunk:<6} {best * 1e3:8.2f} ms   max rel err {err:.2e}")


def timed(fn, *args, **kwargs) -> float:
    t = time.perf_counter()
    fn(*args, **kwargs)
    return time.perf_counter() - t


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=4096, help="sequence length")
    parser.add_argument("--channels", type=int, default=32)
    parser.add_argument("--d-state", type=int, default=8)
    parser.add_argument("--chunks", type=int, nargs="+",
                        default=[1, 16, 64, 256, 1024])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    bench(args.n, args.channels, args.d_state, args.chunks, args.repeats)


if __name__ == "__main__":
    main()
