"""Compare the compiled convolution kernels against the numpy fallback.

    python3 benchmarks/bench_conv.py [--repeat N] [--dtype float32|float64]

Prints per-kernel best-of-N wall time for each backend, the speedup, and the
max abs difference between the two outputs.
"""
import argparse
import timeit

import numpy as np

from evade import _conv_py

try:
    from evade import _conv_ext
except ImportError:  # extension not built
    _conv_ext = None

# (batch, c_in, c_out, H, W, k, stride): shapes used by the world model and policy
CASES = [
    (32, 16, 16, 4, 4, 3, 1),
    (32, 16, 8, 8, 8, 3, 1),
    (32, 16, 16, 8, 8, 3, 2),
    (10, 16, 16, 8, 8, 3, 2),
    (256, 8, 8, 8, 8, 3, 1),
]


def _ops(mod, x, w, g, k, stride, pad, H, W):
    return {
        "forward": lambda: mod.conv2d_forward(x, w, stride, pad),
        "backward_input": lambda: mod.conv2d_backward_input(g, w, stride, pad, H, W),
        "backward_weight": lambda: mod.conv2d_backward_weight(x, g, k, stride, pad),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    args = ap.parse_args()
    if _conv_ext is None:
        raise SystemExit("compiled extension not available; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    dt = np.dtype(args.dtype)
    print(f"{'case':<28} {'kernel':<16} {'compiled ms':>12} {'python ms':>10} {'speedup':>8} {'max diff':>9}")
    for B, ci, co, H, W, k, s in CASES:
        pad = k // 2
        Ho, Wo = -(-H // s), -(-W // s)
        x = rng.standard_normal((B, ci, H, W)).astype(dt)
        w = rng.standard_normal((co, ci, k, k)).astype(dt)
        g = rng.standard_normal((B, co, Ho, Wo)).astype(dt)
        fast = _ops(_conv_ext, x, w, g, k, s, pad, H, W)
        slow = _ops(_conv_py, x, w, g, k, s, pad, H, W)
        label = f"{B}x{ci}->{co} {H}x{W} k{k} s{s}"
        for name in fast:
            tf = min(timeit.repeat(fast[name], number=1, repeat=args.repeat)) * 1e3
            ts = min(timeit.repeat(slow[name], number=1, repeat=args.repeat)) * 1e3
            diff = float(np.abs(fast[name]() - slow[name]()).max())
            print(f"{label:<28} {name:<16} {tf:>12.3f} {ts:>10.3f} {ts / tf:>7.2f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
