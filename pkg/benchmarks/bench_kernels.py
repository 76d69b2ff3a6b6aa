"""Compare the compiled and numpy kernel backends on desk-scale shapes.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from cdfl import kernels

CASES = {
    # (batch, in channels, side) for the two conv stages of the default network at batch 8 and 256
    "conv0 fwd b8": ("fwd", (8, 1, 16), 8),
    "conv1 fwd b8": ("fwd", (8, 8, 8), 16),
    "conv0 bwd b8": ("bwd", (8, 1, 16), 8),
    "conv1 bwd b8": ("bwd", (8, 8, 8), 16),
    "conv0 fwd b256": ("fwd", (256, 1, 16), 8),
    "sq_dists 400x4": ("dist", (400, 32), 4),
}


def _job(k, kind, shape, out, rng):
    if kind == "dist":
        p, c = rng.normal(size=shape), rng.normal(size=(out, shape[1]))
        return lambda: k.sq_dists(p, c)
    b, cin, side = shape
    x, w, bias = rng.normal(size=(b, cin, side, side)), rng.normal(size=(out, cin, 3, 3)), rng.normal(size=out)
    if kind == "fwd":
        return lambda: k.conv2d_forward(x, w, bias)
    g = rng.normal(size=(b, out, side, side))
    return lambda: k.conv2d_backward(x, w, g)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    print(f"{'case':<16}" + "".join(f"{b + ' ms':>14}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name, (kind, shape, out) in CASES.items():
        times = []
        for b in backends:
            fn = _job(kernels.get_backend(b), kind, shape, out, np.random.default_rng(0))
            fn()
            times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3)
        line = f"{name:<16}" + "".join(f"{t:>14.3f}" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
