"""Time the numba and numpy kernel backends on LeNet-sized tensors.

    python benchmarks/bench_kernels.py [--batch 32] [--repeat 20]
"""
import argparse
import time

import numpy as np

from uaix import _kernels as K


def _time(fn, args, repeat):
    fn(*args)  # warm-up / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e3


def cases(batch, rng):
    x1 = rng.normal(size=(batch, 3, 28, 28))
    w1 = rng.normal(size=(6, 3, 5, 5))
    y1 = rng.normal(size=(batch, 6, 24, 24))
    x2 = rng.normal(size=(batch, 6, 12, 12))
    w2 = rng.normal(size=(16, 6, 5, 5))
    y2 = rng.normal(size=(batch, 16, 8, 8))
    pooled, arg = K.NUMPY_KERNELS["maxpool_forward"](y1, 2, 2)
    return [
        ("conv1 forward", "conv2d_forward", (x1, w1, np.zeros(6), 1, 0)),
        ("conv2 forward", "conv2d_forward", (x2, w2, np.zeros(16), 1, 0)),
        ("conv2 backward input", "conv2d_backward_input", (y2, w2, x2.shape, 1, 0)),
        ("conv1 backward weight", "conv2d_backward_weight", (x1, y1, 5, 1, 0)),
        ("conv2 backward weight", "conv2d_backward_weight", (x2, y2, 5, 1, 0)),
        ("maxpool forward", "maxpool_forward", (y1, 2, 2)),
        ("maxpool backward", "maxpool_backward", (pooled, arg, y1.shape, 2, 2)),
        ("avgpool forward", "avgpool_forward", (y1, 2, 2)),
        ("avgpool backward", "avgpool_backward", (pooled, y1.shape, 2, 2)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if K.NUMBA_KERNELS is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    tot_np = tot_nb = 0.0
    for label, name, a in cases(args.batch, rng):
        t_np = _time(K.NUMPY_KERNELS[name], a, args.repeat)
        t_nb = _time(K.NUMBA_KERNELS[name], a, args.repeat)
        tot_np += t_np
        tot_nb += t_nb
        print(f"{label:<24}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.2f}x")
    print(f"{'total':<24}{tot_np:>10.3f}{tot_nb:>10.3f}{tot_np / tot_nb:>8.2f}x")


if __name__ == "__main__":
    main()
