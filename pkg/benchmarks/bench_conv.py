"""Compare the convolution backends on the shapes the closures use.

Run from the repository root:

    python3 benchmarks/bench_conv.py [--repeats N]

Times the forward pass, both backward passes, and a whole network
forward+backward on every available backend.  The compiled extension is
selected automatically at import time when it built; this script shows
what that choice is worth on the current machine.
"""

import argparse
import time

import numpy as np

from qgclosure import autodiff, convops
from qgclosure.closures import cnn_forward_normalized, cnn_init


# (label, channels_in, channels_out, grid n, kernel)
SHAPES = [
    ("first layer  1->16, 32^2, k=5", 1, 16, 32, 5),
    ("mid layer   16->16, 32^2, k=5", 16, 16, 32, 5),
    ("wide layer  64->64, 32^2, k=5", 64, 64, 32, 5),
    ("fine layer  16->16, 128^2, k=5", 16, 16, 128, 5),
]


def _time(fn, repeats):
    fn()  # warm-up, excluded
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def bench_ops(repeats):
    rng = np.random.default_rng(0)
    header = f"{'shape':34s} {'backend':10s} {'fwd ms':>8s} {'bwd_in ms':>10s} {'bwd_w ms':>9s}"
    print(header)
    print("-" * len(header))
    for label, c_in, c_out, n, k in SHAPES:
        x = rng.standard_normal((c_in, n, n))
        w = rng.standard_normal((c_out, c_in, k, k))
        b = rng.standard_normal(c_out)
        gy = rng.standard_normal((c_out, n, n))
        for backend in convops.available_backends():
            convops.set_backend(backend)
            fwd = _time(lambda: convops.conv2d_forward(x, w, b), repeats)
            bwd_i = _time(lambda: convops.conv2d_backward_input(gy, w), repeats)
            bwd_w = _time(lambda: convops.conv2d_backward_weights(x, gy, k), repeats)
            print(f"{label:34s} {backend:10s} {fwd:8.3f} {bwd_i:10.3f} {bwd_w:9.3f}")
        print()


def bench_network(repeats):
    """Forward+backward through the reduced closure network on 32^2."""
    rng = np.random.default_rng(1)
    x = rng.standard_normal((32, 32))
    params = cnn_init(seed=0, depth=4, width=16, kernel=5)

    def fn(leaves):
        layers = list(zip(leaves[0::2], leaves[1::2]))
        out = cnn_forward_normalized(layers, x, 1.0)
        return autodiff.mean(out * out)

    def run():
        autodiff.value_and_grad(fn, params.flat())

    print("whole network, 4 layers x 16 channels, 32^2, k=5 (fwd+bwd):")
    for backend in convops.available_backends():
        convops.set_backend(backend)
        ms = _time(run, repeats)
        print(f"  {backend:10s} {ms:8.2f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20,
                    help="timed repetitions per measurement (default 20)")
    args = ap.parse_args()
    print(f"available backends: {', '.join(convops.available_backends())}")
    print(f"default backend: {convops.active_backend()}\n")
    default = convops.active_backend()
    try:
        bench_ops(args.repeats)
        bench_network(args.repeats)
    finally:
        convops.set_backend(default)


if __name__ == "__main__":
    main()
