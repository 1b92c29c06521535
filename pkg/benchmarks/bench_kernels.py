"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Reports per-kernel median times and one end-to-end training step of a
micro residual network under each backend, after checking that both
backends produce identical outputs.
"""
import argparse
import statistics
import time

import numpy as np

from camtrap import kernels
from camtrap.autograd import backward, ops
from camtrap.nets import ArchitectureSpec, build_architecture


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(rng):
    x = rng.standard_normal((32, 16, 18, 18)).astype(np.float32)
    k, s, ho = 3, 1, 16
    cols = kernels.im2col(x, k, k, s, ho, ho)
    xm = rng.standard_normal((32, 16, 16, 16)).astype(np.float32)
    out, arg = kernels.maxpool_forward(xm, 2, 2, 8, 8)
    return {
        "im2col 32x16x18x18 k3": lambda: kernels.im2col(x, k, k, s, ho, ho),
        "col2im 32x16x18x18 k3": lambda: kernels.col2im(cols, 32, 16, 18, 18, k, k, s, ho, ho),
        "maxpool fwd 32x16x16x16": lambda: kernels.maxpool_forward(xm, 2, 2, 8, 8),
        "maxpool bwd 32x16x16x16": lambda: kernels.maxpool_backward(out, arg, 16, 16, 2, 2),
    }


def train_step_case():
    spec = ArchitectureSpec("residual-style", depth_units=3, input_side=16, num_classes=10, width_base=8)
    model = build_architecture(spec, seed=0)
    rng = np.random.default_rng(0)
    x = rng.random((32, 3, 16, 16)).astype(np.float32)
    y = rng.integers(0, 10, 32)

    def step():
        from camtrap.autograd import Tensor

        loss = ops.softmax_cross_entropy(model.forward(Tensor(x), mode="train"), y)
        backward(loss)

    return step


def check_agreement(rng):
    x = rng.standard_normal((4, 3, 9, 9))
    got = {}
    for name in ("compiled", "python"):
        kernels.use_backend(name)
        got[name] = (kernels.im2col(x, 3, 3, 2, 4, 4), kernels.maxpool_forward(x, 3, 2, 4, 4)[0])
    return all(np.array_equal(a, b) for a, b in zip(got["compiled"], got["python"]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    try:
        kernels.use_backend("compiled")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"backends agree bitwise: {check_agreement(rng)}")
    rows = []
    for name in ("compiled", "python"):
        kernels.use_backend(name)
        cases = kernel_cases(np.random.default_rng(1))
        cases["resnet train step (batch 32)"] = train_step_case()
        for label, fn in cases.items():
            fn()
            rows.append((label, name, _median_time(fn, args.repeat)))
    timings = {(label, name): t for label, name, t in rows}
    print(f"{'case':32s} {'compiled ms':>12s} {'python ms':>12s} {'speedup':>8s}")
    for label in dict.fromkeys(label for label, _, _ in rows):
        c, p = timings[(label, "compiled")], timings[(label, "python")]
        print(f"{label:32s} {c * 1e3:12.3f} {p * 1e3:12.3f} {p / c:8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
