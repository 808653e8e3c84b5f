"""Compare the numpy and compiled kernel backends.

Run with ``python benchmarks/bench_kernels.py``.  Kernel timings call both
backends directly; the training-step timing runs in a subprocess per backend
because the choice is fixed at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from staticbackdoor import kernels

STEP_SNIPPET = """
import timeit, numpy as np
from staticbackdoor import kernels
from staticbackdoor.model import new_model, _loss_and_grads_arrays
rng = np.random.default_rng(0)
x = rng.integers(0, 256, (64, 1, 28, 28), dtype=np.uint8)
y = rng.integers(0, 10, 64)
m = new_model("smallcnn", 10, 0)
n = {repeat}
t = min(timeit.repeat(lambda: _loss_and_grads_arrays(m, x, y), number=1, repeat=n))
print(kernels.BACKEND, t)
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(rng):
    x = rng.random((64, 28, 28, 32), dtype=np.float32)
    cols = kernels.numpy_backend.im2col3x3(x)
    out, arg = kernels.numpy_backend.maxpool2_forward(x)
    img = rng.random((1, 28, 28))
    return {
        "im2col3x3 64x28x28x32": lambda b: b.im2col3x3(x),
        "col2im3x3 64x28x28x32": lambda b: b.col2im3x3(cols),
        "maxpool2 forward": lambda b: b.maxpool2_forward(x),
        "maxpool2 backward": lambda b: b.maxpool2_backward(out, arg, 28, 28),
        "bilinear 28x28 -> 24x24": lambda b: b.bilinear_resize(img, 24, 24),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    backends = [kernels.numpy_backend]
    if kernels.compiled_backend is None:
        print("compiled extension not built; timing the numpy backend only")
    else:
        backends.append(kernels.compiled_backend)

    print(f"{'kernel':28s}" + "".join(f"{b.name:>12s}" for b in backends) + "   speedup")
    for name, call in kernel_cases(np.random.default_rng(0)).items():
        results = [call(b) for b in backends]
        ref = results[0] if isinstance(results[0], tuple) else (results[0],)
        for r in results[1:]:
            r = r if isinstance(r, tuple) else (r,)
            assert all(np.array_equal(a, c) for a, c in zip(ref, r)), f"{name}: backends disagree"
        times = [best(lambda: call(b), args.repeat) for b in backends]
        speedup = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{name:28s}" + "".join(f"{1e3 * t:10.3f}ms" for t in times) + speedup)

    print()
    step = {}
    for pure in ("1", "0"):
        env = dict(os.environ, STATICBACKDOOR_PURE=pure)
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=max(3, args.repeat // 4))],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        step[out[0]] = float(out[1])
    for name, t in step.items():
        print(f"training step, batch 64 ({name}): {1e3 * t:.1f}ms")
    if len(step) == 2:
        print(f"speedup: {step['numpy'] / step['cython']:.2f}x")


if __name__ == "__main__":
    main()
