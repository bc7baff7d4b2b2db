"""Compare the numba kernels with their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one generator training step under each backend by spawning a
subprocess with IDSR_DISABLE_NUMBA set, since the backend is chosen at
import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from idsr import _kernels as K

STEP_SNIPPET = """
import timeit, numpy as np
from idsr import _kernels, losses as L, tensor as T
from idsr.networks import build_generator
from idsr.optim import OptimizerState, rmsprop_step
G = build_generator(seed=0)
r = np.random.default_rng(0)
lr = r.uniform(size=(8, 1, 8, 8)).astype(np.float32)
hr = r.uniform(size=(8, 1, 64, 64)).astype(np.float32)
state = OptimizerState()
def step():
    with T.Tape() as tape:
        loss = L.loss_recon(G(lr), hr)
    params = G.parameters()
    rmsprop_step(params, dict(zip(params, T.backward(tape, loss, wrt=list(params.values())))), state)
step()
print(_kernels.BACKEND, min(timeit.repeat(step, number=1, repeat=%d)))
"""


def bench(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    r = np.random.default_rng(0)
    x = r.normal(size=(8, 16, 32, 32))
    cols = K.numpy_im2col(x, 3, 3, 1)
    img = r.uniform(size=(64, 64, 64))
    kern = r.uniform(size=17)
    cases = [
        ("im2col 8x16x32x32 k3", lambda: K.numpy_im2col(x, 3, 3, 1), lambda: K.numba_im2col(x, 3, 3, 1)),
        ("col2im 8x16x32x32 k3", lambda: K.numpy_col2im(cols, 16, 32, 32, 3, 3, 1),
         lambda: K.numba_col2im(cols, 16, 32, 32, 3, 3, 1)),
        ("blur rows 64x64x64 r8", lambda: K.numpy_blur_rows_replicate(img, kern),
         lambda: K.numba_blur_rows_replicate(img, kern)),
    ]
    print(f"{'kernel':26s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, a, b in cases:
        ta, tb = bench(a, args.repeat), bench(b, args.repeat)
        print(f"{name:26s} {ta * 1e3:10.3f} {tb * 1e3:10.3f} {ta / tb:8.2f}")

    print("\ngenerator training step (batch 8, 8x8 -> 64x64):")
    for flag in ("1", "0"):
        env = {**os.environ, "IDSR_DISABLE_NUMBA": flag}
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET % max(3, args.repeat // 4)],
                             env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:6s} {float(seconds) * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
