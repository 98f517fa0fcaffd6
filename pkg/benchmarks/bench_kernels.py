"""Depthwise-conv kernels: numba loop forms vs pure-numpy forms.

Times forward, input-gradient and kernel-gradient passes at the GG-T gaze
shapes for a 224x224 image, then (with --model) a full GG-T forward under each
backend in a fresh interpreter, since the backend is fixed at import time.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--model]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ggformer import kernels
from ggformer._jit import NUMBA_AVAILABLE

# (C, h, w, k) for the four stages at 224^2 with the adaptive gaze schedule
SHAPES = [(96, 56, 56, 9), (192, 28, 28, 5), (384, 14, 14, 3), (768, 7, 7, 3)]

PASSES = {
    "forward": (kernels.forward_loops, kernels.forward_numpy,
                lambda x, k, g: (x, k)),
    "backward_input": (kernels.backward_input_loops, kernels.backward_input_numpy,
                       lambda x, k, g: (g, k)),
    "backward_kernel": (kernels.backward_kernel_loops, kernels.backward_kernel_numpy,
                        lambda x, k, g: (g, x, k.shape[1], k.shape[2])),
}

MODEL_SNIPPET = """
import time, numpy as np
from ggformer import build, forward, GG_T
from ggformer.tensor import no_grad
w = build(GG_T, seed=0); img = np.random.default_rng(0).standard_normal((3, 224, 224))
with no_grad(): forward(img, w)
t = time.perf_counter()
with no_grad(): forward(img, w)
print(time.perf_counter() - t)
"""


def best(fn, args, repeat):
    fn(*args)  # warm-up (triggers compilation for the loop form)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def model_time(disable):
    env = dict(os.environ, GG_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", MODEL_SNIPPET], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--model", action="store_true", help="also time a full GG-T forward")
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba not installed; loop forms run as plain Python", file=sys.stderr)
    rng = np.random.default_rng(0)
    print(f"{'pass':<16}{'shape':<20}{'numba ms':>10}{'numpy ms':>10}{'ratio':>8}  max|diff|")
    for C, h, w, k in SHAPES:
        x = rng.standard_normal((C, h, w))
        g = rng.standard_normal((C, h, w))
        kern = rng.standard_normal((C, k, k))
        for name, (loop_fn, np_fn, make) in PASSES.items():
            a = make(x, kern, g)
            t_loop, t_np = best(loop_fn, a, args.repeat), best(np_fn, a, args.repeat)
            diff = float(np.abs(loop_fn(*a) - np_fn(*a)).max())
            print(f"{name:<16}{f'{C}x{h}x{w} k{k}':<20}{t_loop * 1e3:>10.2f}"
                  f"{t_np * 1e3:>10.2f}{t_np / t_loop:>8.2f}  {diff:.1e}")
    if args.model:
        print(f"GG-T forward 224^2: numba {model_time(False):.3f}s, "
              f"numpy {model_time(True):.3f}s")


if __name__ == "__main__":
    main()
