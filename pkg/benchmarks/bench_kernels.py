"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Prints one line per kernel and shape with the mean time per call for each
backend and the speedup.  Also times one desk-scale policy step end to end
with each backend selected.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rpanav.autodiff import _fallback

try:
    from rpanav.autodiff import _kernels
except ImportError:
    _kernels = None

SHAPES = [(16, 64), (64, 256), (320, 512)]


def cases(rng):
    for b, n in SHAPES:
        x = rng.normal(size=(b, n))
        mask = rng.random((b, n)) < 0.8
        mask[:, 0] = True
        out = _fallback.masked_softmax(x, mask)
        g = rng.normal(size=(b, n))
        gates = rng.normal(size=(b, 4 * n))
        c = rng.normal(size=(b, n))
        _, cache = _fallback.lstm_forward(gates, c)
        dhc = rng.normal(size=(b, 2 * n))
        yield f"sigmoid {b}x{n}", "sigmoid", (x,)
        yield f"masked_softmax {b}x{n}", "masked_softmax", (x, mask)
        yield f"softmax_backward {b}x{n}", "softmax_backward", (out, g)
        yield f"lstm_forward {b}x{n}", "lstm_forward", (gates, c)
        yield f"lstm_backward {b}x{n}", "lstm_backward", (dhc, c, cache)


def per_call(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=repeat, repeat=3)) / repeat


POLICY_STEP = """
import timeit, numpy as np
from rpanav.autodiff import kernels
from rpanav.agent import PolicyConfig, RecurrentPolicy
from rpanav.autodiff import ParameterStore
pol = RecurrentPolicy(ParameterStore("p"), PolicyConfig(), np.random.default_rng(0))
rng = np.random.default_rng(1)
instr = [list(rng.integers(3, 40, size=20)) for _ in range(16)]
obs = rng.random((16, 64))
def step():
    enc = pol.encode(instr)
    s = pol.initial_state(16)
    for _ in range(5):
        out, s = pol.decode_step(s, enc, obs)
        s = pol.advance(s, [1] * 16)
    from rpanav import autodiff as ad
    ad.vsum(out.logits).backward()
t = min(timeit.repeat(step, number=5, repeat=3)) / 5
print(kernels.BACKEND, t)
"""


def policy_step(pure: bool) -> tuple[str, float]:
    env = dict(os.environ)
    env.pop("RPANAV_PURE_PYTHON", None)
    if pure:
        env["RPANAV_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", POLICY_STEP], env=env, capture_output=True, text=True, check=True)
    backend, t = out.stdout.split()
    return backend, float(t)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy us':>12}{'cython us':>12}{'speedup':>10}")
    for label, name, inputs in cases(rng):
        a = per_call(getattr(_fallback, name), inputs, args.repeat)
        b = per_call(getattr(_kernels, name), inputs, args.repeat)
        print(f"{label:<28}{a * 1e6:>12.1f}{b * 1e6:>12.1f}{a / b:>10.2f}")
    (_, slow), (backend, fast) = policy_step(True), policy_step(False)
    print(f"\npolicy 5-step forward+backward, batch 16: numpy {slow * 1e3:.1f} ms, {backend} {fast * 1e3:.1f} ms, "
          f"speedup {slow / fast:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
