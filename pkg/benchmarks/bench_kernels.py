"""Timing comparison of the pure-numpy and compiled kernel backends.

Runs each hot kernel on a few representative shapes and prints per-call
times plus the speedup factor.  Usage:

    python3 benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from tprec._kernels import _pure

try:
    from tprec._kernels import _core
except ImportError:
    _core = None

BOUNDS = (0.1, 3.0)


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def rnn_case(m, l, R, D, T, p_mode, seed=0):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(D * m + l)
    whh = rng.uniform(-scale, scale, (R, m, D * m))
    whx = rng.uniform(-scale, scale, (R, m, l))
    b = np.zeros(m)
    xs = rng.standard_normal((T, l))
    hist0 = 0.1 * rng.standard_normal((D, m))
    w1 = 0.1 * rng.standard_normal((3, 1 + m + l))
    b1 = np.zeros(3)
    w2 = 0.1 * rng.standard_normal(3)
    dH = rng.standard_normal((T, m))
    fwd_args = (whh, whx, b, xs, hist0, p_mode, 1.3, w1, b1, w2, 1.0, 1.0,
                *BOUNDS)

    def run(mod):
        out = mod.rnn_window_forward(*fwd_args)
        mod.rnn_window_backward(whh, whx, xs, hist0, out[0], out[1], out[2],
                                out[3], out[4], dH, p_mode, w1, b1, w2, 1.0,
                                1.0, *BOUNDS)

    return run


def lstm_case(m, l, R, D, T, gating, p_mode, seed=0):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(D * m + l)
    whh = rng.uniform(-scale, scale, (R, 4 * m, D * m))
    whx = rng.uniform(-scale, scale, (R, 4 * m, l))
    b = np.zeros(4 * m)
    xs = rng.standard_normal((T, l))
    hist0 = 0.1 * rng.standard_normal((D, m))
    c0 = np.ones(m)
    w1 = 0.1 * rng.standard_normal((3, 1 + m + l))
    b1 = np.zeros(3)
    w2 = 0.1 * rng.standard_normal(3)
    dH = rng.standard_normal((T, m))
    dC = np.zeros(m)
    fwd_args = (whh, whx, b, xs, hist0, c0, gating, p_mode, 1.3, w1, b1, w2,
                1.0, 1.0, *BOUNDS)

    def run(mod):
        out = mod.lstm_window_forward(*fwd_args)
        mod.lstm_window_backward(whh, whx, xs, hist0, c0, out[0], out[1],
                                 out[2], out[3], out[4], out[5], out[6],
                                 dH, dC, 0.0, gating, p_mode, w1, b1, w2,
                                 1.0, 1.0, *BOUNDS)

    return run


def decode_case(m, l, horizon, seed=0):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(m + l)
    whh = rng.uniform(-scale, scale, (1, 4 * m, m))
    whx = rng.uniform(-scale, scale, (1, 4 * m, l))
    b = np.zeros(4 * m)
    wout = rng.uniform(-scale, scale, (l, m))
    bout = np.zeros(l)
    x_init = rng.standard_normal(l)
    hist0 = np.zeros((1, m))
    c0 = np.ones(m)
    w1, b1, w2 = np.zeros((1, 1)), np.zeros(1), np.zeros(1)
    dY = rng.standard_normal((horizon, l))
    fwd_args = (whh, whx, b, wout, bout, x_init, hist0, c0, horizon, 1,
                0, 1.3, w1, b1, w2, 0.0, 1.0, *BOUNDS)

    def run(mod):
        out = mod.lstm_decode_forward(*fwd_args)
        mod.lstm_decode_backward(whh, whx, wout, out[1], hist0, c0, out[2],
                                 out[3], out[4], out[5], out[6], out[7],
                                 out[8], dY, 1, 0, w1, b1, w2, 0.0, 1.0,
                                 *BOUNDS)

    return run


def simulate_case(n, p, T, seed=0):
    rng = np.random.default_rng(seed)
    # small enough that the cubic case stays finite for the full horizon
    m_flat = (0.05 / n) * rng.standard_normal((n**p, n))
    noise = rng.standard_normal((T, n))

    def run(mod):
        mod.simulate_transition_path(m_flat, n, p, noise, np.zeros(n), 1e12)

    return run


CASES = [
    ("rnn fwd+bwd   m=16 R=2 D=2 T=200 scalar-p", rnn_case(16, 2, 2, 2, 200, 1)),
    ("rnn fwd+bwd   m=16 R=2 D=2 T=200 subnet-p", rnn_case(16, 2, 2, 2, 200, 2)),
    ("lstm fwd+bwd  m=16 R=1 D=1 T=200 standard", lstm_case(16, 2, 1, 1, 200, 1, 1)),
    ("lstm fwd+bwd  m=16 R=1 D=1 T=200 raw gate", lstm_case(16, 2, 1, 1, 200, 0, 1)),
    ("decode fwd+bwd m=16 horizon=100", decode_case(16, 2, 100)),
    ("simulate      n=6 p=2 T=20000", simulate_case(6, 2, 20000)),
    ("simulate      n=4 p=3 T=20000", simulate_case(4, 3, 20000)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20,
                    help="timing repeats per case (best-of)")
    args = ap.parse_args()

    if _core is None:
        print("compiled backend not built; run `pip install -e .` first")
        return

    name_w = max(len(name) for name, _ in CASES)
    print(f"{'case':<{name_w}} {'pure (ms)':>12} {'compiled (ms)':>14} "
          f"{'speedup':>9}")
    for name, case in CASES:
        case(_pure)  # warm both paths before timing
        case(_core)
        t_pure = best_of(lambda: case(_pure), args.repeats)
        t_core = best_of(lambda: case(_core), args.repeats)
        print(f"{name:<{name_w}} {t_pure * 1e3:>12.3f} {t_core * 1e3:>14.3f} "
              f"{t_pure / t_core:>8.1f}x")


if __name__ == "__main__":
    main()
