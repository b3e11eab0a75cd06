"""Compare the compiled LSTM kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Times one forward+backward sequence pass (batch 32, 10 steps) for each LSTM
layer shape that appears in the preset architectures.
"""

import argparse
import timeit

import numpy as np

from stallnet.kernels import _lstm_py

try:
    from stallnet.kernels import _lstm_ext
except ImportError:
    _lstm_ext = None

SHAPES = [(16, 32), (32, 16), (16, 224), (224, 128), (16, 192), (384, 160)]


def _case(n_in, h, batch=32, T=10, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((T, batch, n_in))
    W = rng.standard_normal((4 * h, n_in)) * 0.1
    U = rng.standard_normal((4 * h, h)) * 0.1
    b = np.zeros(4 * h)
    dH = rng.standard_normal((T, batch, h))
    return X, W, U, b, dH


def _pass(mod, X, W, U, b, dH):
    H, C, G = mod.lstm_seq_forward(X, W, U, b)
    mod.lstm_seq_backward(X, W, U, H, C, G, dH)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _lstm_ext is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'in':>5} {'hidden':>6} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for n_in, h in SHAPES:
        case = _case(n_in, h)
        t_py = min(timeit.repeat(lambda: _pass(_lstm_py, *case), number=1, repeat=args.repeat))
        if _lstm_ext is not None:
            t_cy = min(timeit.repeat(lambda: _pass(_lstm_ext, *case), number=1, repeat=args.repeat))
            print(f"{n_in:>5} {h:>6} {t_py * 1e3:>10.3f} {t_cy * 1e3:>10.3f} {t_py / t_cy:>7.2f}x")
        else:
            print(f"{n_in:>5} {h:>6} {t_py * 1e3:>10.3f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
