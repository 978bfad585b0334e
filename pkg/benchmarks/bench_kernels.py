"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times the LSTM step (forward + backward), the attention step, and one full
training iteration at the default model size (K=7, D=1024, H=64).
"""

import argparse
import timeit

import numpy as np

from gazeattn import kernels
from gazeattn.model import ModelConfig, forward_sequence, init_params
from gazeattn.training import backward, loss


def cases(cfg, rng):
    H, D, R = cfg.hidden, cfg.depth, cfg.regions
    W = rng.normal(scale=0.05, size=(4 * H, H + D))
    b = np.zeros(4 * H)
    h, c, x = rng.normal(size=H), rng.normal(size=H), rng.normal(size=D)
    X = rng.normal(size=(R, D))
    w_h, w_c = rng.normal(scale=0.05, size=(R, H)), rng.normal(scale=0.05, size=(R, D))
    params = init_params(cfg, rng)
    frames = rng.normal(size=(30, R, D))
    labels = rng.integers(0, R, size=30)

    def lstm():
        k = kernels.active()
        gates, c1, tc, h1 = k.lstm_forward(W, b, h, c, x)
        k.lstm_backward(W, gates, c, tc, h, x, np.ones(H), np.zeros(H), np.zeros_like(W), np.zeros_like(b))

    def attention():
        k = kernels.active()
        p = k.attend_forward(w_h, w_c, h, X, True)
        k.attend_backward(w_h, w_c, h, X, True, p, np.zeros_like(w_h), np.zeros_like(w_c))
        k.blend_backward(X, k.blend_forward(p, X))

    def iteration():
        maps, cache = forward_sequence(params, frames, rng=rng, training=True)
        loss(maps, labels, params, 0.01)
        backward(cache, labels, params, 0.01)

    return {"lstm step fwd+bwd": lstm, "attention step fwd+bwd": attention, "train iteration (T=30)": iteration}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cfg = ModelConfig()
    names = kernels.available()
    results = {}
    for name in names:
        with kernels.using(name):
            for label, fn in cases(cfg, np.random.default_rng(0)).items():
                n, _ = timeit.Timer(fn).autorange()
                best = min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n
                results[label, name] = best
    print(f"{'case':<26}" + "".join(f"{n:>14}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label in cases(ModelConfig(grid=1, depth=1, hidden=1), np.random.default_rng(0)):
        row = f"{label:<26}" + "".join(f"{results[label, n] * 1e3:>11.3f} ms" for n in names)
        if len(names) > 1:
            row += f"{results[label, 'python'] / results[label, 'compiled']:>11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
