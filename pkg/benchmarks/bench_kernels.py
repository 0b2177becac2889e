"""Timing comparison of the pure-numpy and compiled kernel backends.

Run as `python benchmarks/bench_kernels.py`. Shapes mirror what training
actually sees: attention score rows (batch*heads*len, len), hidden-state
rows (batch*len, d_model), output-projection rows (batch*len, vocab) and
one flat optimizer slab.
"""

import time

import numpy as np

from modnmt._kernels import available_backends

REPEATS = 30


def timed(fn, *args):
    best = float("inf")
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, make_args, dtype):
    rows = []
    backends = available_backends()
    args_by_backend = {b: make_args(dtype) for b in backends}
    for op, call in CASES[name]:
        times = {}
        for bname, mod in backends.items():
            times[bname] = timed(call, mod, *args_by_backend[bname])
        rows.append((op, times))
    return rows


def softmax_args(dtype):
    # attention scores: (batch*heads*len, len) at batch 40, heads 4, len 14
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2240, 14)).astype(dtype)
    y = np.ascontiguousarray(np.exp(x) / np.exp(x).sum(1, keepdims=True))
    g = rng.normal(size=x.shape).astype(dtype)
    return x, y, g


def layernorm_args(dtype):
    # hidden states: (batch*len, d_model)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(560, 64)).astype(dtype)
    gain = np.ones(64, dtype=dtype)
    bias = np.zeros(64, dtype=dtype)
    g = rng.normal(size=x.shape).astype(dtype)
    xhat = rng.normal(size=x.shape).astype(dtype)
    rstd = np.abs(rng.normal(size=x.shape[0])).astype(dtype) + 0.5
    return x, gain, bias, g, xhat, rstd


def xent_args(dtype):
    # output logits: (batch*len, vocab)
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(560, 250)).astype(dtype)
    targets = rng.integers(0, 250, size=560)
    valid = rng.random(560) > 0.1
    probs = np.ascontiguousarray(
        np.exp(logits) / np.exp(logits).sum(1, keepdims=True))
    return logits, targets, valid, probs


def adam_args(dtype):
    # largest desk-scale weight: an embedding table of 256 x 64
    rng = np.random.default_rng(3)
    n = 256 * 64
    return tuple(rng.normal(size=n).astype(dtype) for _ in range(3)) + \
        (np.abs(rng.normal(size=n)).astype(dtype),)


CASES = {
    "softmax": [
        ("softmax2d", lambda m, x, y, g: m.softmax2d(x)),
        ("softmax2d_grad", lambda m, x, y, g: m.softmax2d_grad(y, g)),
    ],
    "layernorm": [
        ("layernorm2d",
         lambda m, x, gain, bias, g, xh, rs: m.layernorm2d(x, gain, bias,
                                                           1e-5)),
        ("layernorm2d_grad",
         lambda m, x, gain, bias, g, xh, rs: m.layernorm2d_grad(g, xh, rs,
                                                                gain)),
    ],
    "cross_entropy": [
        ("cross_entropy2d",
         lambda m, lg, t, v, p: m.cross_entropy2d(lg, t, v)),
        ("cross_entropy2d_grad",
         lambda m, lg, t, v, p: m.cross_entropy2d_grad(p.copy(), t, v, 0.01)),
    ],
    "adam": [
        ("adam_update",
         lambda m, p, g, mm, vv: m.adam_update(p, g, mm, vv, 1e-3, 0.9,
                                               0.999, 1e-8, 0.1, 0.001)),
    ],
}

MAKERS = {
    "softmax": softmax_args,
    "layernorm": layernorm_args,
    "cross_entropy": xent_args,
    "adam": adam_args,
}


def main():
    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled backend missing; timing the pure backend only")
    for dtype in (np.float32, np.float64):
        print(f"\n== dtype {np.dtype(dtype).name} ==")
        header = f"{'kernel':24s}" + "".join(
            f"{b:>12s}" for b in backends)
        if len(backends) == 2:
            header += f"{'speedup':>10s}"
        print(header)
        for case, maker in MAKERS.items():
            for op, times in bench_case(case, maker, dtype):
                line = f"{op:24s}" + "".join(
                    f"{times[b] * 1e6:10.1f}us" for b in backends)
                if "pure" in times and "fast" in times:
                    line += f"{times['pure'] / times['fast']:9.2f}x"
                print(line)


if __name__ == "__main__":
    main()
