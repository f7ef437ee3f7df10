#!/usr/bin/env python3
"""Compare the numba kernels with the pure-numpy fallback.

Prints a table and writes JSON (``--out``). With ``--epoch`` it also times one
training epoch end to end under each backend; that part runs in subprocesses
because the backend is chosen from RTHN_DISABLE_NUMBA at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from rthn import kernels

SEED = 42


def timeit(fn, warmup, runs):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return {"min": min(times), "mean": float(np.mean(times)), "runs": runs}


# one batch of 32 documents: N real clauses, T words in the longest clause
SHAPES = {
    "desk": dict(T=10, N=224, H=8, C=12),
    "full": dict(T=25, N=224, H=100, C=45),
}


def cases(shape, size):
    rng = np.random.default_rng(SEED)
    T, N, H = shape["T"], shape["N"] * size, shape["H"]
    xg = rng.normal(size=(T, N, 4 * H))
    w_h = rng.uniform(-0.1, 0.1, size=(H, 4 * H))
    lengths = rng.integers(1, T + 1, size=N)
    mask = (np.arange(T)[:, None] < lengths[None, :]).astype(np.float64)
    d_out = rng.normal(size=(T, N, H))

    B, C = 32 * size, shape["C"]
    n = rng.integers(1, C + 1, size=B)
    cmask = (np.arange(C)[None] < n[:, None]).astype(np.float64)
    emo = np.array([rng.integers(0, k) for k in n])
    rel = ((np.arange(C)[None] - emo[:, None]) * cmask).astype(np.int64)
    labels = rng.choice([-1.0, 1.0], size=(B, C)) * cmask

    scores = rng.random(20_000 * size)
    gold = (rng.random(scores.size) < 0.18).astype(np.float64)
    th = np.round(np.arange(101) * 0.01, 2)

    def lstm_fwd(k):
        return lambda: k.lstm_forward(xg, w_h, mask, False)

    def lstm_bwd(k):
        saved = k.lstm_forward(xg, w_h, mask, False)[1:]
        return lambda: k.lstm_backward(d_out, w_h, mask, False, *saved)

    return {
        "lstm_forward": lstm_fwd,
        "lstm_backward": lstm_bwd,
        "build_gp": lambda k: lambda: k.build_gp(labels, cmask, rel, 10),
        "threshold_counts": lambda k: lambda: k.threshold_counts(scores, gold, th),
    }


EPOCH_SNIPPET = """
import json, time
from rthn import kernels, small_config
from rthn.data import generate_synthetic
from rthn.train import train
docs = generate_synthetic({n_docs}, seed=5)
cfg = small_config(variant="{variant}")
if "{shape}" == "full":
    cfg = cfg.replace(word_dim=200, rpe_dim=50, gpe_dim=50, lstm_hidden=100, qk_dim=250, v_dim=200,
                      n_heads=5, ffn_dim=800, gp_window=10, batch_size=32)
train(cfg, docs[:32], epochs=1, early_stopping=False)
res = train(cfg, docs, epochs=2, early_stopping=False)
print(json.dumps({{"backend": kernels.BACKEND, "epoch_seconds": min(res.epoch_seconds)}}))
"""


def epoch_timing(n_docs, variant, shape):
    out = {}
    for name, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, RTHN_DISABLE_NUMBA=flag)
        code = EPOCH_SNIPPET.format(n_docs=n_docs, variant=variant, shape=shape)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[name] = json.loads(res.stdout.strip().splitlines()[-1])["epoch_seconds"]
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--shape", choices=[*SHAPES, "all"], default="all", help="dimension profile")
    p.add_argument("--size", type=int, default=1, help="batch size multiplier")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--epoch", action="store_true", help="also time one training epoch per backend")
    p.add_argument("--epoch-docs", type=int, default=128)
    p.add_argument("--variant", default="RTHN")
    p.add_argument("--out", help="write JSON results here")
    args = p.parse_args(argv)

    backends = {"numba": kernels.get_backend("numba"), "numpy": kernels.get_backend("numpy")}
    shapes = list(SHAPES) if args.shape == "all" else [args.shape]
    results = {"size": args.size}
    print(f"{'shape':6s} {'kernel':18s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for shape in shapes:
        res = results[shape] = {"dims": SHAPES[shape], "kernels": {}}
        for name, make in cases(SHAPES[shape], args.size).items():
            row = {b: timeit(make(k), args.warmup, args.runs) for b, k in backends.items()}
            row["speedup"] = row["numpy"]["min"] / row["numba"]["min"]
            res["kernels"][name] = row
            print(f"{shape:6s} {name:18s} {row['numba']['min'] * 1e3:10.3f} "
                  f"{row['numpy']['min'] * 1e3:10.3f} {row['speedup']:7.1f}x")
        if args.epoch:
            ep = res["epoch_seconds"] = epoch_timing(args.epoch_docs, args.variant, shape)
            print(f"{shape:6s} {'epoch ' + args.variant:18s} {ep['numba'] * 1e3:10.1f} "
                  f"{ep['numpy'] * 1e3:10.1f} {ep['numpy'] / ep['numba']:7.1f}x")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
