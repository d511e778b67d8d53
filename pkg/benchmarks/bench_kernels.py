#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Micro-benchmarks call both implementations directly on desk-scale
shapes, bypassing the import-time dispatch. `--train` additionally
times a short end-to-end training run per backend in a subprocess,
since consumers bind a backend once at import.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 50 --train
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from radkg.kernels import _pykernels

try:
    from radkg.kernels import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    r = np.random.default_rng(0)
    x = r.standard_normal((256, 128))
    flat = x.reshape(-1)  # gelu operates on flat views, as in the tensor core
    attn = r.standard_normal((256, 256))
    logits = r.standard_normal((256, 600))
    labels = r.integers(0, 600, size=256)
    mask = np.ascontiguousarray(r.random(256) < 0.7, dtype=np.uint8)
    gain, bias = r.standard_normal(128), r.standard_normal(128)
    probs = _pykernels.softmax_fwd(logits)
    dy = r.standard_normal((256, 128))
    dflat = dy.reshape(-1)
    _, xhat, inv_std = _pykernels.layer_norm_fwd(x, gain, bias, 1e-5)
    p, g = r.standard_normal(1_000_000), r.standard_normal(1_000_000)
    m, v = np.zeros_like(p), np.zeros_like(p)
    a_ids = r.integers(0, 40, size=200).astype(np.int32)
    b_ids = r.integers(0, 40, size=200).astype(np.int32)
    return [
        ("softmax_fwd", "256x256", lambda k: k.softmax_fwd(attn)),
        ("softmax_bwd", "256x256", lambda k: k.softmax_bwd(attn, attn)),
        ("layer_norm_fwd", "256x128", lambda k: k.layer_norm_fwd(x, gain, bias, 1e-5)),
        ("layer_norm_bwd", "256x128", lambda k: k.layer_norm_bwd(dy, xhat, inv_std, gain)),
        ("gelu_fwd", "256x128", lambda k: k.gelu_fwd(flat)),
        ("gelu_bwd", "256x128", lambda k: k.gelu_bwd(flat, dflat)),
        ("cross_entropy_fwd", "256x600", lambda k: k.cross_entropy_fwd(logits, labels, mask)),
        ("cross_entropy_bwd", "256x600", lambda k: k.cross_entropy_bwd(probs, labels, mask, 1.0)),
        (
            "adamw_update",
            "1M params",
            lambda k: k.adamw_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.01, 0.5, 0.5),
        ),
        ("lcs_length", "200x200", lambda k: k.lcs_length(a_ids, b_ids)),
    ]


TRAIN_SNIPPET = """
import time
from radkg.corpus import SynthConfig, build_vocab, encode_sample, gen_synthetic
from radkg.model import LmConfig, init_lm
from radkg.optim import OptimHyper
from radkg.train import TrainConfig, train

samples = gen_synthetic(SynthConfig(n_samples=16, seed=0))
vocab = build_vocab(samples)
encoded = [encode_sample(s, vocab) for s in samples]
lm = init_lm(LmConfig(vocab_size=vocab.size, d_model=64, n_layers=2, n_heads=4,
                      d_ff=256, max_seq_len=256, seed=0))
cfg = TrainConfig(regime="llm_kg", epochs=3, batch_size=4, grad_accum_steps=1,
                  optim=OptimHyper(lr_peak=1e-3, warmup_steps=0))
t0 = time.perf_counter()
report = train(cfg, lm, None, encoded)
wall = time.perf_counter() - t0
print(f"{report.backend} backend: {report.steps} steps in {wall:.2f}s "
      f"({report.steps / wall:.1f} steps/s)")
"""


def bench_train() -> None:
    print("\nend-to-end training (3 epochs, d_model=64, 16 samples):")
    for backend in ("c", "py"):
        if backend == "c" and _ckernels is None:
            print("  c backend not built; skipping")
            continue
        env = dict(os.environ, RADKG_KERNELS=backend)
        out = subprocess.run(
            [sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True
        )
        line = out.stdout.strip() or out.stderr.strip().splitlines()[-1]
        print(f"  {line}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20, help="best-of-N timing")
    parser.add_argument("--train", action="store_true", help="also time a short training run")
    args = parser.parse_args(argv)

    if _ckernels is None:
        print("compiled backend not built; showing numpy fallback only\n")
    header = f"{'kernel':<20} {'shape':<10} {'py (ms)':>9} {'c (ms)':>9} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, shape, call in cases():
        py_t = best_of(lambda: call(_pykernels), args.repeats) * 1e3
        if _ckernels is None:
            print(f"{name:<20} {shape:<10} {py_t:>9.3f} {'-':>9} {'-':>8}")
            continue
        c_t = best_of(lambda: call(_ckernels), args.repeats) * 1e3
        print(f"{name:<20} {shape:<10} {py_t:>9.3f} {c_t:>9.3f} {py_t / c_t:>7.1f}x")

    if args.train:
        bench_train()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
