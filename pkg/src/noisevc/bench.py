"""Benchmark the numba kernels against the pure-numpy fallback.

Run as `python -m noisevc.bench [--quick]`. Times each hot kernel at the
desk-preset training shapes plus one full training step per backend, and
prints a table with the speedups. Numbers are single-core; the first numba
call per kernel includes JIT compilation and is excluded by warmup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from noisevc import backend


def _time(fn, *args, repeats: int = 20) -> float:
    fn(*args)  # warmup / jit
    best = np.inf
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best * 1000.0


def kernel_cases(rng: np.random.Generator, batch: int = 4, frames: int = 128):
    x = rng.normal(size=(batch, frames, 128)).astype(np.float32)
    w = rng.normal(size=(5, 128, 128)).astype(np.float32)
    b = np.zeros(128, dtype=np.float32)
    dy = rng.normal(size=(batch, frames, 128)).astype(np.float32)
    xl = rng.normal(size=(batch, frames, 128)).astype(np.float32)
    wx = (rng.normal(size=(128, 512)) * 0.1).astype(np.float32)
    wh = (rng.normal(size=(128, 512)) * 0.1).astype(np.float32)
    bl = np.zeros(512, dtype=np.float32)
    e = rng.normal(size=(batch * frames, 64)).astype(np.float32)
    codes = rng.normal(size=(256, 64)).astype(np.float32)

    from noisevc.kernels import numpy_ref

    h, gates, c = numpy_ref.lstm_fwd(xl, wx, wh, bl)
    dh = rng.normal(size=h.shape).astype(np.float32)
    return [
        ("conv1d fwd (4x128x128, k5)", "conv1d_fwd", (x, w, b)),
        ("conv1d bwd", "conv1d_bwd", (x, w, dy, True)),
        ("lstm fwd (128 units)", "lstm_fwd", (xl, wx, wh, bl)),
        ("lstm bwd", "lstm_bwd", (xl, wx, wh, gates, c, h, dh)),
        ("nearest code (512x64 vs 256)", "nearest_code", (e, codes)),
    ]


def bench_kernels(repeats: int) -> list[tuple[str, float, float]]:
    from noisevc.kernels import jit, numpy_ref

    rng = np.random.default_rng(0)
    rows = []
    for label, name, args in kernel_cases(rng):
        t_np = _time(getattr(numpy_ref, name), *args, repeats=repeats)
        t_nb = _time(getattr(jit, name), *args, repeats=repeats)
        rows.append((label, t_nb, t_np))
    return rows


def bench_train_step(steps: int = 15) -> dict[str, float]:
    """Full desk-preset training steps per backend, on a throwaway corpus."""
    import tempfile
    from pathlib import Path

    from noisevc.synthcorpus import SyntheticSpec, generate_corpus
    from noisevc.trainer import TrainConfig, fit

    tmp = Path(tempfile.mkdtemp(prefix="nvc-bench-"))
    manifest = generate_corpus(SyntheticSpec(n_speakers=4, seed=0), 6, tmp / "corpus")
    out = {}
    prev = backend.active_backend()
    try:
        for name in ("numba", "numpy"):
            try:
                backend.set_backend(name)
            except Exception:
                continue
            fit(manifest, TrainConfig(steps=2, checkpoint_every=10**6), tmp / f"warm-{name}")
            t0 = time.perf_counter()
            fit(manifest, TrainConfig(steps=steps, checkpoint_every=10**6), tmp / f"run-{name}")
            out[name] = (time.perf_counter() - t0) / steps * 1000.0
    finally:
        backend.set_backend(prev)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="fewer repeats, skip the step bench")
    args = parser.parse_args(argv)
    repeats = 5 if args.quick else 20

    print(f"active backend: {backend.active_backend()}")
    print(f"{'kernel':34s} {'numba':>9s} {'numpy':>9s} {'speedup':>8s}")
    for label, t_nb, t_np in bench_kernels(repeats):
        print(f"{label:34s} {t_nb:7.2f}ms {t_np:7.2f}ms {t_np / t_nb:7.2f}x")
    if not args.quick:
        steps = bench_train_step()
        print(f"\n{'full train step (desk preset)':34s}", end="")
        for name in ("numba", "numpy"):
            if name in steps:
                print(f" {name} {steps[name]:6.0f}ms", end="")
        if "numba" in steps and "numpy" in steps:
            print(f"  ({steps['numpy'] / steps['numba']:.2f}x)", end="")
        print()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
