"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the environment switch that picks
the runtime backend does not matter here. Each kernel is checked for
agreement before it is timed.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from vicreg_audio import _kernels_py as py_backend

try:
    from vicreg_audio import _kernels as c_backend
except ImportError:  # extension not built
    c_backend = None


def _time(fn, repeat):
    fn()  # warm caches and lazy tables
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def cases(rng):
    x = rng.standard_normal((16, 16, 101, 25)).astype(np.float32)
    cols = py_backend.im2col(x, 2)
    spec = rng.standard_normal((401, 98)) + 1j * rng.standard_normal((401, 98))
    positions = np.arange(106) * 98 / 106
    wave = rng.standard_normal(32000)
    return {
        "im2col (16x16x101x25, stride 2)": lambda b: b.im2col(x, 2),
        "col2im (same shape)": lambda b: b.col2im(cols, 101, 25, 2),
        "phase_vocoder (401x98 -> 106 frames)": lambda b: b.phase_vocoder(spec, positions, 320, 800),
        "sinc_resample (1 s, ratio 0.7937)": lambda b: b.sinc_resample(wave, 0.7937, 25398),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args(argv)
    if c_backend is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, call in cases(rng).items():
        diff = float(np.max(np.abs(np.asarray(call(py_backend)) - np.asarray(call(c_backend)))))
        tp = _time(lambda: call(py_backend), args.repeat)
        tc = _time(lambda: call(c_backend), args.repeat)
        print(f"{name:40s} {tp * 1e3:10.2f} {tc * 1e3:10.2f} {tp / tc:7.1f}x {diff:10.2e}")


if __name__ == "__main__":
    main()
