"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --repeat 20
"""
import argparse
import timeit

import numpy as np

from skelgen import _pykernels

try:
    from skelgen import _ckernels
except ImportError:
    _ckernels = None

# (name, x shape [B, C, D, H, W], kernel, stride, pad): layer shapes from the toy and reference networks
CASES = [
    ("toy inplace", (16, 32, 1, 10, 64), (1, 3, 3), (1, 1, 1), (0, 1, 1)),
    ("toy down", (16, 16, 1, 10, 64), (1, 10, 4), (1, 1, 2), (0, 0, 1)),
    ("ref inplace", (16, 64, 1, 20, 64), (1, 3, 3), (1, 1, 1), (0, 1, 1)),
    ("ref wide", (16, 256, 1, 1, 4), (1, 1, 3), (1, 1, 1), (0, 0, 1)),
]


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def run(repeat, dtype):
    rng = np.random.default_rng(0)
    rows = []
    for name, shape, k, s, p in CASES:
        x = rng.standard_normal(shape).astype(dtype)
        cols = _pykernels.unfold3d(x, k, s, p)
        g = rng.standard_normal(cols.shape).astype(dtype)
        for op, args in (("unfold", (x, k, s, p)), ("fold", (g, x.shape, k, s, p))):
            fn_py = getattr(_pykernels, op + "3d")
            t_py = bench(lambda: fn_py(*args), repeat)
            if _ckernels is not None:
                fn_c = getattr(_ckernels, op + "3d")
                assert np.allclose(fn_c(*args), fn_py(*args), rtol=1e-6, atol=1e-6)
                t_c = bench(lambda: fn_c(*args), repeat)
            else:
                t_c = float("nan")
            rows.append((f"{op} {name}", t_py, t_c))
    v = rng.standard_normal(1 << 20).astype(dtype)
    t_py = bench(lambda: _pykernels.leaky_relu_forward(v, 0.2, 2 ** 0.5), repeat)
    t_c = bench(lambda: _ckernels.leaky_relu_forward(v, 0.2, 2 ** 0.5), repeat) if _ckernels else float("nan")
    rows.append(("lrelu 1M", t_py, t_c))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy column is meaningful")
    print(f"{'kernel':24s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, t_py, t_c in run(args.repeat, np.dtype(args.dtype)):
        print(f"{name:24s} {t_py:10.3f} {t_c:10.3f} {t_py / t_c:8.2f}x")


if __name__ == "__main__":
    main()
