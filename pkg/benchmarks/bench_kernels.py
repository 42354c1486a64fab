"""Time the compiled kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``.  Each case is timed with
``timeit`` (best of ``--repeat``) and the outputs of the two backends are
compared so a fast but wrong kernel cannot slip through.
"""

import argparse
import timeit

import numpy as np

from bohmcavity import kernels


def rk4_case(n_paths):
    rng = np.random.default_rng(0)
    t = np.linspace(0, 10, 6)
    y = np.linspace(-20, 20, 128)
    x = np.linspace(-20, 20, 128)
    X, Y = np.meshgrid(x, y)
    vx = np.stack([-Y * (1 + 0.05 * s) for s in t])
    vy = np.stack([X * (1 - 0.05 * s) for s in t])
    starts = np.column_stack([rng.uniform(-10, 10, n_paths), rng.uniform(-10, 10, n_paths)])
    args = (vx, vy, np.ones(X.shape, bool), t, x[0], y[0], x[1] - x[0], y[1] - y[0],
            starts, 0.0, 0.01, 1000, 1.0)
    return "rk4_trace", args, lambda r: (r[0], r[1])


def z_moments_case(n_cols):
    rng = np.random.default_rng(1)
    K = 1.0 + 0.01 * rng.normal(size=n_cols) - 1e-3j * rng.uniform(size=n_cols)
    nz = 64 * 46 + 1
    h = 46 * np.pi / (nz - 1)
    w = np.full(nz, h)
    w[0] = w[-1] = h / 2
    return "z_moments", (K, 0.0, h, w), lambda r: r


def psf_case(n_out):
    x = np.linspace(-40, 40, 4001)
    psi = np.exp(-x**2 / 20) * np.exp(0.3j * x)
    u = np.linspace(-30, 30, n_out)
    return "psf_convolve", (psi, x, u, x[1] - x[0], 0.8), lambda r: r


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    opts = ap.parse_args(argv)
    py = kernels.get_backend("python")
    if not kernels.compiled_available():
        print("compiled kernels not built; nothing to compare")
        return 1
    cy = kernels.get_backend("cython")
    cases = [rk4_case(200), z_moments_case(256 * 256 // 16), psf_case(2001)]
    print(f"{'kernel':<14}{'python [s]':>12}{'cython [s]':>12}{'speed-up':>10}{'max diff':>11}")
    for name, args, pick in cases:
        times = {}
        outs = {}
        for label, mod in (("python", py), ("cython", cy)):
            fn = getattr(mod, name)
            outs[label] = pick(fn(*args))
            times[label] = min(timeit.repeat(lambda: fn(*args), number=1, repeat=opts.repeat))
        a, b = np.atleast_1d(outs["python"]), np.atleast_1d(outs["cython"])
        diff = np.nanmax(np.abs(np.asarray(a) - np.asarray(b)))
        print(f"{name:<14}{times['python']:>12.4f}{times['cython']:>12.4f}"
              f"{times['python'] / times['cython']:>9.1f}x{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
