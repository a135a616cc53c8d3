"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case checks that both backends agree before timing them. The
``dispatch`` column times ``uadbo.kernels``, which picks a backend per call.
"""
import argparse
import json
import timeit

import numpy as np

from uadbo import _pykernels as py
from uadbo import kernels

try:
    from uadbo import _ckernels as cy
except ImportError:  # pragma: no cover
    cy = None


# (batch, in channels, out channels, padded length): first and last encoder
# layers at the training batch size, a single-sample call, and a large batch
CONV_SHAPES = [(1, 3, 16, 204), (16, 3, 16, 204), (16, 32, 64, 53), (64, 16, 32, 204)]


def cases(rng):
    out = {}
    for n, c, o, lp in CONV_SHAPES:
        xp = rng.standard_normal((n, c, lp))
        w = rng.standard_normal((o, c, 3))
        b = rng.standard_normal(o)
        gout = rng.standard_normal((n, o, (lp - 3) // 2 + 1))
        tag = f"{n}x{c}x{lp}->{o}"
        out[f"conv1d_forward  {tag}"] = lambda m, xp=xp, w=w, b=b: m.conv1d_forward(xp, w, b, 2)
        out[f"conv1d_backward {tag}"] = lambda m, xp=xp, w=w, g=gout: m.conv1d_backward(xp, w, g, 2)
    for n in (64, 512):
        f = rng.random((n, 2))
        out[f"nondominated_ranks {n}x2"] = lambda m, f=f: m.nondominated_ranks(f)
        out[f"crowding_distance {n}x2"] = lambda m, f=f: m.crowding_distance(f)
    return out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12, equal_nan=True)


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    n, _ = timer.autorange()
    return min(timer.repeat(repeat, n)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if cy is None:
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .`")
    rows = []
    print(f"{'kernel':36s} {'python [ms]':>12s} {'cython [ms]':>12s} {'dispatch [ms]':>14s} {'speedup':>8s}")
    for name, call in cases(np.random.default_rng(0)).items():
        if not _same(call(py), call(cy)):
            raise SystemExit(f"backends disagree on {name}")
        tp = best_time(lambda: call(py), args.repeat)
        tc = best_time(lambda: call(cy), args.repeat)
        td = best_time(lambda: call(kernels), args.repeat)
        rows.append({"kernel": name, "python_s": tp, "cython_s": tc, "dispatch_s": td, "speedup": tp / tc})
        print(f"{name:36s} {tp * 1e3:12.3f} {tc * 1e3:12.3f} {td * 1e3:14.3f} {tp / tc:7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
