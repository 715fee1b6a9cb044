"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--pairs 2000] [--segments 10] [--repeat 5] [--json out.json]

Times ``flow_chain`` (with and without Jacobian) and ``rk4_paths`` on random inputs for
each preset, checks that both backends agree, and prints one row per case.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from hormander_mp.flows import compiled_fields, compiled_flow
from hormander_mp.kernels import implementations
from hormander_mp.operator_core import PRESETS, preset


def cases(name: str, pairs: int, segments: int, rng: np.random.Generator):
    spec = preset(name)
    f = compiled_flow(spec)
    x0 = rng.normal(size=(pairs, spec.N))
    W = rng.normal(size=(pairs, segments, spec.m)) / segments
    yield ("flow_chain+jac", lambda k: k.flow_chain(x0, W, f.exps, f.coefs, f.out_index, f.max_degree, True))
    yield ("flow_chain", lambda k: k.flow_chain(x0, W, f.exps, f.coefs, f.out_index, f.max_degree, False))
    exps, coefs, comp, fld = compiled_fields(spec)
    n = max(1, pairs // 20)
    dur = np.full((n, segments), 1.0 / segments)
    ctrl = rng.normal(size=(n, segments, spec.m))
    ctrl /= np.linalg.norm(ctrl, axis=2, keepdims=True)
    deg = int(exps.max(initial=0))
    yield ("rk4_paths", lambda k: k.rk4_paths(x0[:n].copy(), dur, ctrl, 50, exps, coefs, comp, fld, deg))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--segments", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json")
    args = ap.parse_args()
    impl = implementations()
    if impl["cython"] is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(args.seed)
    rows = []
    print(f"{'preset':<12}{'kernel':<16}{'python ms':>11}{'cython ms':>11}{'speedup':>9}{'max diff':>11}")
    for name in PRESETS:
        for label, call in cases(name, args.pairs, args.segments, rng):
            t = {}
            for b in ("python", "cython"):
                t[b] = min(timeit.repeat(lambda: call(impl[b]), number=1, repeat=args.repeat)) * 1e3
            a, c = call(impl["python"]), call(impl["cython"])
            a, c = (a[0], c[0]) if isinstance(a, tuple) else (a, c)
            diff = float(np.max(np.abs(np.asarray(a) - np.asarray(c))))
            rows.append({"preset": name, "kernel": label, "python_ms": t["python"],
                         "cython_ms": t["cython"], "speedup": t["python"] / t["cython"], "max_diff": diff})
            print(f"{name:<12}{label:<16}{t['python']:>11.2f}{t['cython']:>11.2f}"
                  f"{t['python'] / t['cython']:>9.1f}{diff:>11.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
