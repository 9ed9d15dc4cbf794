"""Compiled versus pure-Python kernels.

Times the per-cell NB terms, the lag sums and one full log-likelihood plus
gradient evaluation of a gravity problem with each backend, and checks that
both backends return the same numbers.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from eegrav import _core_py, kernels

try:
    from eegrav import _core
except ImportError:
    _core = None

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))


def cells(n, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.negative_binomial(2, 0.05, n).astype(float)
    mu = rng.gamma(2.0, 20.0, n) + 1e-3
    psi = np.exp(rng.uniform(np.log(1e-4), np.log(2.0), n))
    return y, mu, psi


@contextmanager
def backend(impl):
    saved = kernels.nb_terms, kernels.lag_sums
    kernels.nb_terms, kernels.lag_sums = impl.nb_terms, impl.lag_sums
    try:
        yield
    finally:
        kernels.nb_terms, kernels.lag_sums = saved


def best_of(fn, repeat):
    n = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def gravity_problem():
    from models import gravity_panel, gravity_spec, gravity_truth
    from eegrav.estimate import initial_vector
    from eegrav.likelihood import Problem

    spec = gravity_spec()
    pan, w = gravity_panel(spec, gravity_truth(0), seed=0)
    prob = Problem(pan, spec, w.structure, w.cube, decay=2.0)
    return prob, initial_vector(prob)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    impls = {"python": _core_py}
    if _core is not None:
        impls["compiled"] = _core
    else:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")

    rows = []
    for n in (1_000, 100_000, 1_000_000):
        y, mu, psi = cells(n)
        ref = _core_py.nb_terms(y, mu, psi)
        for name, impl in impls.items():
            out = impl.nb_terms(y, mu, psi)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(out, ref))
            rows.append({"case": f"nb_terms n={n}", "backend": name,
                         "seconds": best_of(lambda: impl.nb_terms(y, mu, psi), args.repeat),
                         "max_abs_diff": diff})
    Y = np.random.default_rng(1).poisson(5, (400, 2000)).astype(float)
    u = np.array([0.5, 0.25, 0.125, 0.125])
    ref = _core_py.lag_sums(Y, u, 4)
    for name, impl in impls.items():
        diff = float(np.max(np.abs(impl.lag_sums(Y, u, 4) - ref)))
        rows.append({"case": "lag_sums 400x2000 D=4", "backend": name,
                     "seconds": best_of(lambda: impl.lag_sums(Y, u, 4), args.repeat),
                     "max_abs_diff": diff})
    prob, x = gravity_problem()
    with backend(_core_py):
        f_ref = prob.loglik_and_grad(x)[0]
    for name, impl in impls.items():
        with backend(impl):
            f = prob.loglik_and_grad(x)[0]
            rows.append({"case": "gravity loglik+grad 24x36", "backend": name,
                         "seconds": best_of(lambda: prob.loglik_and_grad(x), args.repeat),
                         "max_abs_diff": abs(f - f_ref)})

    base = {r["case"]: r["seconds"] for r in rows if r["backend"] == "python"}
    print(f"{'case':<28} {'backend':<9} {'time':>12} {'speedup':>8} {'max diff':>10}")
    for r in rows:
        r["speedup"] = base[r["case"]] / r["seconds"]
        print(f"{r['case']:<28} {r['backend']:<9} {r['seconds'] * 1e3:>9.3f} ms "
              f"{r['speedup']:>7.1f}x {r['max_abs_diff']:>10.1e}")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n")
    return rows


if __name__ == "__main__":
    main()
