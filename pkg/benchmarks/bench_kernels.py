"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per (kernel, case, backend) with the best wall time over
``--repeat`` runs and the speed-up of the compiled kernel. Also checks that
both backends return the same atoms.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from mvmdepart import _pykernels

try:
    from mvmdepart import _ckernels
except ImportError:
    _ckernels = None


def lattice_cases():
    # (label, d, v1, v2, p, q, delta, phase)
    for delta in (0.01, 0.002, 0.0005):
        yield f"lattice d=6.7 delta={delta}", (6.7, 100.0, 40.0, np.exp(-0.1 * delta), np.exp(-2.0 * delta), delta, 2)


def compose_cases(rng):
    for n_path, n_link in ((100, 50), (100, 400), (1000, 400)):
        t = np.sort(rng.uniform(0, 1, n_path))
        p = rng.dirichlet(np.ones(n_path))
        w = rng.dirichlet(np.ones(2), n_path)
        lt = np.concatenate([np.sort(rng.uniform(0.05, 0.2, n_link // 2))] * 2)
        lp = np.concatenate([rng.dirichlet(np.ones(n_link // 2)) for _ in range(2)])
        offsets = np.array([0, n_link // 2, n_link], dtype=np.int64)
        yield f"compose_rebin {n_path}x{n_link}", (t, p, w, lt, lp, offsets, 100, False, 0.005)


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
    rng = np.random.default_rng(0)
    print("kernel,case,python_s,cython_s,speedup,max_abs_diff")
    for name, cases in (("lattice_two_state", lattice_cases()), ("compose_rebin", compose_cases(rng))):
        for label, case in cases:
            py_fn = getattr(_pykernels, name)
            tp = best(py_fn, case, args.repeat)
            if _ckernels is None:
                print(f"{name},{label},{tp:.6f},,,")
                continue
            c_fn = getattr(_ckernels, name)
            tc = best(c_fn, case, args.repeat)
            a, b = py_fn(*case), c_fn(*case)
            if name == "lattice_two_state":
                a = _pykernels.merge_atoms(*a)
                b = _pykernels.merge_atoms(np.asarray(b[0]), np.asarray(b[1]))
            diff = max(np.abs(np.asarray(a[0]) - np.asarray(b[0])).max(), np.abs(np.asarray(a[1]) - np.asarray(b[1])).max())
            print(f"{name},{label},{tp:.6f},{tc:.6f},{tp / tc:.1f},{diff:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
