"""Compare the compiled and pure-Python kernel backends.

Times the tridiagonal solve, the projected SOR sweeps and the LCP residual
on the 1-D level matrix of the Black-Scholes put for several grid sizes,
then one end-to-end solve per backend (each in a fresh interpreter, since
the backend is chosen at import).

    python3 benchmarks/bench_kernels.py [--sizes 200,1000,5000] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np
import scipy.sparse as sp

from amerput import kernels

END_TO_END = """
import json, math, time
from amerput import kernels
from amerput.harness import Problem
from amerput.model import MarketModel, put_payoff
from amerput.solver import SolveConfig, solve
p = Problem(MarketModel.constant(1, 0.05, 0.2, 1.0), put_payoff(100, math.log(100)), (math.log(100),))
c = SolveConfig(tau={tau}, h={h}, R=3.0, R1=2.5, method="{method}")
lm = p.log_model()
t = time.perf_counter()
sol = solve(lm, p.decomposition(lm), p.cutoff(c.R1), c)
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t, "value": sol.value_at([0.0])}}))
"""


def level_matrix(n, tau=1e-3, h=5e-3, sigma=0.2, r=0.05):
    a = 0.25 * sigma**2
    beta = r - 0.5 * sigma**2
    up = 2 * a / h**2 + max(beta, 0) / h
    down = 2 * a / h**2 + max(-beta, 0) / h
    diag = 1 / tau + up + down + r
    B = sp.diags([-down * np.ones(n - 1), diag * np.ones(n), -up * np.ones(n - 1)], [-1, 0, 1], format="csr")
    return B, (-down, diag, -up)


def bench(sizes, repeat):
    impls = kernels.backends()
    rng = np.random.default_rng(0)
    rows = []
    for n in sizes:
        B, (lo, di, up) = level_matrix(n)
        lower = np.full(n, lo)
        diag = np.full(n, di)
        upper = np.full(n, up)
        rhs = rng.uniform(0, 1e5, size=n)
        g = np.maximum(rng.uniform(-1, 1, size=n), 0.0)
        w0 = rhs * 1e-3
        for name, impl in impls.items():
            t_thomas = min(timeit.repeat(lambda: kernels.thomas(lower, diag, upper, rhs, impl=impl), number=10, repeat=repeat)) / 10
            t_res = min(timeit.repeat(lambda: kernels.lcp_residual(B, rhs, g, w0, impl=impl), number=3, repeat=repeat)) / 3
            t_psor = min(timeit.repeat(lambda: kernels.psor(B, rhs, g, w0, 1.2, 1e-10, 50, impl=impl), number=1, repeat=repeat))
            rows.append({"n": n, "backend": name, "thomas_s": t_thomas, "residual_s": t_res, "psor50_s": t_psor})
    return rows


def end_to_end(tau, h, method):
    out = []
    for pure in ("0", "1"):
        env = dict(os.environ, AMERPUT_PURE_PYTHON=pure)
        code = END_TO_END.format(tau=tau, h=h, method=method)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out.append(json.loads(res.stdout))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="200,1000,5000")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'n':>6} {'backend':>8} {'thomas [s]':>12} {'residual [s]':>13} {'psor x50 [s]':>13}")
    rows = bench(sizes, args.repeat)
    for r in rows:
        print(f"{r['n']:>6} {r['backend']:>8} {r['thomas_s']:>12.3e} {r['residual_s']:>13.3e} {r['psor50_s']:>13.3e}")
    if not args.skip_end_to_end:
        print("\nend-to-end American put, tau=1e-2, h=1e-2:")
        for method in ("policy-iteration", "projected-sor"):
            for r in end_to_end(1e-2, 1e-2, method):
                print(f"  {method:>17} {r['backend']:>8} {r['seconds']:8.3f} s  value {r['value']:.10f}")


if __name__ == "__main__":
    main()
