"""Compare the compiled and pure-numpy backends on identical solver runs.

Runs the same (problem, method, seed) workload twice in subprocesses, once
with MARINA_VI_NUMBA=1 and once with =0, and reports wall time per backend
plus the speedup.  Subprocesses are required because the backend flag is
read once at import.

Usage: python3 benchmarks/bench_backends.py [--epochs N] [--ell L]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import marina_vi as mv
from marina_vi import kernels

params = json.loads(sys.argv[1])
p = mv.generate_bilinear(n=10, d_half=50, lam=1.0,
                         target_ell=params["ell"], seed=7)
c = p.exact_constants()
rows = {}
for kind, k in (("rand_k", 10), ("int8_quant", None), ("identity", None)):
    spec = mv.CompressorSpec(kind=kind, d=p.d, k=k)
    gamma, K = mv.derive_hyperparams(c, spec, p.n)
    cfg = mv.SolverConfig(gamma=gamma, inner_iters=K, epochs=params["epochs"],
                          compressor=spec, master_seed=3,
                          auto_hyperparams=True)
    solver = mv.MarinaSolver(p, cfg)
    solver.run()  # warm-up: triggers JIT compilation on the numba backend
    t0 = time.perf_counter()
    trace = solver.run().trace
    rows[kind] = {"seconds": time.perf_counter() - t0,
                  "rounds": cfg.epochs * cfg.inner_iters,
                  "final": float(trace.residual_sq_rel[-1])}
print(json.dumps({"numba": kernels.USE_NUMBA, "rows": rows}))
"""


def run_backend(numba: bool, params: dict) -> dict:
    env = dict(os.environ, MARINA_VI_NUMBA="1" if numba else "0")
    out = subprocess.run(
        [sys.executable, "-c", WORKER, json.dumps(params)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--ell", type=float, default=100.0)
    args = ap.parse_args()
    params = {"epochs": args.epochs, "ell": args.ell}

    fast = run_backend(True, params)
    slow = run_backend(False, params)
    if not fast["numba"]:
        print("note: numba unavailable, both runs used the numpy backend")

    print(f"{'method':12s} {'rounds':>8s} {'numba [s]':>10s} "
          f"{'numpy [s]':>10s} {'speedup':>8s}  residual match")
    for kind in fast["rows"]:
        a, b = fast["rows"][kind], slow["rows"][kind]
        match = "yes" if a["final"] == b["final"] else "NO"
        print(f"{kind:12s} {a['rounds']:8d} {a['seconds']:10.3f} "
              f"{b['seconds']:10.3f} {b['seconds'] / a['seconds']:7.1f}x  {match}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
