"""Command-line entry point.

Runs an experiment suite described by a JSON config, or a built-in
self-check.  Exit codes: 0 success, 1 usage or config errors, 2 at least
one solver run diverged, 3 self-check failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; this tool reserves 2 for
    # divergence, so remap usage errors to 1.
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="marina-vi",
                description="Distributed variational-inequality solver with "
                            "compressed communication: experiment runner.")
    p.add_argument("--config", metavar="PATH",
                   help="JSON experiment config (required unless --check)")
    p.add_argument("--out-dir", metavar="PATH", default=None,
                   help="output directory (default: config output_dir, "
                        "else ./out)")
    p.add_argument("--scenario", default="all",
                   help="restrict to one scenario by name (default: all)")
    p.add_argument("--seeds", type=int, default=None, metavar="N",
                   help="use only the first N seeds from the config")
    p.add_argument("--check", action="store_true",
                   help="run built-in self-checks and exit")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-run progress on stderr")
    return p


def _check_line(name: str, ok: bool) -> bool:
    print(f"check {name}: {'ok' if ok else 'FAIL'}")
    return ok


def run_self_check() -> int:
    """Fast invariant checks against built-in known answers; 0 ok, 3 fail."""
    from . import compressors, kernels, ledger, problems, rng, solver

    ok = True

    # Counter-mode generator against the published stream for seed 0.
    stream = rng.CounterStream(0)
    got = [stream.next_raw() for _ in range(3)]
    ok &= _check_line("rng-known-answer", got == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F])

    # Sparsifier: unbiased on average, exact support size, exact scale.
    d, k = 20, 5
    spec = compressors.CompressorSpec(kind="rand_k", d=d, k=k)
    u = np.arange(1.0, d + 1.0)
    acc = np.zeros(d)
    draws = 4000
    for j in range(draws):
        msg = compressors.compress(spec, u, rng.CounterStream(rng.derive_seed(7, j)))
        nz = np.nonzero(msg.payload)[0]
        good = (len(nz) == k
                and np.allclose(msg.payload[nz], (d / k) * u[nz]))
        if not good:
            ok = _check_line("rand-k-support", False) and ok
            break
        acc += msg.payload
    else:
        mean_err = np.max(np.abs(acc / draws - u))
        sigma = np.sqrt(spec.alpha * float(u @ u) / draws)
        ok &= _check_line("rand-k-unbiased", mean_err <= 6.0 * sigma)

    # Quantizer: per-coordinate error bounded by the scale.
    spec8 = compressors.CompressorSpec(kind="int8_quant", d=d)
    worst = 0.0
    for j in range(500):
        msg = compressors.compress(spec8, u, rng.CounterStream(rng.derive_seed(11, j)))
        s = np.max(np.abs(u)) / 127.0
        worst = max(worst, float(np.max(np.abs(msg.payload - u))) / s)
    ok &= _check_line("int8-error-bound", worst <= 1.0 + 1e-12)

    # Compiled kernel and reference implementation agree bitwise per message.
    parity = True
    for kind, kk in (("identity", 0), ("rand_k", 3), ("int8_quant", 0)):
        sp = compressors.CompressorSpec(kind=kind, d=8, k=kk if kk else None)
        v = np.linspace(-2.0, 3.0, 8)
        seed = rng.derive_seed(5, 1, 2, 3)
        ref = compressors.compress(sp, v, rng.CounterStream(seed)).payload
        got_k = kernels.compress_one(kernels.KIND_CODES[kind], kk, v, seed)
        parity &= bool(np.array_equal(ref, got_k))
    ok &= _check_line("kernel-reference-parity", parity)

    # End-to-end: contraction per epoch plus exact bit accounting.
    problem = problems.generate_bilinear(n=4, d_half=6, lam=1.0,
                                         target_ell=20.0, seed=3)
    consts = problem.exact_constants()
    csp = compressors.CompressorSpec(kind="rand_k", d=problem.d, k=3)
    gamma, inner = solver.derive_hyperparams(consts, csp, problem.n)
    cfg = solver.SolverConfig(gamma=gamma, inner_iters=inner, epochs=3,
                              compressor=csp, master_seed=42,
                              auto_hyperparams=True)
    runner = solver.MarinaSolver(problem, cfg, record_events=True)
    result = runner.run()
    trace = result.trace
    contracts = True
    anchors = [float(trace.residual_sq_rel[i]) for i in range(len(trace))
               if trace.inner_iter[i] in (0, cfg.inner_iters)]
    for a, b in zip(anchors, anchors[1:]):
        contracts &= (b <= 0.5 * a + 1e-12)
    ok &= _check_line("epoch-contraction", contracts)

    expected = cfg.epochs * problem.n * (
        ledger.FULL_VALUE_BITS * problem.d
        + (cfg.inner_iters - 1) * csp.payload_bits)
    ok &= _check_line("bit-conservation",
                      result.ledger.total_uplink_bits() == expected)
    replay_up, _ = result.ledger.replay_from_events()
    ok &= _check_line("ledger-replay",
                      replay_up == result.ledger.per_device_uplink_bits)

    return 0 if ok else 3


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.check:
        return run_self_check()
    if not args.config:
        print("error: --config is required unless --check is given",
              file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1

    from .experiment import ConfigError, load_config, run_suite
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        config = load_config(text)
        out_dir = args.out_dir or config.output_dir or "./out"
        result = run_suite(config, out_dir, scenario=args.scenario,
                           seeds_limit=args.seeds, verbose=not args.quiet)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if not args.quiet:
        written = sorted(result.scenario_files.values())
        written += [result.summary_file, result.manifest_file]
        for path in written:
            print(f"wrote {path}")

    if result.any_diverged:
        bad = [(c.scenario, c.method, c.seed) for c in result.cells if c.diverged]
        print(f"warning: {len(bad)} run(s) diverged: {bad}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
