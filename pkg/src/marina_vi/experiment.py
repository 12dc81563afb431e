"""Experiment configuration, orchestration, and CSV trace emission.

A JSON config describes one problem family at up to three cocoercivity
levels (scenarios, named low/mid/high in ascending order of target_ell), a
list of methods (compressor choices with optional step-size overrides), and
a list of master seeds.  run_suite executes every (scenario, method, seed)
cell, streams one trace CSV per scenario, and writes a summary table of
seed-averaged bits-to-threshold plus a manifest.

All outputs are deterministic functions of the config: fixed row order,
fixed float formatting (17 significant digits), LF line endings, no
timestamps.  Two runs of the same config produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compressors import CompressorSpec
from .problems import generate_bilinear
from .solver import (DivergenceError, MarinaSolver, SolverConfig, Trace,
                     derive_hyperparams)

TRACE_HEADER = "method,seed,epoch,inner_iter,residual_sq_rel,cum_uplink_bits_per_device"
SUMMARY_HEADER = "scenario,method,diverged,bits_to_1e-2,bits_to_1e-4,bits_to_1e-6"
THRESHOLDS = (1e-2, 1e-4, 1e-6)
SCENARIO_NAMES = ("low", "mid", "high")
LOG_STRIDE_CAP = 10_000  # keep at most ~this many logged rows per epoch


class ConfigError(ValueError):
    """Invalid experiment configuration; message names field and constraint."""


@dataclass(frozen=True)
class ProblemSettings:
    n: int
    d_half: int
    lam: float
    problem_seed: int


@dataclass(frozen=True)
class ScenarioSettings:
    name: str
    target_ell: float
    epochs: int


@dataclass(frozen=True)
class MethodSettings:
    name: str
    compressor: CompressorSpec
    gamma: float | None
    inner_iters: int | None


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSettings
    scenarios: tuple[ScenarioSettings, ...]
    methods: tuple[MethodSettings, ...]
    seeds: tuple[int, ...]
    output_dir: str | None

    def canonical_sha256(self) -> str:
        """Hash of the canonicalized content (formatting-independent)."""
        doc = {
            "problem": {"n": self.problem.n, "d_half": self.problem.d_half,
                        "lambda": self.problem.lam,
                        "problem_seed": self.problem.problem_seed},
            "scenarios": [{"name": s.name, "target_ell": s.target_ell,
                           "epochs": s.epochs} for s in self.scenarios],
            "methods": [{"name": m.name, "kind": m.compressor.kind,
                         "k": m.compressor.k, "gamma": m.gamma,
                         "inner_iters": m.inner_iters} for m in self.methods],
            "seeds": list(self.seeds),
        }
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _require(cond: bool, field: str, constraint: str):
    if not cond:
        raise ConfigError(f"config field {field!r}: {constraint}")


def _take(mapping: dict, field: str, allowed: set[str]):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key {sorted(unknown)[0]!r} in {field!r} "
            f"(allowed: {sorted(allowed)})")


def _int_field(mapping: dict, parent: str, key: str, minimum: int) -> int:
    path = f"{parent}.{key}"
    _require(key in mapping, path, "missing required field")
    v = mapping[key]
    _require(isinstance(v, int) and not isinstance(v, bool), path,
             "must be an integer")
    _require(v >= minimum, path, f"must be >= {minimum}")
    return v


def load_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a JSON config document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict), "<root>", "must be a JSON object")
    _take(doc, "<root>", {"problem", "methods", "epochs", "seeds", "output_dir"})

    _require("problem" in doc, "problem", "missing required field")
    prob = doc["problem"]
    _require(isinstance(prob, dict), "problem", "must be an object")
    _take(prob, "problem", {"n", "d_half", "lambda", "target_ell", "problem_seed"})
    n = _int_field(prob, "problem", "n", 1)
    d_half = _int_field(prob, "problem", "d_half", 1)
    problem_seed = _int_field(prob, "problem", "problem_seed", 0)
    _require("lambda" in prob, "problem.lambda", "missing required field")
    lam = prob["lambda"]
    _require(isinstance(lam, (int, float)) and not isinstance(lam, bool)
             and lam > 0, "problem.lambda", "must be a positive number")
    lam = float(lam)
    _require("target_ell" in prob, "problem.target_ell", "missing required field")
    ells = prob["target_ell"]
    if isinstance(ells, (int, float)) and not isinstance(ells, bool):
        ells = [ells]
    _require(isinstance(ells, list) and len(ells) >= 1, "problem.target_ell",
             "must be a number or a non-empty list of numbers")
    _require(len(ells) <= len(SCENARIO_NAMES), "problem.target_ell",
             f"at most {len(SCENARIO_NAMES)} levels supported")
    for v in ells:
        _require(isinstance(v, (int, float)) and not isinstance(v, bool)
                 and v > lam, "problem.target_ell",
                 "each level must be a number greater than lambda")
    ells = sorted(float(v) for v in ells)
    _require(len(set(ells)) == len(ells), "problem.target_ell",
             "levels must be distinct")
    scenario_names = SCENARIO_NAMES[:len(ells)]

    epochs_doc = doc.get("epochs", 20)
    epochs_by_name: dict[str, int] = {}
    if isinstance(epochs_doc, int) and not isinstance(epochs_doc, bool):
        _require(epochs_doc >= 1, "epochs", "must be >= 1")
        epochs_by_name = {name: epochs_doc for name in scenario_names}
    elif isinstance(epochs_doc, dict):
        _take(epochs_doc, "epochs", set(scenario_names))
        for name in scenario_names:
            epochs_by_name[name] = _int_field(epochs_doc, "epochs", name, 1)
    else:
        raise ConfigError("config field 'epochs': must be an integer or an "
                          "object mapping scenario names to integers")

    _require("methods" in doc, "methods", "missing required field")
    methods_doc = doc["methods"]
    _require(isinstance(methods_doc, list) and len(methods_doc) >= 1,
             "methods", "must be a non-empty list")
    d = 2 * d_half
    methods: list[MethodSettings] = []
    for idx, mdoc in enumerate(methods_doc):
        where = f"methods[{idx}]"
        _require(isinstance(mdoc, dict), where, "must be an object")
        _take(mdoc, where, {"name", "compressor", "gamma", "inner_iters"})
        _require("name" in mdoc and isinstance(mdoc["name"], str)
                 and mdoc["name"], f"{where}.name", "must be a non-empty string")
        name = mdoc["name"]
        _require("," not in name and "\n" not in name, f"{where}.name",
                 "must not contain commas or newlines")
        _require("compressor" in mdoc, f"{where}.compressor",
                 "missing required field")
        cdoc = mdoc["compressor"]
        _require(isinstance(cdoc, dict), f"{where}.compressor", "must be an object")
        _take(cdoc, f"{where}.compressor", {"kind", "k"})
        try:
            spec = CompressorSpec(kind=cdoc.get("kind"), d=d, k=cdoc.get("k"))
        except ValueError as exc:
            raise ConfigError(f"config field {where + '.compressor'!r}: {exc}") from exc
        gamma = mdoc.get("gamma")
        if gamma is not None:
            _require(isinstance(gamma, (int, float)) and not isinstance(gamma, bool)
                     and gamma > 0, f"{where}.gamma", "must be a positive number")
            gamma = float(gamma)
        inner = mdoc.get("inner_iters")
        if inner is not None:
            inner = _int_field(mdoc, where, "inner_iters", 1)
        methods.append(MethodSettings(name, spec, gamma, inner))
    names = [m.name for m in methods]
    _require(len(set(names)) == len(names), "methods", "names must be unique")

    _require("seeds" in doc, "seeds", "missing required field")
    seeds_doc = doc["seeds"]
    _require(isinstance(seeds_doc, list) and len(seeds_doc) >= 1, "seeds",
             "must be a non-empty list of integers")
    for v in seeds_doc:
        _require(isinstance(v, int) and not isinstance(v, bool) and v >= 0,
                 "seeds", "entries must be non-negative integers")
    _require(len(set(seeds_doc)) == len(seeds_doc), "seeds",
             "entries must be distinct")

    output_dir = doc.get("output_dir")
    if output_dir is not None:
        _require(isinstance(output_dir, str) and output_dir, "output_dir",
                 "must be a non-empty string")

    scenarios = tuple(
        ScenarioSettings(name=name, target_ell=ell, epochs=epochs_by_name[name])
        for name, ell in zip(scenario_names, ells))
    return ExperimentConfig(
        problem=ProblemSettings(n=n, d_half=d_half, lam=lam,
                                problem_seed=problem_seed),
        scenarios=scenarios, methods=tuple(methods),
        seeds=tuple(seeds_doc), output_dir=output_dir)


def load_config_file(path: str | Path) -> ExperimentConfig:
    return load_config(Path(path).read_text(encoding="utf-8"))


def _format_float(x: float) -> str:
    return "%.17g" % x


def format_trace_row(method: str, seed: int, epoch: int, inner_iter: int,
                     residual_sq_rel: float, bits: int) -> str:
    return (f"{method},{seed},{epoch},{inner_iter},"
            f"{_format_float(residual_sq_rel)},{bits}")


def emit_trace_csv(rows, path: str | Path) -> None:
    """Write trace rows (method, seed, epoch, inner_iter, resid, bits).

    UTF-8, LF line endings, floats at 17 significant digits; an empty
    iterable yields a header-only file.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        for method, seed, epoch, inner_iter, resid, bits in rows:
            fh.write(format_trace_row(method, seed, epoch, inner_iter,
                                      resid, bits) + "\n")


def parse_trace_csv(path: str | Path):
    """Read back a trace CSV as typed row tuples (inverse of emit)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n")
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header in {path}: {header!r}")
        for line in fh:
            method, seed, epoch, inner, resid, bits = line.rstrip("\n").split(",")
            rows.append((method, int(seed), int(epoch), int(inner),
                         float(resid), int(bits)))
    return rows


def log_stride_for(inner_iters: int) -> int:
    """Every iteration for K <= 10^4, else ceil(K / 10^4)."""
    if inner_iters <= LOG_STRIDE_CAP:
        return 1
    return math.ceil(inner_iters / LOG_STRIDE_CAP)


def _bits_to_thresholds(trace: Trace) -> list[int | None]:
    out: list[int | None] = []
    for thr in THRESHOLDS:
        hits = np.nonzero(trace.residual_sq_rel <= thr)[0]
        out.append(int(trace.cum_uplink_bits[hits[0]]) if hits.size else None)
    return out


@dataclass(frozen=True)
class CellResult:
    scenario: str
    method: str
    seed: int
    diverged: bool
    bits_to: tuple[int | None, ...]  # aligned with THRESHOLDS


@dataclass(frozen=True)
class SuiteResult:
    scenario_files: dict[str, Path]
    summary_file: Path
    manifest_file: Path
    cells: tuple[CellResult, ...]
    summary_rows: tuple[str, ...]

    @property
    def any_diverged(self) -> bool:
        return any(c.diverged for c in self.cells)


def run_suite(config: ExperimentConfig, out_dir: str | Path,
              scenario: str = "all", seeds_limit: int | None = None,
              verbose: bool = False) -> SuiteResult:
    """Execute all requested (scenario, method, seed) cells.

    Writes <scenario>.csv per scenario, summary.csv, and manifest.json into
    out_dir.  A diverged cell contributes its partial trace, is flagged in
    the summary, and does not stop the suite.
    """
    if scenario != "all":
        wanted = [s for s in config.scenarios if s.name == scenario]
        if not wanted:
            raise ConfigError(
                f"scenario {scenario!r} is not defined by this config "
                f"(available: {[s.name for s in config.scenarios]})")
    else:
        wanted = list(config.scenarios)
    seeds = list(config.seeds)
    if seeds_limit is not None:
        if not 1 <= seeds_limit <= len(seeds):
            raise ConfigError(
                f"seed count override must be in [1, {len(seeds)}], "
                f"got {seeds_limit}")
        seeds = seeds[:seeds_limit]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prob = config.problem
    cells: list[CellResult] = []
    scenario_files: dict[str, Path] = {}

    for scen in wanted:
        problem = generate_bilinear(prob.n, prob.d_half, prob.lam,
                                    scen.target_ell, prob.problem_seed)
        constants = problem.exact_constants()
        path = out_dir / f"{scen.name}.csv"
        scenario_files[scen.name] = path
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(TRACE_HEADER + "\n")
            for method in config.methods:
                if method.gamma is not None or method.inner_iters is not None:
                    auto_gamma, auto_k = derive_hyperparams(
                        constants, method.compressor, prob.n)
                    gamma = method.gamma if method.gamma is not None else auto_gamma
                    inner = (method.inner_iters if method.inner_iters is not None
                             else auto_k)
                    auto = False
                else:
                    gamma, inner = derive_hyperparams(
                        constants, method.compressor, prob.n)
                    auto = True
                stride = log_stride_for(inner)
                for seed in seeds:
                    t0 = time.perf_counter()
                    solver = MarinaSolver(problem, SolverConfig(
                        gamma=gamma, inner_iters=inner, epochs=scen.epochs,
                        compressor=method.compressor, master_seed=seed,
                        auto_hyperparams=auto))
                    diverged = False
                    try:
                        trace = solver.run(log_stride=stride).trace
                    except DivergenceError as exc:
                        diverged = True
                        trace = exc.trace
                    for row in zip(trace.epoch, trace.inner_iter,
                                   trace.residual_sq_rel, trace.cum_uplink_bits):
                        fh.write(format_trace_row(
                            method.name, seed, int(row[0]), int(row[1]),
                            float(row[2]), int(row[3])) + "\n")
                    bits_to = tuple(_bits_to_thresholds(trace))
                    cells.append(CellResult(scen.name, method.name, seed,
                                            diverged, bits_to))
                    if verbose:
                        status = "DIVERGED" if diverged else "ok"
                        print(f"[{scen.name}] {method.name} seed={seed}: "
                              f"{status} ({time.perf_counter() - t0:.1f}s)",
                              file=sys.stderr, flush=True)

    summary_rows = _summarize(cells, wanted, config.methods)
    summary_file = out_dir / "summary.csv"
    with open(summary_file, "w", encoding="utf-8", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for row in summary_rows:
            fh.write(row + "\n")

    manifest_file = out_dir / "manifest.json"
    from . import __version__
    from .kernels import USE_NUMBA
    manifest = {
        "backend": "numba" if USE_NUMBA else "python",
        "config_sha256": config.canonical_sha256(),
        "methods": [m.name for m in config.methods],
        "scenarios": [s.name for s in wanted],
        "seeds": seeds,
        "version": __version__,
    }
    with open(manifest_file, "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return SuiteResult(scenario_files=scenario_files, summary_file=summary_file,
                       manifest_file=manifest_file, cells=tuple(cells),
                       summary_rows=tuple(summary_rows))


def _summarize(cells: list[CellResult], scenarios, methods) -> tuple[str, ...]:
    rows = []
    for scen in scenarios:
        for method in methods:
            group = [c for c in cells
                     if c.scenario == scen.name and c.method == method.name]
            diverged = sum(1 for c in group if c.diverged)
            fields = [scen.name, method.name, str(diverged)]
            for t_idx in range(len(THRESHOLDS)):
                vals = [c.bits_to[t_idx] for c in group]
                if group and all(v is not None for v in vals):
                    fields.append(_format_float(
                        sum(vals) / len(vals)))
                else:
                    fields.append("")
            rows.append(",".join(fields))
    return tuple(rows)
