"""Distributed solver for cocoercive variational inequalities with
compressed communication, plus exact bit accounting and experiment tooling.

Modules:
    problems     synthetic operator families with exact constants
    compressors  unbiased lossy message compressors with wire-size accounting
    solver       the compressed-communication solver with restarts
    ledger       per-device communication cost bookkeeping
    experiment   config-driven experiment suites with deterministic CSV output
    kernels      numeric inner loops (numba-compiled, pure-numpy fallback)
    rng          counter-mode pseudo-random streams with seed derivation
"""

from .compressors import (CompressedMessage, CompressorSpec, compress,
                          exhaustive_randk_moments)
from .ledger import (FULL_VALUE_BITS, CommLedger, gradient_equivalents,
                     gradient_equivalents_exact)
from .problems import (BilinearSaddleProblem, ProblemConstants,
                       QuadraticMinProblem, VIProblem, estimate_cocoercivity,
                       estimate_strong_monotonicity, from_descriptor,
                       generate_bilinear, generate_quadratic, load_json)
from .rng import CounterStream, derive_seed, mix64
from .solver import (DivergenceError, MarinaSolver, RunResult, SolverConfig,
                     SolverState, Trace, derive_hyperparams, init_epoch,
                     initial_state, inner_step)

__version__ = "0.1.0"

__all__ = [
    "BilinearSaddleProblem", "CommLedger", "CompressedMessage",
    "CompressorSpec", "CounterStream", "DivergenceError", "FULL_VALUE_BITS",
    "MarinaSolver", "ProblemConstants", "QuadraticMinProblem", "RunResult",
    "SolverConfig", "SolverState", "Trace", "VIProblem", "__version__",
    "compress", "derive_hyperparams", "derive_seed", "estimate_cocoercivity",
    "estimate_strong_monotonicity", "exhaustive_randk_moments",
    "from_descriptor", "generate_bilinear", "generate_quadratic",
    "gradient_equivalents", "gradient_equivalents_exact", "init_epoch",
    "initial_state", "inner_step", "load_json", "mix64",
]
