"""Epoch-restarted solver with compressed difference aggregation.

One epoch starts from the anchor z~: every device uploads its full operator
value, the server forms g^0 = F(z^0) and takes the step z^1 = z^0 - gamma*g^0;
the remaining K-1 rounds upload only compressed differences
C(F_i(z^k) - F_i(z^{k-1})), which the server averages into
g^k = g^{k-1} + mean_i C(.) and applies.  After K total updates the epoch
ends and z~ is replaced by z^K.

Two implementations coexist on purpose: `init_epoch`/`inner_step` are plain
reference operations used by the contract tests, while `MarinaSolver.run`
drives the fused loops in `kernels` (numba or plain twin).  Both follow the
same update formulas and the same per-message random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .compressors import CompressorSpec, compress
from .ledger import FULL_VALUE_BITS, CommLedger
from .problems import ProblemConstants, VIProblem
from .rng import CounterStream, derive_seed

_DIVERGENCE_FACTOR = 1e12  # squared-residual blowup that aborts a run


def derive_hyperparams(constants: ProblemConstants, spec: CompressorSpec,
                       n: int) -> tuple[float, int]:
    """Step size and epoch length from the problem and compressor constants.

    gamma = 1 / (8 * ell * (1 + alpha/n)), K = ceil(30 * ell * (1 + alpha/n) / mu).
    The returned gamma always satisfies the admissibility condition
    gamma <= 1 / (2 * ell * (1 + alpha/n)).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    q = 1.0 + spec.alpha / n
    gamma = 1.0 / (8.0 * constants.ell * q)
    inner_iters = math.ceil(30.0 * constants.ell * q / constants.mu)
    assert gamma <= 1.0 / (2.0 * constants.ell * q) * (1.0 + 1e-12)
    return gamma, inner_iters


@dataclass(frozen=True)
class SolverConfig:
    gamma: float
    inner_iters: int
    epochs: int
    compressor: CompressorSpec
    master_seed: int
    auto_hyperparams: bool = False

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class SolverState:
    """Iterate pair, estimator, and position inside the epoch structure."""
    z_prev: np.ndarray
    z_curr: np.ndarray
    g_curr: np.ndarray
    epoch_index: int
    inner_index: int
    epoch_anchor: np.ndarray


@dataclass(frozen=True)
class Trace:
    """Residual/communication series of one run.

    Parallel arrays; row i says: iterate z^{inner_iter[i]} of epoch[i] had
    squared residual residual_sq_rel[i] (relative to the run's starting
    anchor) after cum_uplink_bits[i] uplink bits per device.
    """
    epoch: np.ndarray
    inner_iter: np.ndarray
    residual_sq_rel: np.ndarray
    cum_uplink_bits: np.ndarray

    def __len__(self) -> int:
        return self.epoch.shape[0]


@dataclass(frozen=True)
class RunResult:
    final_iterate: np.ndarray
    trace: Trace
    ledger: CommLedger


class DivergenceError(RuntimeError):
    """Raised when an iterate leaves the finite/bounded region.

    Carries the position (epoch, inner_index), the offending squared
    residual, the squared norm of the current estimator, and the partial
    trace and ledger collected so far (None for the reference step ops).
    """

    def __init__(self, epoch: int, inner_index: int, resid_sq: float,
                 g_sq: float, trace: Trace | None = None,
                 ledger: CommLedger | None = None):
        super().__init__(
            f"divergence at epoch {epoch}, inner iteration {inner_index}: "
            f"||F||^2 = {resid_sq:.6e}, ||g||^2 = {g_sq:.6e}")
        self.epoch = epoch
        self.inner_index = inner_index
        self.resid_sq = resid_sq
        self.g_sq = g_sq
        self.trace = trace
        self.ledger = ledger


def initial_state(problem: VIProblem, z0: np.ndarray | None = None) -> SolverState:
    """Fresh state anchored at z0 (default: the zero vector)."""
    if z0 is None:
        anchor = np.zeros(problem.d)
    else:
        anchor = np.asarray(z0, dtype=float).copy()
        if anchor.shape != (problem.d,):
            raise ValueError(f"z0 must have shape ({problem.d},)")
    return SolverState(z_prev=anchor.copy(), z_curr=anchor.copy(),
                       g_curr=np.zeros(problem.d), epoch_index=0,
                       inner_index=0, epoch_anchor=anchor)


def init_epoch(problem: VIProblem, state: SolverState, gamma: float,
               comm: CommLedger | None = None) -> SolverState:
    """Open an epoch: full synchronization and the first update.

    z^0 is the anchor, g^0 = F(z^0) exactly (every device uploads its full
    value, 32*d bits each), z^1 = z^0 - gamma*g^0.
    """
    anchor = state.epoch_anchor
    g = problem.eval_full(anchor)
    if not np.all(np.isfinite(g)):
        raise DivergenceError(state.epoch_index + 1, 0,
                              float("nan"), float("nan"))
    z1 = anchor - gamma * g
    if comm is not None:
        comm.record_epoch_start(problem.n, problem.d)
    return SolverState(z_prev=anchor.copy(), z_curr=z1, g_curr=g,
                       epoch_index=state.epoch_index + 1, inner_index=1,
                       epoch_anchor=anchor)


def inner_step(problem: VIProblem, state: SolverState, spec: CompressorSpec,
               gamma: float, master_seed: int,
               comm: CommLedger | None = None) -> SolverState:
    """One compressed round: aggregate C(F_i(z^k) - F_i(z^{k-1})) and step.

    Device i's randomness comes from the stream seeded by
    derive_seed(master_seed, i, epoch_index, inner_index), so the result is
    independent of device evaluation order.
    """
    if state.inner_index < 1:
        raise ValueError("inner_step requires an initialized epoch")
    k, epoch = state.inner_index, state.epoch_index
    acc = np.zeros(problem.d)
    for i in range(problem.n):
        u = problem.eval_local(i, state.z_curr) - problem.eval_local(i, state.z_prev)
        stream = CounterStream(derive_seed(master_seed, i, epoch, k))
        acc += compress(spec, u, stream).payload
    g_next = state.g_curr + acc / float(problem.n)
    with np.errstate(over="ignore", invalid="ignore"):
        z_next = state.z_curr - gamma * g_next
    if not np.all(np.isfinite(z_next)):
        raise DivergenceError(epoch, k, float("inf"),
                              float(kernels.sqnorm(g_next)))
    if comm is not None:
        comm.record_inner_round(spec, problem.n, problem.d)
    return replace(state, z_prev=state.z_curr, z_curr=z_next, g_curr=g_next,
                   inner_index=k + 1)


class MarinaSolver:
    """Driver for full runs and epoch diagnostics over the packed kernels."""

    def __init__(self, problem: VIProblem, config: SolverConfig,
                 record_events: bool = False):
        if config.compressor.d != problem.d:
            raise ValueError(
                f"compressor dimension {config.compressor.d} does not match "
                f"problem dimension {problem.d}")
        self.problem = problem
        self.config = config
        self.ledger = CommLedger(problem.n, record_events=record_events)
        self._pack = problem.kernel_pack()
        self._h0 = kernels.mix_master(config.master_seed)
        self._kind = kernels.KIND_CODES[config.compressor.kind]
        self._kk = config.compressor.k if config.compressor.k is not None else 0
        self._payload = config.compressor.payload_bits

    def run(self, z0: np.ndarray | None = None, log_stride: int = 1,
            target_resid_sq_rel: float | None = None) -> RunResult:
        """Execute up to `epochs` epochs from z0 (default zero vector).

        The trace logs the squared residual of z^k, normalized by the squared
        residual of the starting anchor, against cumulative per-device uplink
        bits: inner iterations at multiples of log_stride during the epoch,
        plus every epoch boundary.  With target_resid_sq_rel set, the run
        stops at the first epoch boundary at or below the target.
        """
        if log_stride < 1:
            raise ValueError("log_stride must be >= 1")
        problem, config = self.problem, self.config
        n, d = problem.n, problem.d
        K, S = config.inner_iters, config.epochs
        gamma = config.gamma
        sync_bits = FULL_VALUE_BITS * d

        anchor = initial_state(problem, z0).epoch_anchor
        evals = np.empty((n, d))
        g0 = np.empty(d)
        ep_rows: list[int] = []
        k_rows: list[int] = []
        resid_rows: list[float] = []
        bit_rows: list[int] = []
        bits_base = 0
        normalizer = 0.0
        div_limit = float("inf")
        nrounds = K - 1
        cap = nrounds // log_stride + 1
        resid_buf = np.empty(cap)
        k_buf = np.empty(cap, dtype=np.int64)

        def partial_trace() -> Trace:
            return self._make_trace(ep_rows, k_rows, resid_rows, bit_rows,
                                    normalizer if normalizer > 0.0 else 1.0)

        stopped_early = False
        for s in range(1, S + 1):
            kernels.eval_all(self._pack, anchor, evals)
            kernels.mean_rows(evals, g0)
            resid_sq = kernels.sqnorm(g0)
            if s == 1:
                normalizer = resid_sq if resid_sq > 0.0 else 1.0
                div_limit = _DIVERGENCE_FACTOR * max(resid_sq, 1.0)
                ep_rows.append(1)
                k_rows.append(0)
                resid_rows.append(resid_sq)
                bit_rows.append(0)
            else:
                ep_rows.append(s - 1)
                k_rows.append(K)
                resid_rows.append(resid_sq)
                bit_rows.append(bits_base)
            if not math.isfinite(resid_sq):
                raise DivergenceError(s, 0, resid_sq, resid_sq,
                                      partial_trace(), self.ledger)
            if (target_resid_sq_rel is not None
                    and resid_sq / normalizer <= target_resid_sq_rel):
                stopped_early = True
                break
            self.ledger.record_epoch_start(n, d)
            g = g0.copy()
            z_prev = anchor.copy()
            z_curr = anchor - gamma * g0
            prev_evals = evals.copy()
            bits_sync = bits_base + sync_bits
            n_logged, status, k_fail = kernels.run_rounds(
                self._pack, z_prev, z_curr, prev_evals, g, gamma,
                nrounds, 1, self._kind, self._kk, self._h0, s, log_stride,
                resid_buf, k_buf, div_limit)
            for idx in range(n_logged):
                ep_rows.append(s)
                k_rows.append(int(k_buf[idx]))
                resid_rows.append(float(resid_buf[idx]))
                bit_rows.append(bits_sync + (int(k_buf[idx]) - 1) * self._payload)
            if status != kernels.STATUS_OK:
                self.ledger.record_inner_rounds(config.compressor, n, d,
                                                k_fail - 1)
                kernels.eval_all(self._pack, z_curr, evals)
                kernels.mean_rows(evals, g0)
                raise DivergenceError(s, k_fail, float(kernels.sqnorm(g0)),
                                      float(kernels.sqnorm(g)),
                                      partial_trace(), self.ledger)
            self.ledger.record_inner_rounds(config.compressor, n, d, nrounds)
            bits_base = bits_sync + nrounds * self._payload
            anchor = z_curr.copy()

        if not stopped_early:
            kernels.eval_all(self._pack, anchor, evals)
            kernels.mean_rows(evals, g0)
            resid_sq = kernels.sqnorm(g0)
            ep_rows.append(S)
            k_rows.append(K)
            resid_rows.append(resid_sq)
            bit_rows.append(bits_base)
            if not math.isfinite(resid_sq):
                raise DivergenceError(S, K, resid_sq, resid_sq,
                                      partial_trace(), self.ledger)

        trace = self._make_trace(ep_rows, k_rows, resid_rows, bit_rows, normalizer)
        return RunResult(final_iterate=anchor, trace=trace, ledger=self.ledger)

    def run_epoch_diagnostics(self, z0: np.ndarray | None = None,
                              gamma: float | None = None,
                              inner_iters: int | None = None) -> dict:
        """Probe one epoch extended to K rounds so g^K is observable.

        A standard epoch performs K-1 compressed rounds after the first
        update; running one extra round exposes g^K and F(z^K) without an
        additional evaluation pass.  Nothing is logged to the ledger.

        Returns resid0_sq = ||F(z^0)||^2 = ||g^0||^2, gK_sq = ||g^K||^2,
        residK_sq = ||F(z^K)||^2 and drift_sq = ||F(z^K) - g^K||^2.
        """
        problem, config = self.problem, self.config
        gamma = config.gamma if gamma is None else gamma
        K = config.inner_iters if inner_iters is None else inner_iters
        n, d = problem.n, problem.d
        anchor = initial_state(problem, z0).epoch_anchor
        evals = np.empty((n, d))
        g0 = np.empty(d)
        kernels.eval_all(self._pack, anchor, evals)
        kernels.mean_rows(evals, g0)
        resid0_sq = kernels.sqnorm(g0)
        if not math.isfinite(resid0_sq):
            raise DivergenceError(1, 0, resid0_sq, resid0_sq)
        div_limit = _DIVERGENCE_FACTOR * max(resid0_sq, 1.0)
        g = g0.copy()
        z_prev = anchor.copy()
        z_curr = anchor - gamma * g0
        prev_evals = evals.copy()
        resid_buf = np.empty(1)
        k_buf = np.empty(1, dtype=np.int64)
        _, status, k_fail = kernels.run_rounds(
            self._pack, z_prev, z_curr, prev_evals, g, gamma,
            K, 1, self._kind, self._kk, self._h0, 1, K + 1,
            resid_buf, k_buf, div_limit)
        if status != kernels.STATUS_OK:
            raise DivergenceError(1, k_fail, float("inf"),
                                  float(kernels.sqnorm(g)))
        mean_f = np.empty(d)
        kernels.mean_rows(prev_evals, mean_f)
        residK_sq = kernels.sqnorm(mean_f)
        gK_sq = kernels.sqnorm(g)
        drift_sq = kernels.sqnorm(mean_f - g)
        return {"resid0_sq": resid0_sq, "gK_sq": gK_sq,
                "residK_sq": residK_sq, "drift_sq": drift_sq}

    @staticmethod
    def _make_trace(ep_rows, k_rows, resid_rows, bit_rows, normalizer) -> Trace:
        resid = np.asarray(resid_rows, dtype=float)
        return Trace(epoch=np.asarray(ep_rows, dtype=np.int64),
                     inner_iter=np.asarray(k_rows, dtype=np.int64),
                     residual_sq_rel=resid / normalizer,
                     cum_uplink_bits=np.asarray(bit_rows, dtype=np.int64))
