"""Finite-sum variational-inequality problem families and their oracles.

A problem is an operator F(z) = (1/n) * sum_i F_i(z) held by n devices; the
goal is the point z* with F(z*) = 0.  Two affine families are provided:

* bilinear saddle: F_i(x, y) = (A_i y + a_i + lam*x,  lam*y - A_i^T x - b_i),
  the gradient/negative-gradient field of a lam-regularized bilinear game;
* quadratic minimization: F_i(z) = B_i z + c_i with symmetric PD B_i.

Both are affine, so exact solutions and exact problem constants are
available and serve as oracles for the iterative machinery.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import eig_max_psd, eig_min_sym, spectral_norm

_DENOM_FLOOR = 1e-14  # degenerate-pair cutoff in the sampling estimators


@dataclass(frozen=True)
class ProblemConstants:
    """Exact constants of a problem instance.

    ell: cocoercivity constant, worst case over devices.
    mu: strong-monotonicity constant of the aggregate operator.
    ell_aggregate: the looser estimate ||mean A||_2^2 / lam computed from
        the aggregated matrix (equals ell for quadratic problems).
    """
    ell: float
    mu: float
    ell_aggregate: float

    def __post_init__(self):
        if not (0.0 < self.mu <= self.ell):
            raise ValueError(f"require 0 < mu <= ell, got mu={self.mu}, ell={self.ell}")


class VIProblem(ABC):
    """Finite-sum operator over n devices in dimension d."""

    n: int
    d: int

    @abstractmethod
    def eval_local(self, i: int, z: np.ndarray) -> np.ndarray:
        """F_i(z) for device i."""

    @abstractmethod
    def aggregate_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """(M, q) with F(z) = M z + q for the aggregate operator."""

    @abstractmethod
    def exact_constants(self) -> ProblemConstants:
        """Exact (ell, mu, ell_aggregate) for this instance."""

    @abstractmethod
    def kernel_pack(self) -> tuple:
        """Arrays consumed by the hot loops; see `kernels` for the layout."""

    def _check_z(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.d,):
            raise ValueError(f"z must have shape ({self.d},), got {z.shape}")
        return z

    def _check_device(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise ValueError(f"device index {i} outside [0, {self.n})")

    def eval_full(self, z: np.ndarray) -> np.ndarray:
        """F(z) = (1/n) sum_i F_i(z), summed in ascending device order."""
        acc = self.eval_local(0, z)
        for i in range(1, self.n):
            acc += self.eval_local(i, z)
        return acc / float(self.n)

    def exact_solution(self) -> np.ndarray:
        """The point z* with F(z*) = 0, from the affine system M z = -q."""
        M, q = self.aggregate_affine()
        z_star = np.linalg.solve(M, -q)
        resid = float(np.linalg.norm(self.eval_full(z_star)))
        limit = 1e-8 * (1.0 + float(np.linalg.norm(q)))
        if resid > limit:
            raise ArithmeticError(
                f"exact_solution residual {resid:.3e} exceeds {limit:.3e}")
        return z_star

    # Serialization: problems regenerate from their factory arguments; raw
    # matrices are never the source of truth.
    _descriptor: dict | None = None

    def to_descriptor(self) -> dict:
        if self._descriptor is None:
            raise ValueError("problem was not created by a seeded factory; "
                             "only generated problems serialize")
        return dict(self._descriptor)

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_descriptor(), sort_keys=True) + "\n",
                              encoding="utf-8")


class BilinearSaddleProblem(VIProblem):
    """Regularized bilinear saddle operators on n devices.

    Device i holds F_i(x, y) = (A_i y + a_i + lam*x, lam*y - A_i^T x - b_i)
    with square A_i of size d_half; z = (x, y) and d = 2*d_half.
    """

    def __init__(self, A: np.ndarray, a: np.ndarray, b: np.ndarray, lam: float):
        A = np.ascontiguousarray(A, dtype=float)
        a = np.ascontiguousarray(a, dtype=float)
        b = np.ascontiguousarray(b, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError("A must have shape (n, d_half, d_half)")
        n, d_half = A.shape[0], A.shape[1]
        if n < 1 or d_half < 1:
            raise ValueError("need n >= 1 and d_half >= 1")
        if a.shape != (n, d_half) or b.shape != (n, d_half):
            raise ValueError("a and b must have shape (n, d_half)")
        if not lam > 0.0:
            raise ValueError(f"lambda must be positive, got {lam}")
        for arr, name in ((A, "A"), (a, "a"), (b, "b")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        self.n = n
        self.d_half = d_half
        self.d = 2 * d_half
        self.lam = float(lam)
        self.A = A
        self.At = np.ascontiguousarray(np.transpose(A, (0, 2, 1)))
        self.a = a
        self.b = b
        self._pack = None

    def eval_local(self, i: int, z: np.ndarray) -> np.ndarray:
        self._check_device(i)
        z = self._check_z(z)
        dh = self.d_half
        x, y = z[:dh], z[dh:]
        out = np.empty(self.d)
        out[:dh] = self.A[i].dot(y) + self.a[i] + self.lam * x
        out[dh:] = (self.lam * y - self.At[i].dot(x)) - self.b[i]
        return out

    def aggregate_affine(self) -> tuple[np.ndarray, np.ndarray]:
        dh = self.d_half
        A_bar = self.A.mean(axis=0)
        M = np.zeros((self.d, self.d))
        M[:dh, :dh] = self.lam * np.eye(dh)
        M[dh:, dh:] = self.lam * np.eye(dh)
        M[:dh, dh:] = A_bar
        M[dh:, :dh] = -A_bar.T
        q = np.concatenate([self.a.mean(axis=0), -self.b.mean(axis=0)])
        return M, q

    def exact_constants(self) -> ProblemConstants:
        # For F_i(w) = lam*w + S_i w + const with S_i skew, the difference
        # operator satisfies ||dF||^2 = (lam^2 + ||A_i||_2^2)||dw||^2 on the
        # worst direction and <dF, dw> = lam*||dw||^2 identically, so the
        # exact per-device cocoercivity constant is lam + ||A_i||_2^2 / lam.
        norms_sq = [spectral_norm(self.A[i]) ** 2 for i in range(self.n)]
        ell = self.lam + max(norms_sq) / self.lam
        ell_aggregate = spectral_norm(self.A.mean(axis=0)) ** 2 / self.lam
        return ProblemConstants(ell=ell, mu=self.lam, ell_aggregate=ell_aggregate)

    def kernel_pack(self) -> tuple:
        if self._pack is None:
            n, dh = self.n, self.d_half
            stack = np.ascontiguousarray(self.A.reshape(n * dh, dh))
            stack_t = np.ascontiguousarray(self.At.reshape(n * dh, dh))
            self._pack = (0, stack, stack_t, self.a, self.b, self.lam)
        return self._pack


class QuadraticMinProblem(VIProblem):
    """Gradient field of a finite-sum strongly convex quadratic.

    Device i holds F_i(z) = B_i z + c_i with B_i symmetric positive-definite.
    """

    def __init__(self, B: np.ndarray, c: np.ndarray, validate_pd: bool = True):
        B = np.ascontiguousarray(B, dtype=float)
        c = np.ascontiguousarray(c, dtype=float)
        if B.ndim != 3 or B.shape[1] != B.shape[2]:
            raise ValueError("B must have shape (n, d, d)")
        n, d = B.shape[0], B.shape[1]
        if c.shape != (n, d):
            raise ValueError("c must have shape (n, d)")
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(c))):
            raise ValueError("non-finite entries in B or c")
        for i in range(n):
            if np.max(np.abs(B[i] - B[i].T)) > 1e-10:
                raise ValueError(f"B[{i}] is not symmetric within 1e-10")
        if validate_pd:
            for i in range(n):
                if eig_min_sym(B[i]) <= 0.0:
                    raise ValueError(f"B[{i}] is not positive-definite")
        self.n = n
        self.d = d
        self.B = B
        self.c = c
        self._pack = None

    def eval_local(self, i: int, z: np.ndarray) -> np.ndarray:
        self._check_device(i)
        z = self._check_z(z)
        return self.B[i].dot(z) + self.c[i]

    def aggregate_affine(self) -> tuple[np.ndarray, np.ndarray]:
        return self.B.mean(axis=0), self.c.mean(axis=0)

    def exact_constants(self) -> ProblemConstants:
        ell = max(eig_max_psd(self.B[i]) for i in range(self.n))
        mu = eig_min_sym(self.B.mean(axis=0))
        return ProblemConstants(ell=ell, mu=mu, ell_aggregate=ell)

    def kernel_pack(self) -> tuple:
        if self._pack is None:
            n, d = self.n, self.d
            stack = np.ascontiguousarray(self.B.reshape(n * d, d))
            # The transposed stack and the second offset vector are unused for
            # this family; zero-width placeholders keep the kernel signature.
            self._pack = (1, stack, stack, self.c, np.zeros((n, 0)), 0.0)
        return self._pack


def generate_bilinear(n: int, d_half: int, lam: float, target_ell: float,
                      seed: int) -> BilinearSaddleProblem:
    """Random bilinear instance with an exact worst-case cocoercivity constant.

    Entries of A_i, a_i, b_i are i.i.d. standard normal from a seeded
    generator (drawn in that order).  All A_i are then rescaled by one common
    factor so that max_i ||A_i||_2^2 / lam = target_ell - lam, which makes
    exact_constants().ell equal target_ell.  Identical arguments give a
    bit-identical problem.
    """
    if n < 1 or d_half < 1:
        raise ValueError("need n >= 1 and d_half >= 1")
    if not lam > 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not target_ell > lam:
        raise ValueError(
            f"target_ell must exceed lambda (cocoercivity of this family is "
            f"at least lambda); got target_ell={target_ell}, lambda={lam}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d_half, d_half))
    a = rng.standard_normal((n, d_half))
    b = rng.standard_normal((n, d_half))
    max_norm = max(spectral_norm(A[i], tol=1e-13) for i in range(n))
    scale = np.sqrt((target_ell - lam) * lam) / max_norm
    problem = BilinearSaddleProblem(A * scale, a, b, lam)
    problem._descriptor = {
        "family": "bilinear_saddle", "n": n, "d_half": d_half,
        "lambda": lam, "target_ell": target_ell, "seed": seed,
    }
    return problem


def generate_quadratic(n: int, d: int, target_ell: float, seed: int) -> QuadraticMinProblem:
    """Random quadratic-minimization instance with max_i eig_max(B_i) = target_ell.

    Each B_i gets a seeded random orthogonal eigenbasis and eigenvalues
    uniform in [0.05*target_ell, target_ell]; one eigenvalue of B_0 is pinned
    to target_ell so the worst-case constant is exact.
    """
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if not target_ell > 0.0:
        raise ValueError("target_ell must be positive")
    rng = np.random.default_rng(seed)
    B = np.empty((n, d, d))
    low = 0.05 * target_ell
    for i in range(n):
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eigs = rng.uniform(low, target_ell, size=d)
        if i == 0:
            eigs[0] = target_ell
        Bi = (Q * eigs) @ Q.T
        B[i] = 0.5 * (Bi + Bi.T)
    c = rng.standard_normal((n, d))
    problem = QuadraticMinProblem(B, c)
    problem._descriptor = {
        "family": "quadratic_min", "n": n, "d": d,
        "target_ell": target_ell, "seed": seed,
    }
    return problem


def from_descriptor(desc: dict) -> VIProblem:
    """Rebuild a generated problem from its JSON descriptor."""
    family = desc.get("family")
    if family == "bilinear_saddle":
        return generate_bilinear(desc["n"], desc["d_half"], desc["lambda"],
                                 desc["target_ell"], desc["seed"])
    if family == "quadratic_min":
        return generate_quadratic(desc["n"], desc["d"], desc["target_ell"],
                                  desc["seed"])
    raise ValueError(f"unknown problem family: {family!r}")


def load_json(path: str | Path) -> VIProblem:
    return from_descriptor(json.loads(Path(path).read_text(encoding="utf-8")))


def dump_matrices(problem: VIProblem, directory: str | Path) -> None:
    """Debug dump of the raw per-device arrays as row-major CSV files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(problem, BilinearSaddleProblem):
        named = [(f"A_{i}", problem.A[i]) for i in range(problem.n)]
        named += [("a", problem.a), ("b", problem.b)]
    elif isinstance(problem, QuadraticMinProblem):
        named = [(f"B_{i}", problem.B[i]) for i in range(problem.n)]
        named += [("c", problem.c)]
    else:
        raise ValueError("unsupported problem type")
    for name, arr in named:
        np.savetxt(directory / f"{name}.csv", arr, delimiter=",", fmt="%.17g")


def estimate_cocoercivity(problem: VIProblem, samples: int, seed: int) -> float:
    """Sampled lower bound on the per-device cocoercivity constant.

    Draws `samples` standard-normal pairs (u, v) and returns the max over
    pairs and devices of ||F_i(u)-F_i(v)||^2 / <F_i(u)-F_i(v), u-v>, skipping
    pairs whose denominator is below 1e-14.  Returns 0.0 if every pair is
    skipped.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        u = rng.standard_normal(problem.d)
        v = rng.standard_normal(problem.d)
        du = u - v
        for i in range(problem.n):
            dF = problem.eval_local(i, u) - problem.eval_local(i, v)
            denom = float(dF @ du)
            if denom < _DENOM_FLOOR:
                continue
            best = max(best, float(dF @ dF) / denom)
    return best


def estimate_strong_monotonicity(problem: VIProblem, samples: int, seed: int) -> float:
    """Sampled upper bound on the aggregate strong-monotonicity constant.

    Min over sampled pairs of <F(u)-F(v), u-v> / ||u-v||^2, skipping pairs
    with ||u-v||^2 below 1e-14.  Returns 0.0 if every pair is skipped.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(samples):
        u = rng.standard_normal(problem.d)
        v = rng.standard_normal(problem.d)
        du = u - v
        denom = float(du @ du)
        if denom < _DENOM_FLOOR:
            continue
        dF = problem.eval_full(u) - problem.eval_full(v)
        best = min(best, float(dF @ du) / denom)
    return 0.0 if best == np.inf else float(best)
