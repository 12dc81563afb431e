"""Spectral quantities via power iteration.

Only dense, modest-size matrices appear in this package, so a plain power
iteration with a seeded start vector is enough.  No external eigensolver is
used in library code; `numpy.linalg` serves as an independent oracle in the
test suite only.
"""

from __future__ import annotations

import numpy as np


def _dominant_eig_psd(M: np.ndarray, tol: float, max_iters: int, seed: int) -> float:
    """Largest eigenvalue of a symmetric positive-semidefinite matrix.

    Rayleigh-quotient power iteration; stops when the eigenvalue estimate is
    stable to relative `tol` or after `max_iters` rounds.
    """
    d = M.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    ray_prev = np.inf
    ray = 0.0
    for _ in range(max_iters):
        w = M @ v
        ray = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        if abs(ray - ray_prev) <= tol * max(abs(ray), np.finfo(float).tiny):
            return ray
        ray_prev = ray
    return ray


def spectral_norm(A: np.ndarray, tol: float = 1e-10, max_iters: int = 10000,
                  seed: int = 0) -> float:
    """Operator 2-norm of a dense matrix, via power iteration on A^T A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("spectral_norm expects a 2-d matrix")
    gram = A.T @ A
    lam = _dominant_eig_psd(gram, tol, max_iters, seed)
    return float(np.sqrt(max(lam, 0.0)))


def _gershgorin_upper(B: np.ndarray) -> float:
    """Upper bound on the spectrum of a symmetric matrix (max row sum of |.|)."""
    return float(np.max(np.sum(np.abs(B), axis=1)))


def eig_min_sym(B: np.ndarray, tol: float = 1e-10, max_iters: int = 10000,
                seed: int = 0) -> float:
    """Smallest eigenvalue of any symmetric matrix.

    Uses the shift m = Gershgorin upper bound, so m*I - B is PSD and its
    dominant eigenvalue is m - lambda_min regardless of the sign pattern of
    B's spectrum.
    """
    B = np.asarray(B, dtype=float)
    m = _gershgorin_upper(B)
    if m == 0.0:
        return 0.0
    shifted = m * np.eye(B.shape[0]) - B
    lam = _dominant_eig_psd(shifted, tol, max_iters, seed)
    return float(m - lam)


def eig_max_psd(B: np.ndarray, tol: float = 1e-10, max_iters: int = 10000,
                seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix (direct power iteration)."""
    B = np.asarray(B, dtype=float)
    return float(max(_dominant_eig_psd(B, tol, max_iters, seed), 0.0))
