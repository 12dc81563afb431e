"""Hot numerical loops with a numba-compiled path and a plain-Python twin.

Backend selection happens once at import time: set MARINA_VI_NUMBA=0 in the
environment to run the exact same function bodies without compilation.  Both
backends execute identical statements on identical dtypes (uint64 counters,
float64 vectors, BLAS matvecs), so their outputs agree bit for bit; the test
suite checks this with a subprocess run.

Layout contract for a packed problem (see problems.kernel_pack):
  (family, stack, stack_t, avec, bvec, lam)
  family 0, bilinear: stack is the (n*d_half, d_half) row-stack of the A_i,
    stack_t the stack of their transposes, avec/bvec the (n, d_half) offsets.
  family 1, quadratic: stack is the (n*d, d) row-stack of the B_i, avec the
    (n, d) offsets; stack_t and bvec are ignored.

Per-message randomness: the stream seed for (device i, epoch e, round k) is
the absorb chain mix(h0, i, e, k) with h0 = mix64(master_seed), identical to
rng.derive_seed(master_seed, i, e, k); draw j of the stream is
mix64(seed + (j+1)*GOLDEN_GAMMA).
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("MARINA_VI_NUMBA", "1") != "0"

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:
        USE_NUMBA = False

if USE_NUMBA:
    def _jit(fn):
        return _njit(cache=True)(fn)
else:
    def _jit(fn):
        return fn

# uint64 constants shared by both backends (SplitMix64).
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ZERO = np.uint64(0)
_MASK = 0xFFFFFFFFFFFFFFFF
_INV53 = float(2.0 ** -53)

KIND_CODES = {"identity": 0, "rand_k": 1, "int8_quant": 2}

STATUS_OK = 0
STATUS_DIVERGED = 1


@_jit
def _mix64(x):
    x = (x ^ (x >> _S30)) * _MUL1
    x = (x ^ (x >> _S27)) * _MUL2
    return x ^ (x >> _S31)


@_jit
def _absorb(h, f):
    return _mix64((h + _GAMMA) ^ f)


@_jit
def _message_seed(h0, device, epoch, k):
    h = _absorb(h0, np.uint64(device))
    h = _absorb(h, np.uint64(epoch))
    return _absorb(h, np.uint64(k))


@_jit
def _next_below(ctr, bound):
    """(value, ctr): uniform uint64 in [0, bound) by exact rejection."""
    threshold = (_ZERO - bound) % bound
    while True:
        ctr = ctr + _GAMMA
        u = _mix64(ctr)
        if u >= threshold:
            return u % bound, ctr


@_jit
def _sqnorm(v):
    # Sequential accumulation; never BLAS, so both backends agree bitwise.
    acc = 0.0
    for j in range(v.shape[0]):
        acc += v[j] * v[j]
    return acc


@_jit
def _compress_add(kind, kk, delta, out, perm, jpos, ctr):
    """Add one compressed message C(delta) into out; returns the counter.

    perm must hold the identity permutation on entry and is restored before
    returning.  Draw order per message: rand_k consumes one bounded draw per
    selected coordinate; int8 consumes one uniform per coordinate in
    ascending order (none when delta = 0); identity consumes nothing.
    """
    d = delta.shape[0]
    if kind == 0:
        for j in range(d):
            out[j] += delta[j]
        return ctr
    if kind == 1:
        factor = np.float64(d) / np.float64(kk)
        for t in range(kk):
            r, ctr = _next_below(ctr, np.uint64(d - t))
            j = t + np.int64(r)
            perm[t], perm[j] = perm[j], perm[t]
            jpos[t] = j
        for t in range(kk):
            idx = perm[t]
            out[idx] += factor * delta[idx]
        for t in range(kk - 1, -1, -1):
            j = jpos[t]
            perm[t], perm[j] = perm[j], perm[t]
        return ctr
    # int8_quant: per-vector max-abs scale, stochastic rounding to [-127, 127].
    m = 0.0
    for j in range(d):
        av = abs(delta[j])
        if av > m:
            m = av
    if m == 0.0:
        return ctr
    s = m / 127.0
    for j in range(d):
        w = delta[j] / s
        f = np.floor(w)
        frac = w - f
        ctr = ctr + _GAMMA
        u = np.float64(_mix64(ctr) >> _S11) * _INV53
        q = f + 1.0 if u < frac else f
        if q > 127.0:
            q = 127.0
        elif q < -127.0:
            q = -127.0
        out[j] += s * q
    return ctr


@_jit
def _eval_all(fam, stack, stack_t, avec, bvec, lam, z, out):
    """Per-device operator values at z, written into out of shape (n, d)."""
    n = avec.shape[0]
    if fam == 0:
        dh = stack.shape[1]
        ty = np.dot(stack, z[dh:])
        tx = np.dot(stack_t, z[:dh])
        for i in range(n):
            base = i * dh
            for j in range(dh):
                out[i, j] = ty[base + j] + avec[i, j] + lam * z[j]
            for j in range(dh):
                out[i, dh + j] = (lam * z[dh + j] - tx[base + j]) - bvec[i, j]
    else:
        d = stack.shape[1]
        tz = np.dot(stack, z)
        for i in range(n):
            base = i * d
            for j in range(d):
                out[i, j] = tz[base + j] + avec[i, j]


@_jit
def _mean_rows(evals, out):
    """Ascending-device mean of the rows of evals, into out."""
    n = evals.shape[0]
    d = evals.shape[1]
    nf = np.float64(n)
    for j in range(d):
        acc = 0.0
        for i in range(n):
            acc += evals[i, j]
        out[j] = acc / nf


@_jit
def _run_rounds(fam, stack, stack_t, avec, bvec, lam,
                z_prev, z_curr, prev_evals, g,
                gamma, nrounds, start_k,
                kind, kk, h0, epoch, stride,
                resid_buf, k_buf, div_limit):
    """Execute compressed inner rounds k = start_k .. start_k+nrounds-1.

    Round k evaluates all devices at z_curr (= z^k), logs ||F(z^k)||^2 when
    k is a multiple of stride, aggregates the compressed eval differences,
    and advances the iterate pair in place.  On divergence the state of the
    last completed round is left untouched.

    Returns (n_logged, status, k_fail); k_fail is the failing round index or
    0 when status is STATUS_OK.
    """
    n = avec.shape[0]
    d = z_curr.shape[0]
    nf = np.float64(n)
    new_evals = np.empty((n, d))
    mean_f = np.empty(d)
    gsum = np.empty(d)
    delta = np.empty(d)
    perm = np.empty(d, dtype=np.int64)
    for j in range(d):
        perm[j] = j
    cap = kk if kk > 0 else 1
    jpos = np.empty(cap, dtype=np.int64)
    n_logged = 0
    for t in range(nrounds):
        k = start_k + t
        _eval_all(fam, stack, stack_t, avec, bvec, lam, z_curr, new_evals)
        _mean_rows(new_evals, mean_f)
        resid_sq = _sqnorm(mean_f)
        if not (resid_sq <= div_limit):
            return n_logged, STATUS_DIVERGED, k
        if k % stride == 0:
            resid_buf[n_logged] = resid_sq
            k_buf[n_logged] = k
            n_logged += 1
        for j in range(d):
            gsum[j] = 0.0
        for i in range(n):
            for j in range(d):
                delta[j] = new_evals[i, j] - prev_evals[i, j]
            ctr = _message_seed(h0, i, epoch, k)
            _compress_add(kind, kk, delta, gsum, perm, jpos, ctr)
        for j in range(d):
            g[j] = g[j] + gsum[j] / nf
        for j in range(d):
            zj = z_curr[j]
            z_prev[j] = zj
            z_curr[j] = zj - gamma * g[j]
        for i in range(n):
            for j in range(d):
                prev_evals[i, j] = new_evals[i, j]
    return n_logged, STATUS_OK, np.int64(0)


@_jit
def _mc_stats(kind, kk, u, seed0, draws, sum_vec, sumsq_vec, perm, jpos, scratch):
    """Accumulate Monte Carlo first/second payload moments and the mean
    squared compression error over `draws` independent messages."""
    d = u.shape[0]
    ctr = seed0
    err_acc = 0.0
    for t in range(draws):
        for j in range(d):
            scratch[j] = 0.0
        ctr = _compress_add(kind, kk, u, scratch, perm, jpos, ctr)
        for j in range(d):
            v = scratch[j]
            sum_vec[j] += v
            sumsq_vec[j] += v * v
            diff = v - u[j]
            err_acc += diff * diff
    return err_acc


# ---------------------------------------------------------------------------
# Python-visible entry points.  The errstate guard silences the benign
# wraparound warnings numpy scalars emit on the plain-Python backend; the
# wrapped values themselves are identical on both backends.

def mix_master(master_seed: int) -> np.uint64:
    """h0 for a run: mix64 of the masked master seed."""
    with np.errstate(over="ignore"):
        return _mix64(np.uint64(master_seed & _MASK))


def derive_stream_seed(master_seed: int, device: int, epoch: int, k: int) -> int:
    """uint64 message-stream seed; equals rng.derive_seed(master, device, epoch, k)."""
    with np.errstate(over="ignore"):
        return int(_message_seed(np.uint64(mix_master(master_seed)),
                                 device, epoch, k))


def eval_all(pack, z: np.ndarray, out: np.ndarray) -> None:
    fam, stack, stack_t, avec, bvec, lam = pack
    with np.errstate(over="ignore"):
        _eval_all(fam, stack, stack_t, avec, bvec, lam, z, out)


def mean_rows(evals: np.ndarray, out: np.ndarray) -> None:
    with np.errstate(over="ignore"):
        _mean_rows(evals, out)


def sqnorm(v: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        return float(_sqnorm(v))


def run_rounds(pack, z_prev, z_curr, prev_evals, g, gamma, nrounds, start_k,
               kind, kk, h0, epoch, stride, resid_buf, k_buf, div_limit):
    fam, stack, stack_t, avec, bvec, lam = pack
    with np.errstate(over="ignore"):
        out = _run_rounds(fam, stack, stack_t, avec, bvec, lam,
                          z_prev, z_curr, prev_evals, g,
                          gamma, nrounds, start_k,
                          kind, kk, np.uint64(h0), epoch, stride,
                          resid_buf, k_buf, div_limit)
    return int(out[0]), int(out[1]), int(out[2])


def compress_one(kind: int, kk: int, u: np.ndarray, stream_seed: int) -> np.ndarray:
    """Dense decoded payload of one message; mirrors compressors.compress."""
    d = u.shape[0]
    out = np.zeros(d)
    perm = np.arange(d, dtype=np.int64)
    jpos = np.empty(max(kk, 1), dtype=np.int64)
    with np.errstate(over="ignore"):
        _compress_add(kind, kk, u, out, perm, jpos, np.uint64(stream_seed))
    return out


def mc_stats(kind: int, kk: int, u: np.ndarray, seed0: int, draws: int):
    """(per-coordinate payload sums, per-coordinate payload square sums,
    total squared error) over `draws` messages from one running stream."""
    d = u.shape[0]
    sum_vec = np.zeros(d)
    sumsq_vec = np.zeros(d)
    perm = np.arange(d, dtype=np.int64)
    jpos = np.empty(max(kk, 1), dtype=np.int64)
    scratch = np.empty(d)
    with np.errstate(over="ignore"):
        err = _mc_stats(kind, kk, u, np.uint64(seed0), draws,
                        sum_vec, sumsq_vec, perm, jpos, scratch)
    return sum_vec, sumsq_vec, float(err)
