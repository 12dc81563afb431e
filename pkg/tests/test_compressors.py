"""Compression operators: exact constants, enumeration oracles, draw parity.

Moment identities for rand_k are verified against exhaustive subset
enumeration (an independent oracle); the compiled kernel path is checked
bit-for-bit against this module's reference implementation.
"""

import itertools
import math

import numpy as np
import pytest

from marina_vi import kernels
from marina_vi.compressors import (CompressorSpec, compress,
                                   exhaustive_randk_moments)
from marina_vi.rng import CounterStream, derive_seed


def spec_of(kind, d, k=None):
    return CompressorSpec(kind=kind, d=d, k=k)


# --- spec validation -------------------------------------------------------

def test_spec_rejects_unknown_kind_and_bad_k():
    with pytest.raises(ValueError):
        spec_of("top_k", 4, 2)
    with pytest.raises(ValueError):
        spec_of("rand_k", 4, 0)
    with pytest.raises(ValueError):
        spec_of("rand_k", 4, 5)
    with pytest.raises(ValueError):
        spec_of("identity", 4, 2)
    with pytest.raises(ValueError):
        spec_of("int8_quant", 4, 1)


def test_alpha_values():
    assert spec_of("identity", 100).alpha == 0.0
    assert spec_of("rand_k", 100, 10).alpha == pytest.approx(9.0, rel=1e-15)
    assert spec_of("int8_quant", 100).alpha == pytest.approx(100 / 64516,
                                                             rel=1e-15)


def test_delta_values():
    assert spec_of("identity", 100).delta == 1.0
    assert spec_of("rand_k", 100, 10).delta == pytest.approx(0.1, rel=1e-15)
    assert spec_of("int8_quant", 100).delta == 0.25
    from fractions import Fraction
    assert spec_of("rand_k", 100, 10).delta_fraction == Fraction(1, 10)
    assert spec_of("int8_quant", 100).delta_fraction == Fraction(1, 4)


def test_payload_bits_values():
    assert spec_of("identity", 100).payload_bits == 3200
    assert spec_of("rand_k", 100, 10).payload_bits == 390
    assert spec_of("int8_quant", 100).payload_bits == 832
    # index width is ceil(log2 d): d=64 needs 6 bits, d=65 needs 7
    assert spec_of("rand_k", 64, 1).payload_bits == 38
    assert spec_of("rand_k", 65, 1).payload_bits == 39


def test_alpha_nonneg_delta_in_unit_interval():
    for spec in (spec_of("identity", 7), spec_of("rand_k", 7, 3),
                 spec_of("int8_quant", 7)):
        assert spec.alpha >= 0.0
        assert 0.0 < spec.delta <= 1.0


# --- compress behavior -----------------------------------------------------

def test_identity_returns_input_with_full_bits():
    u = np.array([3.0, -1.0])
    msg = compress(spec_of("identity", 2), u, CounterStream(0))
    assert np.array_equal(msg.payload, u)
    assert msg.wire_bits == 64


def test_rand_k_d2_k1_two_outcomes_and_mean():
    spec = spec_of("rand_k", 2, 1)
    u = np.array([4.0, 0.0])
    seen = set()
    acc = np.zeros(2)
    n = 4000
    for j in range(n):
        payload = compress(spec, u, CounterStream(derive_seed(1, j))).payload
        seen.add(tuple(payload))
        acc += payload
    assert seen == {(8.0, 0.0), (0.0, 0.0)}
    # each outcome has prob 1/2; mean (4, 0) within 6 sigma = 6*4/sqrt(n)
    assert abs(acc[0] / n - 4.0) < 6 * 4.0 / math.sqrt(n)


def test_rand_k_sparsity_and_scaling():
    spec = spec_of("rand_k", 10, 3)
    u = np.linspace(1.0, 10.0, 10)
    for j in range(200):
        payload = compress(spec, u, CounterStream(derive_seed(2, j))).payload
        nz = np.nonzero(payload)[0]
        assert len(nz) == 3
        assert np.allclose(payload[nz], (10 / 3) * u[nz], rtol=1e-15)


def test_rand_k_subsets_uniform():
    # d=4, k=2: all 6 subsets must appear with equal frequency
    spec = spec_of("rand_k", 4, 2)
    u = np.ones(4)
    counts = {frozenset(c): 0 for c in itertools.combinations(range(4), 2)}
    n = 12000
    for j in range(n):
        payload = compress(spec, u, CounterStream(derive_seed(3, j))).payload
        counts[frozenset(np.nonzero(payload)[0].tolist())] += 1
    expected = n / 6
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    # chi-square, 5 dof: 99.9th percentile is about 20.5
    assert chi2 < 28.0


def test_int8_exact_on_grid_multiples():
    # every u_j / s is an exact integer, so rounding is deterministic
    u = np.array([15.875, 2.5, -0.375, 1.0, -15.875])
    msg = compress(spec_of("int8_quant", 5), u, CounterStream(9))
    assert np.array_equal(msg.payload, u)


def test_int8_levels_and_per_coordinate_error():
    spec = spec_of("int8_quant", 12)
    rng = np.random.default_rng(4)
    for j in range(100):
        u = rng.standard_normal(12) * 10.0 ** int(rng.integers(-3, 4))
        s = np.max(np.abs(u)) / 127.0
        payload = compress(spec, u, CounterStream(derive_seed(4, j))).payload
        levels = payload / s
        assert np.all(np.abs(levels) <= 127.0 + 1e-9)
        assert np.allclose(levels, np.round(levels), atol=1e-9)
        assert np.max(np.abs(payload - u)) <= s * (1 + 1e-12)


def test_zero_vector_costs_bits_but_no_draws():
    for spec in (spec_of("int8_quant", 6),):
        stream = CounterStream(5)
        msg = compress(spec, np.zeros(6), stream)
        assert np.array_equal(msg.payload, np.zeros(6))
        assert msg.wire_bits == spec.payload_bits
        assert stream.draws == 0


def test_compress_rejects_bad_input():
    spec = spec_of("identity", 3)
    with pytest.raises(ValueError):
        compress(spec, np.array([1.0, np.nan, 0.0]), CounterStream(0))
    with pytest.raises(ValueError):
        compress(spec, np.zeros(4), CounterStream(0))


def test_compress_deterministic_for_fixed_seed():
    u = np.linspace(-3.0, 2.0, 8)
    for spec in (spec_of("rand_k", 8, 3), spec_of("int8_quant", 8)):
        a = compress(spec, u, CounterStream(111)).payload
        b = compress(spec, u, CounterStream(111)).payload
        assert np.array_equal(a, b)


# --- exhaustive enumeration oracle ----------------------------------------

def test_exhaustive_examples():
    mean, err = exhaustive_randk_moments(2, 1, np.array([4.0, 0.0]))
    assert np.allclose(mean, [4.0, 0.0], atol=1e-15)
    assert err == pytest.approx(16.0, rel=1e-15)

    mean, err = exhaustive_randk_moments(5, 5, np.arange(5.0))
    assert np.allclose(mean, np.arange(5.0), atol=1e-15)
    assert err == pytest.approx(0.0, abs=1e-15)

    _, err = exhaustive_randk_moments(3, 2, np.ones(3))
    assert err == pytest.approx(1.5, rel=1e-15)


def test_exhaustive_matches_variance_formula_all_small_dims():
    rng = np.random.default_rng(8)
    for d in range(1, 9):
        u = rng.standard_normal(d)
        for k in range(1, d + 1):
            mean, err = exhaustive_randk_moments(d, k, u)
            assert np.allclose(mean, u, rtol=1e-12, atol=1e-13)
            want = (d / k - 1.0) * float(u @ u)
            assert err == pytest.approx(want, rel=1e-12, abs=1e-13)


def test_exhaustive_rejects_large_d():
    with pytest.raises(ValueError):
        exhaustive_randk_moments(11, 2, np.zeros(11))


# --- Monte Carlo moment checks (light; the full-size run is in acceptance) -

@pytest.mark.parametrize("kind,k", [("rand_k", 4), ("int8_quant", None)])
def test_mc_unbiased_and_variance_bounded(kind, k):
    d, draws = 12, 20000
    spec = spec_of(kind, d, k)
    u = np.random.default_rng(10).standard_normal(d) * 3.0
    sum_vec, sumsq_vec, err_total = kernels.mc_stats(
        kernels.KIND_CODES[kind], k or 0, u, derive_seed(20, 1), draws)
    mean = sum_vec / draws
    var = (sumsq_vec - sum_vec ** 2 / draws) / (draws - 1)
    se = np.sqrt(np.maximum(var, 0.0) / draws)
    assert np.all(np.abs(mean - u) <= 6.0 * se + 1e-12)
    bound = spec.alpha * float(u @ u)
    assert err_total / draws <= bound * 1.05


def test_mc_matches_exhaustive_small_case():
    d, k, draws = 6, 2, 40000
    u = np.linspace(-2.0, 3.0, d)
    _, exact_err = exhaustive_randk_moments(d, k, u)
    _, _, err_total = kernels.mc_stats(
        kernels.KIND_CODES["rand_k"], k, u, derive_seed(21, 0), draws)
    assert err_total / draws == pytest.approx(exact_err, rel=0.05)


# --- kernel path agrees with this reference bit-for-bit --------------------

@pytest.mark.parametrize("kind,k,d", [
    ("identity", None, 5), ("rand_k", 1, 5), ("rand_k", 3, 7),
    ("rand_k", 7, 7), ("int8_quant", None, 5), ("int8_quant", None, 64),
])
def test_kernel_compress_parity(kind, k, d):
    rng = np.random.default_rng(30)
    for trial in range(25):
        u = rng.standard_normal(d) * 10.0 ** int(rng.integers(-2, 3))
        seed = derive_seed(55, kind == "rand_k", trial)
        ref = compress(spec_of(kind, d, k), u, CounterStream(seed)).payload
        got = kernels.compress_one(kernels.KIND_CODES[kind], k or 0, u, seed)
        assert np.array_equal(ref, got)
