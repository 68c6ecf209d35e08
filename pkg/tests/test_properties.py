import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jpais.diagnostics import ratio_supremum
from jpais.feedback import _from_bits, _to_bits, dequantize, quantize
from jpais.linalg import solve_hermitian
from jpais.metrics import complexity_count, mutual_information, normalized_throughput, ALGORITHMS
from jpais.mmse import GPC, IPC, PowerAllocation, mmse_alloc_gpc, normalize, sphere_constrained_ls

finite = st.floats(-10, 10, allow_nan=False, width=64)
seeds = st.integers(0, 2**32 - 1)


def crand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 8), st.floats(1e-3, 1e3))
def test_normalize_hits_power_exactly(seed, n, P):
    a = crand(np.random.default_rng(seed), n)
    out = normalize(a, P)
    assert abs(np.vdot(out, out).real - P) <= 1e-12 * P
    # direction is kept
    assert abs(abs(np.vdot(out, a)) - np.linalg.norm(out) * np.linalg.norm(a)) <= 1e-9 * np.linalg.norm(a) * np.sqrt(P)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 10), st.floats(1e-6, 1.0))
def test_hermitian_solve_residual(seed, n, load):
    rng = np.random.default_rng(seed)
    X = crand(rng, n, n)
    A = X @ X.conj().T + load * np.eye(n)
    b = crand(rng, n, 2)
    x = solve_hermitian(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(x) + 1e-12


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 6), st.floats(0.1, 10.0))
def test_sphere_solution_feasible_and_no_worse_than_ridge(seed, n, P):
    rng = np.random.default_rng(seed)
    X = crand(rng, n, n + 1)
    R = X @ X.conj().T
    p = crand(rng, n)
    f = lambda a: np.vdot(a, R @ a).real - 2 * np.vdot(p, a).real
    a = sphere_constrained_ls(R, p, P)
    assert abs(np.vdot(a, a).real - P) <= 1e-12 * P
    ridge = mmse_alloc_gpc(R, p, 0.025, P)
    assert f(a) <= f(ridge) + 1e-9 * (1 + abs(f(ridge)))


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 4), st.integers(1, 8), st.sampled_from([GPC, IPC]))
def test_noiseless_feedback_error_below_half_step(seed, K, n_p, n_b, mode):
    rng = np.random.default_rng(seed)
    budgets = rng.uniform(0.1, 5.0, K)
    alloc = PowerAllocation(crand(rng, K, n_p), budgets, mode).normalized()
    back = dequantize(quantize(alloc, n_b), renormalize=False)
    rng_ = np.full(K, np.sqrt(budgets.sum())) if mode == GPC else np.sqrt(budgets)
    step = rng_[:, None] / 2**n_b
    assert np.all(np.abs(np.abs(back.a) - np.abs(alloc.a)) <= step / 2 * (1 + 1e-12))
    assert dequantize(quantize(alloc, n_b)).constraint_error() <= 1e-12


@given(st.integers(1, 12), st.lists(st.integers(0, 2**12 - 1), min_size=1, max_size=20))
def test_bit_serialization_roundtrip(n_b, values):
    codes = np.array(values, dtype=np.int64) % (2**n_b)
    bits = _to_bits(codes, n_b)
    assert len(bits) == n_b * len(codes)
    np.testing.assert_array_equal(_from_bits(bits, n_b), codes)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 3000))
def test_throughput_monotone_and_bounded(b1, b2, P):
    lo, hi = sorted((b1, b2))
    n_lo, n_hi = normalized_throughput(lo, P=P), normalized_throughput(hi, P=P)
    assert 0 <= n_hi <= n_lo <= 1


@given(st.floats(0, 1e6), st.floats(0, 1e6), st.integers(1, 5))
def test_mutual_information_monotone(s1, s2, n_p):
    lo, hi = sorted((s1, s2))
    assert 0 <= mutual_information(lo, n_p) <= mutual_information(hi, n_p)


@given(arrays(float, 20, elements=finite), arrays(float, 20, elements=st.floats(0.01, 10)),
       st.floats(1e-3, 1e3))
def test_ratio_supremum_scale_invariant(num, den, c):
    b, _ = ratio_supremum(num, den)
    assert np.isclose(ratio_supremum(c * num, c * den)[0], b, rtol=1e-10, atol=1e-12)


@given(st.sampled_from(ALGORITHMS), st.integers(1, 32), st.integers(2, 64), st.integers(1, 6), st.integers(0, 6))
def test_complexity_positive_and_grows_with_users(alg, K, N, L, n_r):
    if L >= N:
        return
    adds, mults = complexity_count(alg, K=K, N=N, L=L, n_r=n_r)
    adds2, mults2 = complexity_count(alg, K=K + 1, N=N, L=L, n_r=n_r)
    assert adds > 0 and mults > 0
    assert mults2 >= mults and adds2 >= adds
