import numpy as np
import pytest

from conftest import crandn
from jpais.adaptive_gpc import (
    NumericalBreakdown,
    allocation_regressor,
    cg_solve,
    gpc_alloc_update,
    gpc_channel_update,
    gpc_filter_update,
    gpc_run_packet,
    init_gpc,
    normalize_global,
    rls_gain,
)
from jpais.adaptive_ipc import (
    DISTRIBUTED,
    UPLINK,
    alloc_regressors,
    init_ipc,
    ipc_alloc_update,
    ipc_channel_update,
    ipc_filter_update,
    ipc_run_packet,
)
from jpais.config import SystemConfig
from jpais.linalg import solve_hermitian
from jpais.mmse import mmse_alloc_ipc
from jpais.sigmodel import PacketBatch, conv_matrix, equal_allocation, make_scenario, simulate_links


def setup(cfg, seed=0, n_sym=None, runs=1):
    scns, pks = [], []
    for s in range(runs):
        rng = np.random.default_rng(seed + s)
        scns.append(make_scenario(cfg, rng))
        pks.append(simulate_links(scns[-1], n_sym or cfg.P_packet, rng, fdT=cfg.fdT))
    return scns, PacketBatch.stack(pks)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- RLS filters -------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["gpc", "ipc-uplink", "ipc-distributed"])
def test_rls_filter_matches_direct_least_squares(kind):
    cfg = SystemConfig.from_snr(10.0, K=3, N=8, L=2, n_r=1, alpha=1.0)
    scns, batch = setup(cfg, n_sym=200)
    dim = cfg.n_p * scns[0].sigs.M
    n = 3 * dim + 5
    D, budgets = scns[0].sigs.D[None], scns[0].budgets[None]
    if kind == "gpc":
        st = init_gpc(D, budgets, cfg.n_p, 1.0, cfg.sigma2)
        update = gpc_filter_update
    else:
        mode = UPLINK if kind == "ipc-uplink" else DISTRIBUTED
        st = init_ipc(D, budgets, cfg.n_p, 1.0, cfg.sigma2, mode=mode)
        update = ipc_filter_update
    W0 = st.W[0].copy()
    a = equal_allocation(budgets[0], cfg.n_p)[None]
    R = st.delta * np.eye(dim, dtype=complex)
    P = st.delta * W0
    for i in range(n):
        r = batch.received_at(i, a)
        b = batch.symbols[:, i]
        update(st, r, b)
        R += np.outer(r[0], r[0].conj())
        P += np.outer(r[0], b[0].conj())
    W_ls = np.linalg.solve(R, P)
    assert rel(st.W[0], W_ls) <= 1e-6
    Phi = st.Phi[0] if kind != "ipc-distributed" else st.Phi[0, 1]
    assert rel(Phi, np.linalg.inv(R)) <= 1e-6


def test_zero_input_leaves_filter_unchanged():
    cfg = SystemConfig(K=2, N=8, L=2, n_r=1)
    scns, _ = setup(cfg, n_sym=5)
    st = init_gpc(scns[0].sigs.D[None], scns[0].budgets[None], 2, cfg.alpha, 1.0)
    W, Phi = st.W.copy(), st.Phi.copy()
    gpc_filter_update(st, np.zeros((1, 2 * scns[0].sigs.M)), np.zeros((1, 2)))
    np.testing.assert_array_equal(st.W, W)
    np.testing.assert_allclose(st.Phi, Phi / cfg.alpha)
    assert st.i == 1


def test_rls_gain_detects_breakdown():
    with pytest.raises(NumericalBreakdown):
        rls_gain(-np.eye(2)[None] * 10, np.ones((1, 2)), 1.0)


def test_shared_inverse_correlation_has_one_copy():
    D = np.stack([conv_matrix(np.full(16, 0.25), 3)] * 4)
    st = init_ipc(D, np.ones(4), 3, 0.998, 1.0)
    assert st.Phi.shape == (54, 54)
    assert st.Phi_a.shape == (4, 3, 3)
    assert init_ipc(D, np.ones(4), 3, 0.998, 1.0, mode=DISTRIBUTED).Phi.shape == (4, 54, 54)


# --- allocation ------------------------------------------------------------------

def frozen_gpc_statistics(cfg, n=300):
    scns, batch = setup(cfg, n_sym=n)
    res = gpc_run_packet(scns, batch, cfg)
    st = res.final
    A = st.R_a + st.lam * st.weight[..., None, None] * np.eye(st.R_a.shape[-1])
    return st, A[0], st.p_a[0]


@pytest.mark.parametrize("variant", ["restart", "persistent", "tracking"])
def test_cg_converges_to_gaussian_elimination(variant):
    cfg = SystemConfig.from_snr(12.0, K=4, N=8, L=2, n_r=1)
    st, A, p = frozen_gpc_statistics(cfg)
    exact = solve_hermitian(A, p)
    x, v, d = cg_solve(A[None], p[None], st.a_T, 3 * len(p))
    assert rel(x[0], exact) <= 1e-8
    # a continued run (carried direction and residual) reaches the same point
    x2, _, _ = cg_solve(A[None], p[None], x, 5, d=d, v_prev=v)
    assert rel(x2[0], exact) <= 1e-8


def test_cg_energy_error_decreases():
    rng = np.random.default_rng(0)
    X = crandn(rng, 10, 10)
    A = X @ X.conj().T + 0.1 * np.eye(10)
    p = crandn(rng, 10)
    exact = np.linalg.solve(A, p)
    a, errs = np.zeros(10, dtype=complex), []
    v, d = None, None
    for _ in range(10):
        a, v, d = cg_solve(A, p, a, 1, d=d, v_prev=v)
        e = a - exact
        errs.append(np.vdot(e, A @ e).real)
    assert all(e2 <= e1 * (1 + 1e-12) for e1, e2 in zip(errs, errs[1:]))


def test_curvature_cg_variant_moves_along_curvature():
    A = np.diag([1.0, 2.0]).astype(complex)
    a, _, _ = cg_solve(A, np.ones(2, dtype=complex), np.zeros(2, dtype=complex), 1, variant="curvature")
    step = 2.0 / 3.0
    np.testing.assert_allclose(a, step * A @ np.ones(2))


def test_normalization_is_identity_on_the_sphere(rng):
    a = crandn(rng, 2, 8, 3)
    P = np.array([5.0, 7.0])
    a = normalize_global(a, P)
    np.testing.assert_allclose(normalize_global(a, P), a, atol=1e-14)
    np.testing.assert_allclose(np.sum(np.abs(a) ** 2, axis=(-2, -1)), P, rtol=1e-14)


def test_headline_allocation_size():
    cfg = SystemConfig()
    scns, _ = setup(cfg, n_sym=3)
    st = init_gpc(scns[0].sigs.D[None], scns[0].budgets[None], cfg.n_p, cfg.alpha, cfg.sigma2)
    assert st.a_T.shape == (1, 24)


def test_unknown_cg_variant():
    with pytest.raises(ValueError):
        init_gpc(np.ones((1, 4, 2)), np.ones(1), 1, 0.9, 1.0, cg_variant="newton")


@pytest.mark.parametrize("algo", ["gpc", "ipc"])
def test_constraint_holds_after_every_symbol(algo):
    cfg = SystemConfig.from_snr(12.0, K=4, N=8, L=2, n_r=2, P_packet=300, N_tr=100)
    scns, batch = setup(cfg, runs=3)
    run = gpc_run_packet if algo == "gpc" else ipc_run_packet
    res = run(scns, batch, cfg, record=("a",))
    assert res.constraint_error <= 1e-12
    a = res.history["a"]
    if algo == "gpc":
        P = np.array([s.P_T for s in scns])[:, None]
        err = np.abs(np.sum(np.abs(a) ** 2, axis=(-2, -1)) - P) / P
    else:
        budgets = np.stack([s.budgets for s in scns])[:, None]
        err = np.abs(np.sum(np.abs(a) ** 2, axis=-1) - budgets) / budgets
    assert err.max() <= 1e-12


def test_ipc_single_hop_allocation_is_pinned():
    cfg = SystemConfig.from_snr(12.0, K=3, N=8, L=2, n_r=0, P_packet=150, N_tr=50)
    scns, batch = setup(cfg, runs=2)
    res = ipc_run_packet(scns, batch, cfg, record=("a",))
    budgets = np.stack([s.budgets for s in scns])
    mag = np.abs(res.history["a"][..., 0])
    np.testing.assert_allclose(mag, np.broadcast_to(np.sqrt(budgets)[:, None], mag.shape), rtol=1e-12)


def test_ipc_ridge_allocation_matches_the_mmse_solve():
    rng = np.random.default_rng(3)
    D = np.stack([conv_matrix(np.full(8, 8**-0.5), 3)] * 2)[None]
    st = init_ipc(D, np.array([[2.0, 3.0]]), 3, 0.99, 1.0, lam=0.025)
    us = crandn(rng, 40, 1, 2, 3)
    bs = crandn(rng, 40, 1, 2)
    R = np.zeros((2, 3, 3), dtype=complex)
    p = np.zeros((2, 3), dtype=complex)
    w = 0.0
    for _ in range(5):
        for u, b in zip(us, bs):
            ipc_alloc_update(st, u, b)
            R = 0.99 * R + u[0, :, :, None] * u[0, :, None, :].conj()
            p = 0.99 * p + u[0] * b[0, :, None]
            w = 0.99 * w + 1
    for k, P in enumerate([2.0, 3.0]):
        want = mmse_alloc_ipc(R[k], p[k], 0.025 * w, P)
        cos = abs(np.vdot(want, st.a[0, k])) / (np.linalg.norm(want) * np.linalg.norm(st.a[0, k]))
        assert 1 - cos <= 1e-4


def test_unknown_ipc_options():
    with pytest.raises(ValueError):
        init_ipc(np.ones((1, 4, 2)), np.ones(1), 1, 0.9, 1.0, mode="broadcast")
    with pytest.raises(ValueError):
        init_ipc(np.ones((1, 4, 2)), np.ones(1), 1, 0.9, 1.0, alloc_solver="qr")


# --- channel estimation -------------------------------------------------------------

@pytest.mark.parametrize("algo", ["gpc", "ipc"])
def test_noiseless_channel_recovery(algo):
    cfg = SystemConfig(K=1, N=8, L=1, n_r=1, sigma2=0.0, P_A=4.0)
    scns, batch = setup(cfg, seed=5, n_sym=60)
    scn = scns[0]
    D, budgets = scn.sigs.D[None], scn.budgets[None]
    if algo == "gpc":
        st = init_gpc(D, budgets, cfg.n_p, cfg.alpha, cfg.sigma2)
        update = gpc_channel_update
    else:
        st = init_ipc(D, budgets, cfg.n_p, cfg.alpha, cfg.sigma2)
        update = ipc_channel_update
    a = equal_allocation(budgets[0], cfg.n_p)[None]
    for i in range(50):
        update(st, batch.received_at(i, a), batch.symbols[:, i], a)
    err = np.abs(st.H[0] - scn.ch.h_dest)
    assert err.max() <= 1e-3


@pytest.mark.parametrize("algo", ["gpc", "ipc"])
def test_zero_allocation_leaves_channel_statistics(algo, small_scn):
    D, budgets = small_scn.sigs.D[None], small_scn.budgets[None]
    st = (init_gpc if algo == "gpc" else init_ipc)(D, budgets, 2, 0.998, 1.0)
    before = {k: getattr(st, k).copy() for k in ("H",)}
    update = gpc_channel_update if algo == "gpc" else ipc_channel_update
    update(st, np.ones((1, 2 * small_scn.sigs.M)), np.ones((1, 3)), np.zeros((1, 3, 2)))
    np.testing.assert_array_equal(st.H, before["H"])


# --- packets -------------------------------------------------------------------------

def test_single_user_gpc_and_ipc_coincide():
    cfg = SystemConfig.from_snr(10.0, K=1, N=8, L=2, n_r=2, P_packet=400, N_tr=100)
    scns, batch = setup(cfg, seed=9)
    g = gpc_run_packet(scns, batch, cfg, n_cg=cfg.n_p + 2, cg_variant="restart", record=("a", "W"))
    i = ipc_run_packet(scns, batch, cfg, record=("a", "W"))
    np.testing.assert_allclose(g.history["W"], i.history["W"], atol=1e-8)
    np.testing.assert_allclose(g.history["a"], i.history["a"], atol=1e-8)


def test_noiseless_single_user_packet_is_error_free():
    cfg = SystemConfig(K=1, N=8, L=1, n_r=1, sigma2=0.0, P_A=1.0, P_packet=300, N_tr=100)
    scns, batch = setup(cfg, seed=2)
    for run in (gpc_run_packet, ipc_run_packet):
        res = run(scns, batch, cfg)
        assert not np.any(res.bits[:, cfg.N_tr:] != batch.bits[:, cfg.N_tr:])


def test_decision_directed_filters_stay_bounded():
    cfg = SystemConfig.from_snr(10.0, K=4, N=8, L=2, n_r=1, P_packet=600, N_tr=200)
    scns, batch = setup(cfg, runs=3)
    res = gpc_run_packet(scns, batch, cfg, record=("W",))
    norms = np.linalg.norm(res.history["W"], axis=(-2, -1))
    assert np.all(np.isfinite(norms))
    assert norms[:, cfg.N_tr:].max() <= 3 * norms[:, cfg.N_tr - 1].max()


def test_frozen_allocation_is_the_equal_power_baseline():
    cfg = SystemConfig.from_snr(10.0, K=3, N=8, L=2, n_r=1, P_packet=200, N_tr=100)
    scns, batch = setup(cfg, runs=2)
    res = gpc_run_packet(scns, batch, cfg, update_alloc=False, update_channel=False)
    eq = np.stack([equal_allocation(s.budgets, 2) for s in scns])
    np.testing.assert_array_equal(res.alloc, np.broadcast_to(eq[:, None], res.alloc.shape))


def test_packet_feedback_keeps_the_transmitted_allocation():
    cfg = SystemConfig.from_snr(10.0, K=3, N=8, L=2, n_r=1, P_packet=200, N_tr=100)
    scns, batch = setup(cfg)
    res = gpc_run_packet(scns, batch, cfg, feedback="packet")
    assert np.all(res.alloc == res.alloc[:, :1])
    assert not np.allclose(res.final.a, res.alloc[:, 0])


def test_regressors_have_the_documented_shapes(small_scn):
    D, budgets = small_scn.sigs.D[None], small_scn.budgets[None]
    st = init_gpc(D, budgets, 2, 0.998, 1.0)
    assert allocation_regressor(st, np.ones((1, 3))).shape == (1, 6, 3)
    sti = init_ipc(D, budgets, 2, 0.998, 1.0)
    assert alloc_regressors(sti, np.ones((1, 3))).shape == (1, 3, 2)
    gpc_alloc_update(st, np.zeros((1, 6, 3)), np.ones((1, 3)))
    np.testing.assert_allclose(st.a[0], equal_allocation(budgets[0], 2), rtol=1e-14)
