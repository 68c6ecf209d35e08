"""Adaptive JPAIS under a global power constraint.

Per symbol the destination runs an RLS update of the receive filter matrix,
a recursive estimate of the allocation normal equations followed by
conjugate-gradient steps and a rescale onto ``||a_T||^2 = P_T``, and an RLS
channel estimator for all users jointly. Every array may carry leading
batch axes so that independent runs advance in lockstep.

Channel statistics are kept per hop: ``P_H[..., k, j]`` accumulates
``D_k^H r_j u_j^H`` and ``R_H_inv[..., j]`` is the inverse correlation of
``u_j = (a_{k,j} b_k)_k``. The tap estimate of link ``(k, j)`` is the least
squares fit of user ``k``'s column, projected onto the span of ``D_k``.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import qpsk_slice, qpsk_to_bits

#: Default regularization of the initial inverse correlation, relative to sigma^2.
DELTA = 1e-3


class NumericalBreakdown(ArithmeticError):
    """An RLS recursion lost positive definiteness."""


def initial_delta(sigma2):
    return DELTA * sigma2 if sigma2 > 0 else 1e-6


def matched_filters(D, n_p):
    """Code-matched initial filters ``(..., n_p M, K)``: the code on every hop."""
    codes = D[..., :, 0]  # (..., K, M)
    W = np.concatenate([np.swapaxes(codes, -1, -2)] * n_p, axis=-2)
    return W.astype(complex) / np.sqrt(n_p)


def rls_gain(Phi, x, alpha):
    """Gain ``k = Phi x / (alpha + x^H Phi x)`` and ``Phi x``.

    Raises :class:`NumericalBreakdown` when the denominator is not positive.
    """
    Px = np.einsum("...ab,...b->...a", Phi, x)
    den = alpha + np.einsum("...a,...a->...", x.conj(), Px).real
    if np.any(~np.isfinite(den)) or np.any(den <= 0):
        raise NumericalBreakdown("RLS denominator is not positive")
    return Px / den[..., None], Px


def rls_inverse_update(Phi, k, Px, alpha):
    """``Phi <- (Phi - k (Phi x)^H) / alpha``, kept Hermitian."""
    Phi = (Phi - k[..., :, None] * Px.conj()[..., None, :]) / np.asarray(alpha)[..., None, None]
    return 0.5 * (Phi + np.swapaxes(Phi, -1, -2).conj())


def hop_estimates(P_H, R_H_inv, DtD_inv):
    """Structured tap estimates ``(..., K, n_p, L)`` from joint per-hop statistics."""
    # column k of G_j = P_j R_j^{-1}, seen through D_k^H
    cols = np.einsum("...kjlq,...jqk->...kjl", P_H, R_H_inv)
    return np.einsum("...kab,...kjb->...kja", DtD_inv, cols)


def link_signatures(D, H):
    """Estimated link waveforms ``g[..., k, j] = D_k h_{k,j}`` of shape ``(..., K, n_p, M)``."""
    return np.einsum("...kml,...kjl->...kjm", D, H)


@dataclass
class GpcState:
    """Recursive state of one or more JPAIS-GPC receivers.

    Shapes use ``D = n_p M`` and ``Kp = K n_p``; every field may carry the
    same leading batch axes.
    """

    Phi: np.ndarray  # (..., D, D)
    W: np.ndarray  # (..., D, K)
    a: np.ndarray  # (..., K, n_p)
    P_T: np.ndarray  # (...,)
    R_a: np.ndarray  # (..., Kp, Kp)
    p_a: np.ndarray  # (..., Kp)
    weight: np.ndarray  # (...,) effective window sum of the allocation statistics
    P_H: np.ndarray  # (..., K, n_p, L, K)
    R_H_inv: np.ndarray  # (..., n_p, K, K)
    H: np.ndarray  # (..., K, n_p, L)
    D: np.ndarray  # (..., K, M, L)
    DtD_inv: np.ndarray  # (..., K, L, L)
    alpha: float
    lam: float = 0.0
    n_cg: int = 1
    cg_variant: str = "tracking"
    cg_x: np.ndarray = None  # unnormalized iterate, residual and direction carried across symbols
    cg_v: np.ndarray = None
    cg_d: np.ndarray = None
    i: int = 0
    delta: float = field(default=DELTA)

    @property
    def K(self):
        return self.a.shape[-2]

    @property
    def n_p(self):
        return self.a.shape[-1]

    @property
    def M(self):
        return self.D.shape[-2]

    @property
    def a_T(self):
        return self.a.reshape(self.a.shape[:-2] + (-1,))


def init_gpc(D, budgets, n_p, alpha, sigma2, lam=0.0, n_cg=1, cg_variant="tracking"):
    """Initial state: large inverse correlation, code-matched filters, equal power.

    Parameters
    ----------
    D : ndarray, shape (..., K, M, L)
        Convolution matrices of the users' codes.
    budgets : ndarray, shape (..., K)
    cg_variant : {"tracking", "persistent", "restart", "curvature"}
        ``"persistent"`` carries the search direction from symbol to symbol
        with a Polak-Ribiere update; ``"tracking"`` does the same on an
        unnormalized iterate and only rescales the published allocation;
        ``"restart"`` starts every symbol from the residual; ``"curvature"``
        restarts and moves along ``R_a d``.
    """
    if cg_variant not in ("persistent", "tracking", "restart", "curvature"):
        raise ValueError(f"unknown CG variant {cg_variant!r}")
    D = np.asarray(D, dtype=complex)
    budgets = np.asarray(budgets, dtype=float)
    lead, (K, M, L) = D.shape[:-3], D.shape[-3:]
    dim = n_p * M
    delta = initial_delta(sigma2)
    eye = lambda n: np.broadcast_to(np.eye(n, dtype=complex), lead + (n, n)).copy()
    P_T = budgets.sum(axis=-1)
    a = np.broadcast_to(np.sqrt(budgets / n_p)[..., None], lead + (K, n_p)).astype(complex)
    return GpcState(
        Phi=eye(dim) / delta,
        W=np.broadcast_to(matched_filters(D, n_p), lead + (dim, K)).copy(),
        a=a,
        P_T=P_T,
        R_a=np.zeros(lead + (K * n_p, K * n_p), dtype=complex),
        p_a=np.zeros(lead + (K * n_p,), dtype=complex),
        weight=np.zeros(lead),
        P_H=np.zeros(lead + (K, n_p, L, K), dtype=complex),
        R_H_inv=np.broadcast_to(np.eye(K, dtype=complex) / delta, lead + (n_p, K, K)).copy(),
        H=np.zeros(lead + (K, n_p, L), dtype=complex),
        D=D,
        DtD_inv=np.linalg.inv(np.swapaxes(D, -1, -2).conj() @ D),
        alpha=alpha,
        lam=lam,
        n_cg=n_cg,
        cg_variant=cg_variant,
        delta=delta,
    )


def gpc_output(st, r):
    """Filter outputs ``W^H r`` of shape ``(..., K)``."""
    return np.einsum("...dk,...d->...k", st.W.conj(), r)


def gpc_filter_update(st, r, b_ref):
    """RLS update of ``W`` with a-priori error ``b_ref - W^H r``.

    On a non-positive gain denominator the inverse correlation of the
    affected state is restarted and the update retried.
    """
    r = np.asarray(r, dtype=complex)
    try:
        k, Px = rls_gain(st.Phi, r, st.alpha)
    except NumericalBreakdown:
        st.Phi = np.broadcast_to(np.eye(st.Phi.shape[-1]) / st.delta, st.Phi.shape).astype(complex)
        k, Px = rls_gain(st.Phi, r, st.alpha)
    xi = b_ref - gpc_output(st, r)
    st.W = st.W + k[..., :, None] * xi.conj()[..., None, :]
    st.Phi = rls_inverse_update(st.Phi, k, Px, st.alpha)
    st.i += 1
    return st


def allocation_regressor(st, b_ref):
    """``U_T = B_T^H H_T^H C_T^H W`` of shape ``(..., K n_p, K)``."""
    g = link_signatures(st.D, st.H)
    Wb = st.W.reshape(st.W.shape[:-2] + (st.n_p, st.M, st.K))
    GW = np.einsum("...kjm,...jmq->...kjq", g.conj(), Wb)
    U = b_ref.conj()[..., :, None, None] * GW
    return U.reshape(U.shape[:-3] + (st.K * st.n_p, st.K))


def cg_solve(A, p, a, n_iter, variant="restart", tol=0.0, d=None, v_prev=None):
    """Conjugate-gradient iterations on ``A a = p`` starting from ``a``.

    Works on stacked systems; a system whose direction has no curvature
    (``d^H A d = 0``) keeps its current iterate. ``variant="curvature"`` moves
    the iterate along ``A d`` instead of ``d``. A previous direction ``d``
    and residual ``v_prev`` continue an earlier run with a Polak-Ribiere
    restart of the direction.

    Returns
    -------
    a, v, d : ndarray
        Iterate, its residual and the next search direction.
    """
    a = a.copy()
    v = p - np.einsum("...ab,...b->...a", A, a)
    vv = np.einsum("...a,...a->...", v.conj(), v).real
    if d is None:
        d = v.copy()
    else:
        prev = np.einsum("...a,...a->...", v_prev.conj(), v_prev).real
        beta = np.einsum("...a,...a->...", (v - v_prev).conj(), v).real
        beta = np.maximum(np.where(prev > 0, beta / np.where(prev > 0, prev, 1.0), 0.0), 0.0)
        d = v + beta[..., None] * d
    for _ in range(n_iter):
        Ad = np.einsum("...ab,...b->...a", A, d)
        curv = np.einsum("...a,...a->...", d.conj(), Ad).real
        live = (curv > 0) & (vv > tol)
        if not np.any(live):
            break
        num = np.einsum("...a,...a->...", d.conj(), v).real
        step = np.where(live, num / np.where(live, curv, 1.0), 0.0)[..., None]
        a = a + step * (Ad if variant == "curvature" else d)
        v = v - step * Ad
        vv_new = np.einsum("...a,...a->...", v.conj(), v).real
        beta = np.where(live, vv_new / np.where(vv > 0, vv, 1.0), 0.0)[..., None]
        d = v + beta * d
        vv = vv_new
    return a, v, d


def normalize_global(a, P_T):
    """Rescale ``a`` with trailing axes ``(K, n_p)`` to ``||a||^2 = P_T``."""
    n2 = np.sum(np.abs(a) ** 2, axis=(-2, -1))
    if np.any(n2 == 0):
        raise ValueError("cannot normalize a zero allocation")
    a = a * np.sqrt(P_T / n2)[..., None, None]
    return a * np.sqrt(P_T / np.sum(np.abs(a) ** 2, axis=(-2, -1)))[..., None, None]


def gpc_alloc_update(st, U_T, b):
    """Accumulate allocation statistics, take CG steps and renormalize."""
    st.R_a = st.alpha * st.R_a + U_T @ np.swapaxes(U_T, -1, -2).conj()
    st.p_a = st.alpha * st.p_a + np.einsum("...ak,...k->...a", U_T, b)
    st.weight = st.alpha * st.weight + 1.0
    A = st.R_a
    if st.lam:
        A = A + (st.lam * st.weight)[..., None, None] * np.eye(A.shape[-1])
    if st.cg_variant == "tracking":
        x = st.a_T if st.cg_x is None else st.cg_x
        x, v, d = cg_solve(A, st.p_a, x, st.n_cg, d=st.cg_d, v_prev=st.cg_v)
        known = np.any(st.p_a != 0, axis=-1) & np.any(x != 0, axis=-1)
        st.cg_x, st.cg_v, st.cg_d = x, v, d
        a = np.where(known[..., None], x, st.a_T)
        st.a = normalize_global(a.reshape(st.a.shape), st.P_T)
        return st
    if st.cg_variant == "persistent":
        a, v, d = cg_solve(A, st.p_a, st.a_T, st.n_cg, d=st.cg_d, v_prev=st.cg_v)
    else:
        a, v, d = cg_solve(A, st.p_a, st.a_T, st.n_cg, st.cg_variant)
    # without a cross-correlation estimate the normal equations carry no information
    known = np.any(st.p_a != 0, axis=-1) & np.any(a != 0, axis=-1)
    a = np.where(known[..., None], a, st.a_T)
    st.a = normalize_global(a.reshape(st.a.shape), st.P_T)
    if st.cg_variant == "persistent":
        # the rescale moves the iterate, so the carried residual is recomputed
        st.cg_v = st.p_a - np.einsum("...ab,...b->...a", A, st.a_T)
        st.cg_d = np.where(known[..., None], d, st.cg_v)
    return st


def hop_regressors(alloc, b_ref):
    """``u[..., j, k] = a_{k,j} b_k``: the symbols as sent on each hop."""
    return np.swapaxes(alloc * b_ref[..., :, None], -1, -2)


def gpc_channel_update(st, r, b_ref, alloc):
    """RLS update of the joint per-hop channel statistics and tap estimates.

    ``alloc`` is the allocation actually used by the transmitters for this
    symbol. Hops whose regressor vanishes are left untouched.
    """
    u = hop_regressors(alloc, b_ref)  # (..., n_p, K)
    active = np.any(u != 0, axis=-1)  # (..., n_p)
    if not np.any(active):
        return st
    rj = r.reshape(r.shape[:-1] + (st.n_p, st.M))
    Dr = np.einsum("...kml,...jm->...kjl", st.D.conj(), rj)
    alpha = np.where(active, st.alpha, 1.0)
    upd = np.einsum("...kjl,...jq->...kjlq", Dr, u.conj())
    P_H = alpha[..., None, :, None, None] * st.P_H + upd
    k, Pu = rls_gain(st.R_H_inv, u, alpha)
    R_new = rls_inverse_update(st.R_H_inv, k, Pu, alpha)
    R_H_inv = np.where(active[..., None, None], R_new, st.R_H_inv)
    H = hop_estimates(P_H, R_H_inv, st.DtD_inv)
    if not np.all(np.isfinite(H)):
        raise NumericalBreakdown("channel estimate is not finite")
    st.P_H, st.R_H_inv, st.H = P_H, R_H_inv, H
    return st


@dataclass
class PacketResult:
    """Per-symbol outcome of an adaptive packet.

    ``bits`` are the detected bits ``(..., n_sym, K, 2)``; ``alloc`` holds
    the transmitted allocation per symbol and ``final`` the recursive state
    after the last symbol, whose allocation is what gets fed back.
    """

    bits: np.ndarray
    outputs: np.ndarray
    alloc: np.ndarray
    final: object
    constraint_error: float = 0.0
    history: dict = field(default_factory=dict)


def run_packet(st, batch, n_tr, feedback="instant", update_alloc=True, tx_alloc=None,
               update_filter=True, update_channel=True, alloc_update=None, channel_update=None,
               filter_update=None, output=None, constraint=None, record=()):
    """Drive a recursive receiver through a stacked packet.

    Parameters
    ----------
    st : GpcState or IpcState
        Batched state matching ``batch``.
    batch : PacketBatch
    n_tr : int
        Training symbols; afterwards decisions are the reference.
    feedback : {"instant", "packet"}
        ``"instant"`` lets the transmitters use the latest estimate for the
        next symbol; ``"packet"`` keeps ``tx_alloc`` (default: the initial
        estimate) for the whole packet.
    update_alloc : bool
        ``False`` freezes the allocation at its initial value (CIS).
    record : iterable of str
        Per-symbol quantities to keep: ``"a"`` (estimate), ``"W"``.
    """
    filter_update = filter_update or gpc_filter_update
    alloc_update = alloc_update or (lambda s, r, b: gpc_alloc_update(s, allocation_regressor(s, b), b))
    channel_update = channel_update or gpc_channel_update
    output = output or gpc_output
    constraint = constraint or (lambda s: np.max(np.abs(np.sum(np.abs(s.a) ** 2, axis=(-2, -1)) - s.P_T) / s.P_T))
    n_sym = batch.n_sym
    tx = st.a.copy() if tx_alloc is None else np.asarray(tx_alloc, dtype=complex).copy()
    outputs = np.empty(batch.noise.shape[:1] + (n_sym, st.K), dtype=complex)
    alloc_tx = np.empty(batch.noise.shape[:1] + (n_sym,) + st.a.shape[-2:], dtype=complex)
    hist = {name: [] for name in record}
    worst = 0.0
    for i in range(n_sym):
        r = batch.received_at(i, tx)
        y = output(st, r)
        outputs[:, i] = y
        alloc_tx[:, i] = tx
        b_ref = batch.symbols[:, i] if i < n_tr else qpsk_slice(y)
        if update_filter:
            filter_update(st, r, b_ref)
        else:
            st.i += 1
        if update_alloc:
            alloc_update(st, r, b_ref)
            worst = max(worst, float(constraint(st)))
        if update_channel:
            channel_update(st, r, b_ref, tx)
        if update_alloc and feedback == "instant":
            tx = st.a.copy()
        for name in record:
            hist[name].append(getattr(st, name).copy())
    return PacketResult(
        bits=qpsk_to_bits(outputs),
        outputs=outputs,
        alloc=alloc_tx,
        final=st,
        constraint_error=worst,
        history={k: np.stack(v, axis=1) for k, v in hist.items()},
    )


def gpc_run_packet(scenarios, batch, cfg, feedback="instant", n_cg=1, cg_variant="tracking", lam=None,
                   state=None, **kw):
    """Run JPAIS-GPC over stacked packets of the given scenarios.

    ``lam`` is the ridge of the allocation normal equations on the scale of
    one symbol's statistics; it defaults to ``cfg.lam``. Passing ``state``
    continues from a previous packet.
    """
    if state is not None:
        return run_packet(state, batch, cfg.N_tr, feedback=feedback, **kw)
    D = np.stack([s.sigs.D for s in scenarios])
    budgets = np.stack([s.budgets for s in scenarios])
    st = init_gpc(D, budgets, cfg.n_p, cfg.alpha, cfg.sigma2,
                  lam=cfg.lam if lam is None else lam, n_cg=n_cg, cg_variant=cg_variant)
    return run_packet(st, batch, cfg.N_tr, feedback=feedback, **kw)
