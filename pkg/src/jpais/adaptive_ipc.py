"""Adaptive JPAIS under individual power constraints.

Each user ``k`` owns an RLS receive filter ``w_k``, an RLS estimate of its
allocation ``a_k`` (rescaled onto ``||a_k||^2 = P_{A,k}`` after every
update) and an RLS estimate of its own link taps. In uplink mode the
inverse correlation of ``r`` is shared by all users; in distributed mode
every user keeps its own copy.

User ``k``'s channel statistics are per hop: ``P_h[..., k, j]`` accumulates
``D_k^H r_j conj(a_{k,j} b_k)`` and ``R_h[..., k, j]`` the regressor power,
so the ``(n_p L)``-dimensional normal equations split into ``n_p`` blocks
``R_h[k, j] D_k^H D_k``.
"""

from dataclasses import dataclass

import numpy as np

from .adaptive_gpc import (
    NumericalBreakdown,
    initial_delta,
    link_signatures,
    matched_filters,
    rls_gain,
    rls_inverse_update,
    run_packet,
)

UPLINK = "uplink"
DISTRIBUTED = "distributed"


@dataclass
class IpcState:
    """Recursive state of one or more JPAIS-IPC receivers (all users)."""

    Phi: np.ndarray  # (..., D, D) shared or (..., K, D, D) per user
    W: np.ndarray  # (..., D, K)
    a: np.ndarray  # (..., K, n_p)
    budgets: np.ndarray  # (..., K)
    Phi_a: np.ndarray  # (..., K, n_p, n_p)
    R_a: np.ndarray  # (..., K, n_p, n_p)
    p_a: np.ndarray  # (..., K, n_p)
    weight: np.ndarray  # (...,)
    P_h: np.ndarray  # (..., K, n_p, L)
    R_h: np.ndarray  # (..., K, n_p)
    H: np.ndarray  # (..., K, n_p, L)
    D: np.ndarray  # (..., K, M, L)
    DtD_inv: np.ndarray  # (..., K, L, L)
    alpha: float
    mode: str = UPLINK
    lam: float = 0.0
    alloc_solver: str = "ridge"
    i: int = 0
    delta: float = 1e-3

    @property
    def K(self):
        return self.a.shape[-2]

    @property
    def n_p(self):
        return self.a.shape[-1]

    @property
    def M(self):
        return self.D.shape[-2]


def init_ipc(D, budgets, n_p, alpha, sigma2, mode=UPLINK, lam=0.0, alloc_solver="ridge"):
    """Initial state mirroring :func:`~jpais.adaptive_gpc.init_gpc` per user.

    ``alloc_solver="rls"`` runs the inversion-lemma recursion for every
    ``a_k``; ``"ridge"`` solves the exponentially weighted normal equations
    plus ``lam`` times the window weight, which stays well posed although
    each user's regressor spans a single direction.
    """
    if mode not in (UPLINK, DISTRIBUTED):
        raise ValueError(f"unknown mode {mode!r}")
    if alloc_solver not in ("ridge", "rls"):
        raise ValueError(f"unknown allocation solver {alloc_solver!r}")
    D = np.asarray(D, dtype=complex)
    budgets = np.asarray(budgets, dtype=float)
    lead, (K, M, L) = D.shape[:-3], D.shape[-3:]
    dim = n_p * M
    delta = initial_delta(sigma2)
    phi_shape = lead + ((dim, dim) if mode == UPLINK else (K, dim, dim))
    return IpcState(
        Phi=np.broadcast_to(np.eye(dim, dtype=complex) / delta, phi_shape).copy(),
        W=np.broadcast_to(matched_filters(D, n_p), lead + (dim, K)).copy(),
        a=np.broadcast_to(np.sqrt(budgets / n_p)[..., None], lead + (K, n_p)).astype(complex),
        budgets=budgets,
        Phi_a=np.broadcast_to(np.eye(n_p, dtype=complex) / delta, lead + (K, n_p, n_p)).copy(),
        R_a=np.zeros(lead + (K, n_p, n_p), dtype=complex),
        p_a=np.zeros(lead + (K, n_p), dtype=complex),
        weight=np.zeros(lead),
        P_h=np.zeros(lead + (K, n_p, L), dtype=complex),
        R_h=np.full(lead + (K, n_p), delta),
        H=np.zeros(lead + (K, n_p, L), dtype=complex),
        D=D,
        DtD_inv=np.linalg.inv(np.swapaxes(D, -1, -2).conj() @ D),
        alpha=alpha,
        mode=mode,
        lam=lam,
        alloc_solver=alloc_solver,
        delta=delta,
    )


def ipc_output(st, r):
    """Outputs ``w_k^H r`` of all users, shape ``(..., K)``."""
    return np.einsum("...dk,...d->...k", st.W.conj(), r)


def ipc_filter_update(st, r, b_ref):
    """Per-user RLS filter updates with errors ``b_k - w_k^H r``."""
    r = np.asarray(r, dtype=complex)
    x = r if st.mode == UPLINK else np.broadcast_to(r[..., None, :], st.Phi.shape[:-1])
    try:
        k, Px = rls_gain(st.Phi, x, st.alpha)
    except NumericalBreakdown:
        st.Phi = np.broadcast_to(np.eye(st.Phi.shape[-1]) / st.delta, st.Phi.shape).astype(complex)
        k, Px = rls_gain(st.Phi, x, st.alpha)
    xi = b_ref - ipc_output(st, r)
    if st.mode == UPLINK:
        st.W = st.W + k[..., :, None] * xi.conj()[..., None, :]
    else:
        st.W = st.W + np.swapaxes(k, -1, -2) * xi.conj()[..., None, :]
    st.Phi = rls_inverse_update(st.Phi, k, Px, st.alpha)
    st.i += 1
    return st


def alloc_regressors(st, b_ref):
    """``u_k = B_k^H H_k^H C_k^H w_k`` for every user, shape ``(..., K, n_p)``."""
    g = link_signatures(st.D, st.H)  # (..., K, n_p, M)
    Wb = st.W.reshape(st.W.shape[:-2] + (st.n_p, st.M, st.K))
    own = np.einsum("...kjm,...jmk->...kj", g.conj(), Wb)
    return b_ref.conj()[..., :, None] * own


def normalize_individual(a, budgets):
    """Rescale every user's row onto ``||a_k||^2 = P_{A,k}``."""
    n2 = np.sum(np.abs(a) ** 2, axis=-1)
    if np.any(n2 == 0):
        raise ValueError("cannot normalize a zero allocation")
    a = a * np.sqrt(budgets / n2)[..., None]
    return a * np.sqrt(budgets / np.sum(np.abs(a) ** 2, axis=-1))[..., None]


def ipc_alloc_update(st, u, b_ref):
    """Update every ``a_k`` from regressor ``u_k``, then rescale per user.

    The model output is ``u_k^H a_k``; users whose regressor vanishes keep
    their allocation.
    """
    active = np.any(u != 0, axis=-1)
    if st.alloc_solver == "ridge":
        st.R_a = st.alpha * st.R_a + u[..., :, None] * u.conj()[..., None, :]
        st.p_a = st.alpha * st.p_a + u * b_ref[..., None]
        st.weight = st.alpha * st.weight + 1.0
        known = np.any(st.p_a != 0, axis=-1)
        if not np.any(known):
            return st
        A = st.R_a + (st.lam * st.weight)[..., None, None, None] * np.eye(st.n_p)
        A = np.where(known[..., None, None], A, np.eye(st.n_p))
        a = np.linalg.solve(A, st.p_a[..., None])[..., 0]
        a = np.where((known & np.any(a != 0, axis=-1))[..., None], a, st.a)
        st.a = normalize_individual(a, st.budgets)
        return st
    k, Pu = rls_gain(st.Phi_a, u, st.alpha)
    xi = b_ref - np.einsum("...j,...j->...", u.conj(), st.a)
    a = st.a + k * xi[..., None]
    Phi_a = rls_inverse_update(st.Phi_a, k, Pu, st.alpha)
    st.a = normalize_individual(np.where(active[..., None], a, st.a), st.budgets)
    st.Phi_a = np.where(active[..., None, None], Phi_a, st.Phi_a)
    return st


def ipc_channel_update(st, r, b_ref, alloc):
    """Per-user, per-hop RLS tap estimation with structural projection."""
    u = alloc * b_ref[..., :, None]  # (..., K, n_p)
    active = u != 0
    if not np.any(active):
        return st
    rj = r.reshape(r.shape[:-1] + (st.n_p, st.M))
    Dr = np.einsum("...kml,...jm->...kjl", st.D.conj(), rj)
    alpha = np.where(active, st.alpha, 1.0)
    P_h = alpha[..., None] * st.P_h + Dr * u.conj()[..., None]
    R_h = alpha * st.R_h + np.abs(u) ** 2
    H = np.einsum("...kab,...kjb->...kja", st.DtD_inv, P_h / R_h[..., None])
    if not np.all(np.isfinite(H)):
        raise NumericalBreakdown("channel estimate is not finite")
    st.P_h, st.R_h, st.H = P_h, R_h, H
    return st


def ipc_run_packet(scenarios, batch, cfg, mode=UPLINK, state=None, lam=None, alloc_solver="ridge", **kw):
    """Run JPAIS-IPC for all users over stacked packets.

    Each user's recursions read only ``r``, its own code, channel estimate
    and reference symbols; the shared inverse correlation in uplink mode
    is the single cross-user quantity.
    """
    D = np.stack([s.sigs.D for s in scenarios])
    budgets = np.stack([s.budgets for s in scenarios])
    lam = cfg.lam if lam is None else lam
    st = state if state is not None else init_ipc(
        D, budgets, cfg.n_p, cfg.alpha, cfg.sigma2, mode=mode, lam=lam, alloc_solver=alloc_solver
    )
    return run_packet(
        st,
        batch,
        cfg.N_tr,
        filter_update=ipc_filter_update,
        alloc_update=lambda s, r, b: ipc_alloc_update(s, alloc_regressors(s, b), b),
        channel_update=ipc_channel_update,
        output=ipc_output,
        constraint=lambda s: np.max(
            np.abs(np.sum(np.abs(s.a) ** 2, axis=-1) - s.budgets) / s.budgets
        ),
        **kw,
    )
