"""Clairvoyant constrained MMSE designs (JPAIS-GPC-MMSE, JPAIS-IPC-MMSE).

Receive filters and power allocations are computed in alternation from
exact second-order statistics of the destination signal, provided by a
:class:`~jpais.sigmodel.LinkResponse`. The Lagrange multiplier is a fixed
ridge ``lam`` and the power constraint is enforced by rescaling.
"""

from dataclasses import dataclass

import numpy as np

from scipy.optimize import brentq

from .linalg import solve_hermitian, symmetrize
from .sigmodel import equal_allocation, link_response

GPC = "GPC"
IPC = "IPC"


@dataclass
class PowerAllocation:
    """Amplitudes ``a[k, j]`` of user ``k`` on hop ``j``.

    ``mode`` says which constraint applies: ``GPC`` holds
    ``||a_T||^2 = P_T``, ``IPC`` holds ``||a_k||^2 = budgets[k]`` per user.
    """

    a: np.ndarray
    budgets: np.ndarray
    mode: str = IPC

    @property
    def a_T(self):
        return self.a.reshape(-1)

    @property
    def P_T(self):
        return float(np.sum(self.budgets))

    def constraint_error(self):
        """Largest relative violation of the active power constraint."""
        if self.mode == GPC:
            return abs(np.vdot(self.a_T, self.a_T).real - self.P_T) / self.P_T
        per_user = np.sum(np.abs(self.a) ** 2, axis=1)
        return float(np.max(np.abs(per_user - self.budgets) / self.budgets))

    def normalized(self):
        """Rescale onto the constraint set."""
        if self.mode == GPC:
            a = normalize(self.a_T, self.P_T).reshape(self.a.shape)
        else:
            a = np.stack([normalize(ak, pk) for ak, pk in zip(self.a, self.budgets)])
        return PowerAllocation(a, self.budgets, self.mode)

    @classmethod
    def equal(cls, budgets, n_p, mode=IPC):
        return cls(equal_allocation(budgets, n_p), np.asarray(budgets, dtype=float), mode)


@dataclass
class ReceiverState:
    """Receive filter matrix ``W`` (one column per user) and per-user MSE."""

    W: np.ndarray
    mse: np.ndarray


def normalize(a, P):
    """Scale ``a`` to squared norm ``P`` exactly."""
    a = np.asarray(a, dtype=complex)
    n = np.sqrt(np.vdot(a, a).real)
    if n == 0:
        raise ValueError("cannot normalize a zero allocation")
    out = a * (np.sqrt(P) / n)
    # one refinement pass keeps |‖a‖^2 - P| at the rounding floor
    return out * np.sqrt(P / np.vdot(out, out).real)


def mmse_filter_gpc(R, P_CH):
    """``W = R^{-1} P_CH``; R must be Hermitian positive definite."""
    R = np.asarray(R, dtype=complex)
    if np.min(np.linalg.eigvalsh(symmetrize(R))) <= 0:
        raise np.linalg.LinAlgError("covariance matrix is not positive definite")
    return solve_hermitian(R, P_CH)


def mmse_filter_ipc(R, p_k):
    """Single-user filter ``w_k = R^{-1} p_k``."""
    return mmse_filter_gpc(R, np.asarray(p_k)[:, None])[:, 0]


def mmse_alloc_gpc(R_a, p_a, lam, P_T):
    """Solve ``(R_a + lam I) a = p_a`` and rescale to ``||a||^2 = P_T``."""
    p_a = np.asarray(p_a, dtype=complex)
    if not np.any(p_a):
        raise ValueError("zero cross-correlation vector: constraint cannot be met by scaling")
    A = symmetrize(np.asarray(R_a, dtype=complex)) + lam * np.eye(len(p_a))
    return normalize(solve_hermitian(A, p_a), P_T)


def mmse_alloc_ipc(R_ak, p_ak, lam, P_A):
    """Per-user allocation ``(R_ak + lam I)^{-1} p_ak`` rescaled to ``P_A``."""
    return mmse_alloc_gpc(R_ak, p_ak, lam, P_A)


def sphere_constrained_ls(R, p, P):
    """Exact minimizer of ``a^H R a - 2 Re(p^H a)`` subject to ``||a||^2 = P``.

    The multiplier ``mu`` solves ``||(R + mu I)^{-1} p||^2 = P`` on
    ``mu > -lambda_min(R)``; when no such root exists the minimizer gains a
    component along the bottom eigenvector.
    """
    R = symmetrize(np.asarray(R, dtype=complex))
    p = np.asarray(p, dtype=complex)
    lam, Q = np.linalg.eigh(R)
    c = Q.conj().T @ p
    c2 = np.abs(c) ** 2
    lo = -lam[0]
    scale = max(abs(lam).max(), 1.0)
    tol = 1e-12 * scale

    def norm2(mu):
        # directions without weight drop out even at the pole
        d2 = (lam + mu) ** 2
        with np.errstate(divide="ignore"):
            return np.sum(np.divide(c2, d2, out=np.zeros_like(c2), where=c2 > 0))

    left = lo + tol
    for _ in range(64):
        if norm2(left) >= P:
            break
        left = lo + (left - lo) / 16
    else:
        # hard case: the bottom eigenvector absorbs the missing norm
        rest = lam - lam[0] > tol
        x = np.where(rest, c / np.where(rest, lam - lam[0], 1.0), 0.0)
        x[0] = np.sqrt(max(P - np.sum(np.abs(x) ** 2), 0.0))
        return normalize(Q @ x, P)
    hi = lo + np.sqrt(c2.sum() / P) + scale
    while norm2(hi) > P:
        hi = lo + 2 * (hi - lo)
    mu = brentq(lambda m: norm2(m) - P, left, hi, xtol=1e-15 * scale, maxiter=500)
    return normalize(Q @ (c / (lam + mu)), P)


def filter_statistics(lr, a):
    """``(R, P_CH)`` of the destination signal under allocation ``a``.

    Without destination noise ``R`` may be singular; it then gets a
    diagonal load of ``1e-10`` times its mean eigenvalue.
    """
    R = lr.covariance(a)
    if lr.sigma2 == 0:
        n = R.shape[-1]
        tr = np.real(np.trace(R, axis1=-2, axis2=-1))
        R = R + (1e-10 * np.maximum(tr, 1e-300) / n)[..., None, None] * np.eye(n)
    return R, lr.cross_correlation(a)


def alloc_statistics(lr, W):
    """``(R_a, p_a)`` for the GPC allocation step with filters ``W`` fixed.

    With ``U = V^H W`` (``V`` the unit-amplitude link contributions),
    ``R_a = E[U U^H]`` and ``p_a = E[U b]``.
    """
    Q = np.einsum("mk,lmz->lkz", W.conj(), lr.G)  # W^H G_l
    Qf = Q.reshape(Q.shape[0], -1)
    R_a = Qf.conj() @ Qf.T
    K = W.shape[1]
    p_a = np.conj(Q[:, np.arange(K), lr.b_index]).sum(axis=1)
    return R_a, p_a


def user_alloc_statistics(lr, w_k, k):
    """``(R_a, p_a)`` of user ``k``'s own MSE as a function of the full ``a_T``."""
    q = np.einsum("m,lmz->lz", w_k.conj(), lr.G)
    R_a = q.conj() @ q.T
    p_a = np.conj(q[:, lr.b_index[k]])
    return R_a, p_a


def mse(lr, W, a):
    """Per-user MSE ``E|b_k - w_k^H r|^2``."""
    Ga = lr.composite(a)
    WG = W.conj().T @ Ga
    cross = WG[np.arange(W.shape[1]), lr.b_index]
    return np.real(
        1 - 2 * cross.real + np.sum(np.abs(WG) ** 2, axis=1) + lr.sigma2 * np.sum(np.abs(W) ** 2, axis=0)
    )


def cost(lr, W, a):
    """Sum MSE ``E||b - W^H r||^2``."""
    return float(np.sum(mse(lr, W, a)))


def filter_step(lr, alloc):
    R, P = filter_statistics(lr, alloc.a_T)
    W = mmse_filter_gpc(R, P)
    return ReceiverState(W=W, mse=mse(lr, W, alloc.a_T))


ALLOC_SOLVERS = ("ridge", "sphere")


def alloc_step(lr, W, alloc, lam, solver="ridge"):
    """One allocation update with the receive filters held fixed.

    ``solver="ridge"`` solves the ``lam``-regularized normal equations and
    rescales; ``"sphere"`` minimizes exactly on the constraint set.
    """
    if solver not in ALLOC_SOLVERS:
        raise ValueError(f"unknown allocation solver {solver!r}")
    K, n_p = alloc.a.shape
    if alloc.mode == GPC:
        R_a, p_a = alloc_statistics(lr, W)
        if solver == "sphere":
            a = sphere_constrained_ls(R_a, p_a, alloc.P_T).reshape(K, n_p)
        else:
            a = mmse_alloc_gpc(R_a, p_a, lam, alloc.P_T).reshape(K, n_p)
        return PowerAllocation(a, alloc.budgets, GPC)
    a_old = alloc.a_T
    a = np.empty_like(alloc.a)
    for k in range(K):
        R_a, p_a = user_alloc_statistics(lr, W[:, k], k)
        own = slice(k * n_p, (k + 1) * n_p)
        others = np.ones(K * n_p, dtype=bool)
        others[own] = False
        # conditional minimizer: the other users' current amplitudes are held fixed
        p_own = p_a[own] - R_a[own][:, others] @ a_old[others]
        if not np.any(p_own):
            a[k] = alloc.a[k]
            continue
        if solver == "sphere":
            a[k] = sphere_constrained_ls(R_a[own, own], p_own, alloc.budgets[k])
        else:
            a[k] = mmse_alloc_ipc(R_a[own, own], p_own, lam, alloc.budgets[k])
    return PowerAllocation(a, alloc.budgets, IPC)


def alternate(scn, mode, iters=2, init=None, lam=None, lr=None, history=None, solver="ridge"):
    """Alternating MMSE design of receive filters and power allocation.

    Each iteration computes the exact MMSE filters for the current
    allocation and then updates the allocation for those filters. The
    returned filters are recomputed for the final allocation.

    Parameters
    ----------
    scn : Scenario
    mode : {"GPC", "IPC"}
    iters : int
        Number of filter/allocation cycles (two per packet in the reference
        experiments).
    init : PowerAllocation, optional
        Starting point; equal power by default.
    history : list, optional
        Receives ``(stage, cost)`` tuples after every step.
    solver : {"ridge", "sphere"}
        Allocation step, see :func:`alloc_step`.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if mode not in (GPC, IPC):
        raise ValueError(f"unknown mode {mode!r}")
    lam = scn.cfg.lam if lam is None else lam
    lr = link_response(scn) if lr is None else lr
    alloc = init if init is not None else PowerAllocation.equal(scn.budgets, scn.cfg.n_p, mode)
    alloc = PowerAllocation(np.asarray(alloc.a, dtype=complex), alloc.budgets, mode)
    for _ in range(iters):
        state = filter_step(lr, alloc)
        if history is not None:
            history.append(("filter", float(np.sum(state.mse))))
        alloc = alloc_step(lr, state.W, alloc, lam, solver)
        if history is not None:
            history.append(("alloc", cost(lr, state.W, alloc.a_T)))
    state = filter_step(lr, alloc)
    if history is not None:
        history.append(("filter", float(np.sum(state.mse))))
    return state, alloc
