"""Empirical checks of the convexity condition of the joint MMSE design.

For user ``k`` the filter column and the allocation are stacked into
``q = [w_k; a]``. The filter output is then the quadratic form
``q^H U_T q`` with

* ``U_s``: the per-link signal matrix ``R`` (unit-amplitude link
  contributions, ``n_p M x K n_p``) in the block pairing the filter rows
  with the allocation columns;
* ``U_I``: the allocation-independent disturbance ``t`` in the first column
  of the filter rows.

The Hessian of the cost stays positive semi-definite along a direction
``m`` when the power level exceeds the ratio of two Hermitian forms in
``m`` built from ``E[(b_k - w_k^H t)^* U_T]`` and
``E[(w_k^H R beta)^* U_T]`` with ``beta = a / ||a||^2``. Since
``w_k^H R a = P w_k^H R beta`` on the constraint set, the two scalars split
the conjugated error ``e^* = (b_k - w_k^H t)^* - P (w_k^H R beta)^*``. Both
expectations are estimated by simulation with the true statistics. The
"real part" of a matrix is taken as its Hermitian part so that the forms
are real.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .mmse import GPC, PowerAllocation, alloc_statistics, alternate, cost, filter_step, normalize
from .sigmodel import link_response, make_scenario, simulate_links


@dataclass
class ConvexityProbe:
    """Estimated Hermitian forms and the resulting power floor of one user."""

    numerator: np.ndarray
    denominator: np.ndarray
    bound: float
    excluded_fraction: float
    directions: np.ndarray = field(repr=False, default=None)
    beta: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self):
        return self.numerator.shape[0]

    @property
    def pencil_bound(self):
        """The ratio along the refined direction (the last probe)."""
        m = self.directions[-1]
        return float(np.vdot(m, self.numerator @ m).real / np.vdot(m, self.denominator @ m).real)


def hermitian_part(X):
    return 0.5 * (X + X.conj().T)


def pseudo_inverse_vector(a):
    """``(a a^H)^+ a``, which equals ``a / ||a||^2``."""
    a = np.ravel(a)
    return np.linalg.pinv(np.outer(a, a.conj())) @ a


def structured_blocks(R, t):
    """``(U_s, U_I)`` of one symbol: ``R`` pairs filter rows with allocation columns, ``t`` fills column 0."""
    n_rows, n_cols = R.shape
    dim = n_rows + n_cols
    U_s = np.zeros((dim, dim), dtype=complex)
    U_s[:n_rows, n_rows:] = R
    U_I = np.zeros((dim, dim), dtype=complex)
    U_I[:n_rows, 0] = t
    return U_s, U_I


def _u_matrix(R_mean, t_mean, n_rows, n_cols):
    U_s, U_I = structured_blocks(R_mean, t_mean)
    return U_s + U_I


@dataclass
class FormSamples:
    """Per-symbol scalars and blocks whose averages give the two forms."""

    c_num: np.ndarray  # (n,)
    c_den: np.ndarray  # (n,)
    R: np.ndarray  # (n, rows, cols)
    t: np.ndarray  # (n, rows)

    def matrices(self):
        n, rows, cols = self.R.shape
        out = []
        for c in (self.c_num, self.c_den):
            U = _u_matrix(np.einsum("n,nmc->mc", c, self.R) / n, (c @ self.t) / n, rows, cols)
            out.append(hermitian_part(U))
        return tuple(out)

    def quadratic_forms(self, m):
        """Per-symbol ``Re(c m^H U m)`` for both scalars, shape ``(2, n, n_dir)``."""
        rows = self.R.shape[1]
        top, bottom = m[:, :rows].conj(), m[:, rows:]
        mUm = np.einsum("pr,nrc,pc->np", top, self.R, bottom) + (self.t @ top.T) * m[:, 0]
        return np.stack([(self.c_num[:, None] * mUm).real, (self.c_den[:, None] * mUm).real])


def form_samples(mode, w, a, V, noise, b, k):
    """Per-symbol ingredients of the numerator and denominator matrices.

    Parameters
    ----------
    mode : {"GPC", "IPC"}
    w : ndarray, shape (n_p M,)
        Filter of user ``k``.
    a : ndarray, shape (K, n_p)
    V : ndarray, shape (n, n_p M, K n_p)
        Unit-amplitude link contributions per symbol.
    noise : ndarray, shape (n, n_p M)
    b : ndarray, shape (n, K)
        Transmitted symbols.
    """
    K, n_p = a.shape
    if mode == GPC:
        R = V
        t = noise
        coef = pseudo_inverse_vector(a)
    else:
        own = slice(k * n_p, (k + 1) * n_p)
        R = V[:, :, own]
        others = np.ones(K * n_p, dtype=bool)
        others[own] = False
        t = V[:, :, others] @ a.reshape(-1)[others] + noise
        coef = pseudo_inverse_vector(a[k])
    c_num = np.conj(b[:, k] - t @ w.conj())
    c_den = np.conj(np.einsum("m,nmc,c->n", w.conj(), R, coef))
    return FormSamples(c_num, c_den, R, t)


def expected_forms(mode, w, a, V, noise, b, k):
    """Monte Carlo estimates of the numerator and denominator matrices."""
    return form_samples(mode, w, a, V, noise, b, k).matrices()


def exact_forms(mode, lr, w, a, k):
    """Closed-form numerator and denominator matrices from a :class:`LinkResponse`.

    Every entry of ``z`` is circular with unit variance, so for a linear
    functional ``h^H z`` one has ``E[conj(h^H z) G_l z] = G_l h``.
    """
    K, n_p = a.shape
    a_T = np.asarray(a).reshape(-1)
    G = lr.G  # (K n_p, rows, Z)
    e_k = np.zeros(G.shape[-1])
    e_k[lr.b_index[k]] = 1.0
    if mode == GPC:
        cols = np.arange(K * n_p)
        beta = a_T / np.vdot(a_T, a_T).real
        G_o = np.zeros(G.shape[1:], dtype=complex)
    else:
        cols = np.arange(k * n_p, (k + 1) * n_p)
        beta = a[k] / np.vdot(a[k], a[k]).real
        mask = np.ones(K * n_p, dtype=bool)
        mask[cols] = False
        G_o = np.tensordot(a_T[mask], G[mask], axes=1)
    G_own = G[cols]  # (cols, rows, Z)
    h_den = np.tensordot(beta, G_own, axes=1).conj().T @ w
    h_t = G_o.conj().T @ w
    R_den = np.einsum("lrz,z->rl", G_own, h_den)
    R_num = np.einsum("lrz,z->rl", G_own, e_k - h_t)
    t_den = G_o @ h_den
    t_num = G_o @ e_k - G_o @ h_t - lr.sigma2 * w
    rows, n_cols = G.shape[1], len(cols)
    return (
        hermitian_part(_u_matrix(R_num, t_num, rows, n_cols)),
        hermitian_part(_u_matrix(R_den, t_den, rows, n_cols)),
    )


def ratio_supremum(num, den, den_se=None, z=3.0):
    """Largest ``num / den`` over directions whose denominator is positive.

    Parameters
    ----------
    num, den : ndarray, shape (n_dir,)
        Forms ``m^H N m`` and ``m^H D m`` per direction.
    den_se : ndarray, optional
        Standard errors of ``den``; a denominator then counts as positive
        only when it exceeds ``z`` standard errors.

    Returns
    -------
    bound : float
    excluded : float
        Fraction of directions with non-positive denominator.
    """
    num, den = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    floor = 0.0 if den_se is None else z * np.asarray(den_se)
    ok = den > floor
    if not ok.any():
        raise ValueError("every denominator is non-positive: bound undefined")
    return float(np.max(num[ok] / den[ok])), float(1.0 - ok.mean())


def pencil_direction(N, D):
    """Top generalized eigenvector of ``(N, D)`` on the positive eigenspace of ``D``."""
    evals, evecs = np.linalg.eigh(D)
    pos = evals > max(evals.max(), 0.0) * 1e-10
    if not pos.any():
        return None
    T = evecs[:, pos] / np.sqrt(evals[pos])
    _, v = np.linalg.eigh(T.conj().T @ N @ T)
    m = T @ v[:, -1]
    return m / np.linalg.norm(m)


def unit_directions(rng, n, dim):
    m = rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _beta(mode, a, k):
    return pseudo_inverse_vector(a if mode == GPC else a[k])


def _chunks(n_mc, chunk):
    sizes = [chunk] * (n_mc // chunk)
    if n_mc % chunk:
        sizes.append(n_mc % chunk)
    return sizes


def convexity_probe(
    mode, scn, n_probes=200, n_mc=2000, rng=None, user=0, state=None, chunk=2000, z=3.0, method="mc"
):
    """Estimate the power floor of one user at the MMSE operating point.

    With ``method="exact"`` both matrices come from :func:`exact_forms` and
    every direction with a positive denominator counts. Otherwise symbols
    are simulated in chunks of ``chunk`` so memory stays bounded.
    A first pass estimates both matrices; a second pass over the same draws
    measures the per-direction standard error of the denominator, and
    directions within ``z`` standard errors of zero count as non-positive.
    ``state`` is an optional ``(ReceiverState, PowerAllocation)`` pair; by
    default the alternating MMSE design supplies it.
    """
    if n_probes < 10 or n_mc < 1000:
        raise ValueError("need n_probes >= 10 and n_mc >= 1000")
    rng = np.random.default_rng(0) if rng is None else rng
    # directions come from their own stream so that n_mc does not move them
    dir_rng, mc_rng = rng.spawn(2)
    if state is None:
        state = alternate(scn, mode)
    rx, alloc = state
    w = rx.W[:, user]
    if method == "exact":
        N, D = exact_forms(mode, link_response(scn), w, alloc.a, user)
        dirs = unit_directions(dir_rng, n_probes, N.shape[0])
        refined = pencil_direction(N, D)
        if refined is not None:
            dirs = np.vstack([dirs, refined])
        num = np.einsum("pa,ab,pb->p", dirs.conj(), N, dirs).real
        den = np.einsum("pa,ab,pb->p", dirs.conj(), D, dirs).real
        bound, excluded = ratio_supremum(num, den)
        return ConvexityProbe(N, D, bound, excluded, dirs, _beta(mode, alloc.a, user))
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    seeds = [int(s) for s in mc_rng.integers(2**63, size=len(_chunks(n_mc, chunk)))]

    def samples():
        for n, seed in zip(_chunks(n_mc, chunk), seeds):
            pk = simulate_links(scn, n, np.random.default_rng(seed))
            yield n, form_samples(mode, w, alloc.a, pk.link_matrix(), pk.noise, pk.symbols, user)

    N = D = 0.0
    for n, fs in samples():
        Nc, Dc = fs.matrices()
        N, D = N + Nc * (n / n_mc), D + Dc * (n / n_mc)
    dirs = unit_directions(dir_rng, n_probes, N.shape[0])
    refined = pencil_direction(N, D)
    if refined is not None:
        dirs = np.vstack([dirs, refined])
    num = np.einsum("pa,ab,pb->p", dirs.conj(), N, dirs).real
    den = np.einsum("pa,ab,pb->p", dirs.conj(), D, dirs).real
    sq = np.zeros(len(dirs))
    for _, fs in samples():
        sq += np.sum((fs.quadratic_forms(dirs)[1] - den) ** 2, axis=0)
    den_se = np.sqrt(sq / (n_mc - 1) / n_mc)
    bound, excluded = ratio_supremum(num, den, den_se, z)
    return ConvexityProbe(N, D, bound, excluded, dirs, _beta(mode, alloc.a, user))


def convexity_bound(mode, scn, n_probes=200, n_mc=2000, rng=None, users=None, method="mc"):
    """Conservative power floor: the largest per-user estimate.

    Every user is probed with the same directions and draws. Returns the
    bound together with the mean fraction of excluded directions.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    state = alternate(scn, mode)
    users = range(scn.cfg.K) if users is None else users
    seed = int(rng.integers(2**63))
    probes = [
        convexity_probe(mode, scn, n_probes, n_mc, np.random.default_rng(seed), user=k, state=state, method=method)
        for k in users
    ]
    return max(p.bound for p in probes), float(np.mean([p.excluded_fraction for p in probes]))


@dataclass
class InvarianceReport:
    """Spread of alternating-MMSE solutions across random initializations."""

    costs: np.ndarray
    cost_spread: float
    alloc_distance: float
    iterations: int


def phase_aligned_distance(a, b):
    """``min_phi ||a - exp(j phi) b||`` for flattened allocations."""
    a, b = np.ravel(a), np.ravel(b)
    inner = np.vdot(b, a)
    phase = inner / abs(inner) if abs(inner) > 0 else 1.0
    return float(np.linalg.norm(a - phase * b))


def random_allocation(rng, budgets, n_p, mode):
    """A random complex allocation on the constraint set."""
    K = len(budgets)
    a = rng.standard_normal((K, n_p)) + 1j * rng.standard_normal((K, n_p))
    return PowerAllocation(a, budgets, mode).normalized()


def scaled_scenario(scn, P, mode):
    """Scenario whose active power constraint equals ``P``.

    GPC scales all budgets so that their sum is ``P``; IPC scales them so
    that the reference user's budget is ``P``.
    """
    ref = scn.P_T if mode == GPC else scn.budgets[0]
    budgets = scn.budgets * (P / ref)
    cfg = scn.cfg.replace(P_A=float(budgets[0]))
    return type(scn)(cfg, scn.sigs, scn.ch, budgets)


def refine_gpc(lr, alloc, gtol=1e-10, maxiter=5000):
    """Polish a global-constraint allocation with L-BFGS on the concentrated cost.

    The filters are re-solved at every point, so by the envelope theorem
    the Wirtinger gradient of the cost is ``R_a a - p_a``. The allocation is
    parametrized as ``sqrt(P_T) x / ||x||``.
    """
    shape, P = alloc.a.shape, alloc.P_T
    n = alloc.a.size

    def f(x):
        z = x[:n] + 1j * x[n:]
        nz = np.linalg.norm(z)
        a = np.sqrt(P) * z / nz
        st = filter_step(lr, PowerAllocation(a.reshape(shape), alloc.budgets, GPC))
        R_a, p_a = alloc_statistics(lr, st.W)
        g = R_a @ a - p_a
        gr = 2 * np.concatenate([g.real, g.imag])
        xh = x / nz
        return float(np.sum(st.mse)), np.sqrt(P) / nz * (gr - xh * (xh @ gr))

    a0 = alloc.a_T
    res = minimize(
        f,
        np.concatenate([a0.real, a0.imag]),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": maxiter, "ftol": 1e-15, "gtol": gtol},
    )
    z = res.x[:n] + 1j * res.x[n:]
    return PowerAllocation(normalize(z, P).reshape(shape), alloc.budgets, GPC)


def init_invariance_test(mode, scn, n_inits=5, P=None, iters=100, rng=None, tol=1e-13, refine=True, inits=None):
    """Run the alternating design from random inits and compare the results.

    Every start runs :func:`~jpais.mmse.alternate` with the exact
    constrained allocation step until the cost changes by less than ``tol``
    (relative) or ``iters`` cycles pass. With ``refine`` the GPC result is
    then polished by :func:`refine_gpc`; IPC has no joint cost to polish.
    ``inits`` overrides the random starting allocations.
    """
    if n_inits < 3:
        raise ValueError("need at least 3 initializations")
    rng = np.random.default_rng(1) if rng is None else rng
    if P is not None:
        scn = scaled_scenario(scn, P, mode)
    lr = link_response(scn)
    if inits is None:
        inits = [random_allocation(rng, scn.budgets, scn.cfg.n_p, mode) for _ in range(n_inits)]
    finals, costs, used = [], [], 0
    for alloc in inits:
        prev = np.inf
        for it in range(1, iters + 1):
            rx, alloc = alternate(scn, mode, iters=1, init=alloc, lr=lr, solver="sphere")
            c = cost(lr, rx.W, alloc.a_T)
            if abs(prev - c) <= tol * abs(c):
                break
            prev = c
        used = max(used, it)
        if refine and mode == GPC:
            alloc = refine_gpc(lr, alloc)
            c = float(np.sum(filter_step(lr, alloc).mse))
        finals.append(alloc.a)
        costs.append(c)
    costs = np.array(costs)
    dist = max(
        phase_aligned_distance(finals[i], finals[j])
        for i in range(len(finals))
        for j in range(i + 1, len(finals))
    )
    return InvarianceReport(costs, float(costs.max() - costs.min()), dist, used)


def headline_scenario(seed=0, snr_db=12.0, **kw):
    """The K=8, n_r=2 scenario used by the headline experiments."""
    from .config import SystemConfig

    cfg = SystemConfig.from_snr(snr_db, **kw)
    return make_scenario(cfg, np.random.default_rng(seed))
