"""DS-CDMA signal model for multi-hop amplify-and-forward transmission.

Chip-level conventions
----------------------
A symbol of user ``k`` through a link with taps ``h`` produces the
``M = N + L - 1`` chip waveform ``D_k h``. The receive window of symbol
``i`` also catches the last ``L - 1`` chips of symbol ``i-1`` (rows
``0..L-2``) and the first ``L - 1`` chips of symbol ``i+1`` (rows
``N..M-1``). Both neighbours are scaled by the amplitude of symbol ``i``.

Stacked quantities follow the destination ordering: hop ``0`` is the
direct source link, hop ``j`` the link from relay ``j``. Allocation vectors
``a_T`` are user-major: ``[a_1(hop 0..n_r), ..., a_K(hop 0..n_r)]``.

Relays see the source at its fixed budget amplitude ``sqrt(P_{A,k})``,
apply a clairvoyant MMSE filter per user, scale the output to unit
expected power and forward it. Only the hops into the destination are
under power-allocation control.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelSet, draw_fading, draw_static, trajectory
from .config import bits_to_qpsk, user_budgets
from .linalg import hermitian, solve_hermitian

#: Offsets of neighbouring symbols that reach one receive window.
OFFSETS = (-1, 0, 1)


@dataclass
class SignatureSet:
    """Spreading codes and their convolution matrices.

    Attributes
    ----------
    codes : ndarray, shape (K, N)
        Unit-energy binary codes with chips ``+-1/sqrt(N)``.
    D : ndarray, shape (K, M, L)
        Column ``l`` holds the code shifted down by ``l`` chips.
    """

    codes: np.ndarray
    D: np.ndarray
    n_r: int
    _C_T: np.ndarray = field(default=None, repr=False)

    @property
    def K(self):
        return self.codes.shape[0]

    @property
    def M(self):
        return self.D.shape[1]

    @property
    def L(self):
        return self.D.shape[2]

    @property
    def n_p(self):
        return self.n_r + 1

    def C_k(self, k):
        """Block-diagonal ``(n_p M) x (n_p L)`` matrix with ``D_k`` repeated."""
        return np.kron(np.eye(self.n_p), self.D[k])

    @property
    def C_T(self):
        """All users' ``C_k`` side by side: ``(n_p M) x (K n_p L)``."""
        if self._C_T is None:
            self._C_T = np.hstack([self.C_k(k) for k in range(self.K)])
        return self._C_T


def conv_matrix(code, L):
    """``(N + L - 1) x L`` matrix whose columns are shifted copies of ``code``."""
    N = len(code)
    D = np.zeros((N + L - 1, L))
    for l in range(L):
        D[l : l + N, l] = code
    return D


def build_signatures(cfg, rng):
    """Draw ``K`` distinct random binary codes and build ``D_k``."""
    if cfg.K > 2**cfg.N:
        raise ValueError("cannot draw K distinct codes of length N")
    codes = []
    seen = set()
    while len(codes) < cfg.K:
        chips = rng.integers(0, 2, size=cfg.N)
        key = chips.tobytes()
        if key in seen:
            continue
        seen.add(key)
        codes.append((1 - 2 * chips) / np.sqrt(cfg.N))
    codes = np.array(codes)
    D = np.stack([conv_matrix(c, cfg.L) for c in codes])
    return SignatureSet(codes=codes, D=D, n_r=cfg.n_r)


@dataclass
class Scenario:
    """Everything fixed within a run: config, codes, channels, user budgets."""

    cfg: object
    sigs: SignatureSet
    ch: ChannelSet
    budgets: np.ndarray

    @property
    def P_T(self):
        """Global budget: the users' individual budgets summed."""
        return float(np.sum(self.budgets))

    def direct_only(self):
        """Relay-free scenario sharing codes, budgets and direct channels."""
        cfg = self.cfg.replace(n_r=0)
        sigs = SignatureSet(codes=self.sigs.codes, D=self.sigs.D, n_r=0)
        ch = self.ch
        ch = replace(
            ch,
            taps=ch.taps[:, :1],
            n_r=0,
            scale=None if ch.scale is None else ch.scale[:, :1],
            cos_theta=None if ch.cos_theta is None else ch.cos_theta[:, :1],
            psi=None if ch.psi is None else ch.psi[:, :1],
        )
        return Scenario(cfg, sigs, ch, self.budgets)

    def with_channel(self, ch):
        return Scenario(self.cfg, self.sigs, ch, self.budgets)


def make_scenario(cfg, rng, fading=None):
    """Draw codes, channels and interferer budgets for one run."""
    fading = cfg.fdT > 0 if fading is None else fading
    sigs = build_signatures(cfg, rng)
    ch = draw_fading(cfg, rng) if fading else draw_static(cfg, rng)
    return Scenario(cfg, sigs, ch, user_budgets(cfg, rng))


def equal_allocation(budgets, n_p):
    """Equal split of every user's budget over its ``n_p`` hops, shape ``(K, n_p)``."""
    budgets = np.asarray(budgets, dtype=float)
    return np.repeat(np.sqrt(budgets / n_p)[:, None], n_p, axis=1).astype(complex)


def waveforms(D, taps):
    """Chip waveforms of a link for the previous, current and next symbol.

    Parameters
    ----------
    D : ndarray, shape (K, M, L)
    taps : ndarray, shape (..., K, n, L)
        Tap vectors for ``n`` links of each user.

    Returns
    -------
    ndarray, shape (3, ..., K, n, M)
        Index 0 is the tail of symbol ``i-1``, 1 the full symbol ``i``,
        2 the head of symbol ``i+1``, all as seen in window ``i``.
    """
    K, M, L = D.shape
    N = M - L + 1
    main = np.einsum("kml,...knl->...knm", D, taps)
    out = np.zeros((3,) + main.shape, dtype=complex)
    out[1] = main
    if L > 1:
        out[0, ..., : L - 1] = main[..., N:]
        out[2, ..., N:] = main[..., : L - 1]
    return out


def relay_filters(sigs, h_sr, budgets, sigma2):
    """Clairvoyant MMSE relay filters and their output powers.

    Parameters
    ----------
    h_sr : ndarray, shape (..., K, n_r, L)

    Returns
    -------
    w : ndarray, shape (..., n_r, K, M)
        Filter of relay ``j`` for user ``k``.
    power : ndarray, shape (..., n_r, K)
        Expected output power ``w^H R w`` (equal to ``w^H p``).
    """
    wf = waveforms(sigs.D, h_sr) * np.sqrt(budgets)[:, None, None]
    S = np.einsum("o...kjm->...jmko", wf)
    S = S.reshape(S.shape[:-2] + (-1,))  # (..., n_r, M, 3K), column 3k + offset
    M = S.shape[-2]
    R = S @ hermitian(S)
    load = max(sigma2, 1e-10 * float(np.max(np.real(np.trace(R, axis1=-2, axis2=-1)))) / M)
    R = R + load * np.eye(M)
    P = S[..., 1::3]  # current-symbol columns, (..., n_r, M, K)
    W = solve_hermitian(R, P, check=False)
    power = np.real(np.sum(W.conj() * P, axis=-2))
    return np.swapaxes(W, -1, -2), power


def relay_process(received, relay_filter, expected_power):
    """Amplify-and-forward one relay output symbol.

    Returns ``(relay_filter^H received) / sqrt(expected_power)``, so the
    forwarded symbol has unit expected power and keeps the filtered noise.
    """
    relay_filter = np.asarray(relay_filter)
    if expected_power <= 0 or not np.any(relay_filter):
        raise ValueError("relay output has zero expected power")
    return np.vdot(relay_filter, received) / np.sqrt(expected_power)


def noise(rng, shape, sigma2):
    """Circular complex Gaussian samples with total variance ``sigma2``."""
    return np.sqrt(sigma2 / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class SymbolFrame:
    """Per-link symbols around one symbol instant.

    ``s[k, j]`` is the symbol user ``k`` sends over hop ``j`` (``b_k`` for
    hop 0, the relayed ``b~`` otherwise); ``s_prev``/``s_next`` are the
    neighbours that leak into the window.
    """

    s: np.ndarray
    s_prev: np.ndarray
    s_next: np.ndarray

    @property
    def b(self):
        return self.s[:, 0]

    @property
    def relayed(self):
        return self.s[:, 1:]

    def B_k(self, k):
        return np.diag(self.s[k])

    @property
    def B_T(self):
        return np.diag(self.s.reshape(-1))


@dataclass
class ReceivedVector:
    r: np.ndarray
    signal: np.ndarray
    isi: np.ndarray
    noise: np.ndarray
    M: int

    def block(self, j):
        """Samples of hop ``j`` (``r_sd`` for 0, ``r_{r_j d}`` otherwise)."""
        return self.r[j * self.M : (j + 1) * self.M]


def transmit_frame(sigs, ch, frame, alloc, sigma2, rng):
    """Assemble ``r = C_T H_T B_T a_T + eta + n`` for one symbol.

    ``alloc`` is ``(K, n_p)`` or its flattened ``a_T``.
    """
    from .channel import pack_HT

    K, n_p = sigs.K, sigs.n_p
    a = np.asarray(alloc, dtype=complex).reshape(K, n_p)
    if frame.s.shape != (K, n_p):
        raise ValueError(f"frame has shape {frame.s.shape}, expected {(K, n_p)}")
    H_T = pack_HT(ch)
    signal = sigs.C_T @ H_T @ (frame.s.reshape(-1) * a.reshape(-1))
    wf = waveforms(sigs.D, ch.h_dest)  # (3, K, n_p, M)
    isi_blocks = np.einsum("kjm,kj->jm", wf[0], a * frame.s_prev) + np.einsum(
        "kjm,kj->jm", wf[2], a * frame.s_next
    )
    isi = isi_blocks.reshape(-1)
    n = noise(rng, signal.shape, sigma2)
    return ReceivedVector(r=signal + isi + n, signal=signal, isi=isi, noise=n, M=sigs.M)


@dataclass
class LinkStreams:
    """Symbol streams, link waveforms and noise of one packet.

    ``streams[i + 1, k, j]`` is the symbol user ``k`` sends on hop ``j`` at
    instant ``i`` (``b_k[i]`` on hop 0, the relayed copy otherwise); one
    extra symbol pads each end. ``wf`` holds the unit-amplitude chip
    waveforms ``(3, K, n_p, M)`` of a static channel or
    ``(n_sym, 3, K, n_p, M)`` of a time-varying one.
    """

    bits: np.ndarray
    streams: np.ndarray
    wf: np.ndarray
    noise: np.ndarray

    @property
    def n_sym(self):
        return self.noise.shape[0]

    @property
    def symbols(self):
        return self.streams[1:-1, :, 0]

    @property
    def relayed(self):
        return self.streams[1:-1, :, 1:]

    def _window(self, i):
        idx = np.arange(self.n_sym)[i]
        x = np.stack([self.streams[idx], self.streams[idx + 1], self.streams[idx + 2]], axis=-3)
        wf = self.wf if self.wf.ndim == 4 else self.wf[idx]
        return x, wf

    def link_matrix(self, i=slice(None)):
        """Unit-amplitude contributions ``V[i]`` of shape ``(..., n_p M, K n_p)``."""
        x, wf = self._window(i)
        K, n_p, M = wf.shape[-3:]
        per_link = np.einsum("...okjm,...okj->...kjm", wf, x)
        V = np.zeros(per_link.shape[:-3] + (n_p, M, K, n_p), dtype=complex)
        for j in range(n_p):
            V[..., j, :, :, j] = np.swapaxes(per_link[..., :, j, :], -1, -2)
        return V.reshape(V.shape[:-4] + (n_p * M, K * n_p))

    def direct_only(self):
        """The same packet seen without relays (hop 0 only)."""
        M = self.wf.shape[-1]
        return LinkStreams(
            bits=self.bits,
            streams=self.streams[..., :1],
            wf=self.wf[..., :1, :],
            noise=self.noise[:, :M],
        )

    def received(self, alloc, i=slice(None)):
        """Received vectors for allocation ``(K, n_p)`` or per-symbol ``(n, K, n_p)``."""
        x, wf = self._window(i)
        a = np.asarray(alloc, dtype=complex)
        if a.ndim == 3:
            a = a[:, None]
        sig = np.einsum("...okjm,...okj->...jm", wf, x * a)
        sig = sig.reshape(sig.shape[:-2] + (-1,))
        return sig + self.noise[i]


def simulate_links(scn, n_sym, rng, fdT=0.0, taps=None):
    """Draw one packet's symbols, relay outputs, link waveforms and noise.

    Parameters
    ----------
    scn : Scenario
    n_sym : int
    fdT : float
        Normalized Doppler; channels advance one step per symbol.
    taps : ndarray, optional
        Precomputed ``(n_sym, K, n_p + n_r, L)`` trajectory.
    """
    cfg, sigs = scn.cfg, scn.sigs
    K, n_r, n_p, M = sigs.K, sigs.n_r, sigs.n_p, sigs.M
    static = fdT == 0 and taps is None
    if taps is None:
        taps = trajectory(scn.ch, fdT, n_sym) if not static else scn.ch.taps[None]

    # padded symbol index p = i + 2 covers i in [-2, n_sym + 1]
    bits = rng.integers(0, 2, size=(n_sym + 4, K, 2)).astype(np.int8)
    b = bits_to_qpsk(bits)
    streams = np.zeros((n_sym + 2, K, n_p), dtype=complex)
    streams[:, :, 0] = b[1:-1]

    def at(times):
        return taps[np.clip(times, 0, len(taps) - 1)]

    if n_r:
        t_relay = np.arange(-1, n_sym + 1)
        h_sr = taps[:1, :, n_p:] if static else at(t_relay)[:, :, n_p:]
        w, power = relay_filters(sigs, h_sr, scn.budgets, cfg.sigma2)
        wf_sr = waveforms(sigs.D, h_sr)  # (3, T or 1, K, n_r, M)
        amp = np.sqrt(scn.budgets)
        y_sr = noise(rng, (len(t_relay), n_r, M), cfg.sigma2)
        for o, d in enumerate(OFFSETS):
            sym = b[t_relay + 2 + d] * amp
            y_sr += np.einsum("tkjm,tk->tjm", np.broadcast_to(wf_sr[o], (len(t_relay), K, n_r, M)), sym)
        out = np.einsum("tjkm,tjm->tkj", np.broadcast_to(w.conj(), (len(t_relay),) + w.shape[1:]), y_sr)
        streams[:, :, 1:] = out / np.sqrt(np.swapaxes(np.broadcast_to(power, (len(t_relay),) + power.shape[1:]), 1, 2))

    if static:
        wf = waveforms(sigs.D, taps[0, :, :n_p])
    else:
        wf = np.moveaxis(waveforms(sigs.D, taps[:, :, :n_p]), 0, 1)
    return LinkStreams(
        bits=bits[2 : n_sym + 2],
        streams=streams,
        wf=wf,
        noise=noise(rng, (n_sym, n_p * M), cfg.sigma2),
    )


@dataclass
class LinkResponse:
    """Exact linear description of the destination signal.

    The received vector is ``r = sum_l a_l G[l] z + n`` where ``z`` stacks
    independent unit-variance variables: the symbols ``b_k[i+o]`` for
    ``o = -2..2`` followed by the relays' noise samples for the windows
    ``i-1, i, i+1``. ``b_index[k]`` points at ``b_k[i]`` inside ``z``.

    Link ``(k, j)`` only reaches hop block ``j`` of ``r``, so the response
    is stored compactly as ``blocks[..., k, j] = G[k n_p + j]`` restricted
    to that block.

    Attributes
    ----------
    blocks : ndarray, shape (..., K, n_p, M, Z)
    b_index : ndarray, shape (K,)
    sigma2 : float
        Destination noise variance per sample.
    """

    blocks: np.ndarray
    b_index: np.ndarray
    sigma2: float

    @property
    def G(self):
        """Full response ``(..., K n_p, n_p M, Z)``, built on first access."""
        if getattr(self, "_G", None) is None:
            lead = self.blocks.shape[:-4]
            K, n_p, M, Z = self.blocks.shape[-4:]
            G = np.zeros(lead + (K, n_p, n_p, M, Z), dtype=complex)
            for j in range(n_p):
                G[..., :, j, j, :, :] = self.blocks[..., :, j, :, :]
            self._G = G.reshape(lead + (K * n_p, n_p * M, Z))
        return self._G

    def composite(self, a):
        """``G_a = sum_l a_l G[l]`` for an allocation ``a_T`` or ``(K, n_p)`` array."""
        K, n_p, M, Z = self.blocks.shape[-4:]
        lead = self.blocks.shape[:-4]
        a = np.asarray(a).reshape(K, n_p)
        # per hop, a matrix product over users is far faster than einsum
        Ga = np.empty(lead + (n_p, M * Z), dtype=complex)
        for j in range(n_p):
            Xj = self.blocks[..., :, j, :, :].reshape(lead + (K, M * Z))
            Ga[..., j, :] = a[:, j] @ Xj
        return Ga.reshape(lead + (n_p * M, Z))

    def covariance(self, a):
        """``R = E[r r^H]``."""
        Ga = self.composite(a)
        return Ga @ np.swapaxes(Ga, -1, -2).conj() + self.sigma2 * np.eye(Ga.shape[-2])

    def cross_correlation(self, a):
        """``P = E[r b^H]``, one column per user."""
        return self.composite(a)[..., self.b_index]


def _symbol_slot(k, o):
    return 5 * k + (o + 2)


def link_response(scn, taps=None):
    """Build the exact :class:`LinkResponse` of a scenario.

    ``taps`` overrides the scenario channel and may carry leading batch
    axes ``(..., K, n_p + n_r, L)``, e.g. a fading trajectory; ``G`` then
    gains the same leading axes.
    """
    cfg, sigs = scn.cfg, scn.sigs
    taps = scn.ch.taps if taps is None else np.asarray(taps)
    K, n_r, n_p, M = sigs.K, sigs.n_r, sigs.n_p, sigs.M
    lead = taps.shape[:-3]
    Z = 5 * K + 3 * n_r * M
    B = np.zeros(lead + (K, n_p, M, Z), dtype=complex)
    wf = waveforms(sigs.D, taps[..., :n_p, :])  # (3, ..., K, n_p, M)

    for o in range(3):
        for k in range(K):
            B[..., k, 0, :, _symbol_slot(k, o - 1)] += wf[o, ..., k, 0, :]

    if n_r:
        h_sr = taps[..., n_p:, :]
        w, power = relay_filters(sigs, h_sr, scn.budgets, cfg.sigma2)  # (..., n_r, K, M)
        wf_sr = waveforms(sigs.D, h_sr) * np.sqrt(scn.budgets)[:, None, None]
        scale = 1.0 / np.sqrt(power)
        # gain[..., j, k, q, d]: weight of b_q[tau + d] in the relayed b~_k^j[tau]
        gain = np.einsum("...jkm,d...qjm->...jkqd", w.conj(), wf_sr) * scale[..., None, None]
        # S[..., j, k, o, q, s]: weight of b_q[i + s - 2] in b~_k^j[i + o - 1]
        S = np.zeros(lead + (n_r, K, 3, K, 5), dtype=complex)
        for o in range(3):
            S[..., o, :, o : o + 3] += gain
        wf_rel = np.moveaxis(wf[..., 1:, :], 0, -3)  # (..., K, 3, n_r, M)
        sym = np.einsum("...kojm,...jkoqs->...kjmqs", wf_rel, S)
        B[..., 1:, :, : 5 * K] = sym.reshape(lead + (K, n_r, M, 5 * K))
        for j in range(n_r):
            ng = np.sqrt(cfg.sigma2) * w[..., j, :, :].conj() * scale[..., j, :, None]  # (..., K, M)
            for o in range(3):
                start = 5 * K + (j * 3 + o) * M
                B[..., :, j + 1, :, start : start + M] = wf_rel[..., o, j, :, None] * ng[..., None, :]
    b_index = np.array([_symbol_slot(k, 0) for k in range(K)])
    return LinkResponse(blocks=B, b_index=b_index, sigma2=cfg.sigma2)


@dataclass
class PacketBatch:
    """Several packets stacked on a leading batch axis.

    Built from :class:`LinkStreams` of equal length and geometry so that
    adaptive receivers can advance all runs with one symbol loop.
    """

    bits: np.ndarray  # (B, n_sym, K, 2)
    streams: np.ndarray  # (B, n_sym + 2, K, n_p)
    wf: np.ndarray  # (B, 3, K, n_p, M) or (B, n_sym, 3, K, n_p, M)
    noise: np.ndarray  # (B, n_sym, n_p M)

    @classmethod
    def stack(cls, packets):
        packets = list(packets)
        return cls(
            bits=np.stack([p.bits for p in packets]),
            streams=np.stack([p.streams for p in packets]),
            wf=np.stack([p.wf for p in packets]),
            noise=np.stack([p.noise for p in packets]),
        )

    @property
    def n_sym(self):
        return self.noise.shape[1]

    @property
    def symbols(self):
        return self.streams[:, 1:-1, :, 0]

    def slice(self, start, stop):
        """Symbols ``start..stop-1`` as a packet of their own."""
        return PacketBatch(
            bits=self.bits[:, start:stop],
            streams=self.streams[:, start : stop + 2],
            wf=self.wf if self.wf.ndim == 5 else self.wf[:, start:stop],
            noise=self.noise[:, start:stop],
        )

    def received_at(self, i, alloc):
        """Received vectors ``(B, n_p M)`` at instant ``i`` for allocations ``(B, K, n_p)``."""
        x = self.streams[:, i : i + 3] * np.asarray(alloc)[:, None]
        wf = self.wf if self.wf.ndim == 5 else self.wf[:, i]
        sig = np.einsum("bokjm,bokj->bjm", wf, x)
        return sig.reshape(sig.shape[0], -1) + self.noise[:, i]
