"""Multipath link channels: static draws, Clarke fading, structured packing.

Every user has ``n_p = n_r + 1`` links into the destination (source then
relays ``1..n_r``) and ``n_r`` source-to-relay links. Tap vectors for all
of them live in one array of shape ``(K, n_p + n_r, L)``.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class ChannelSet:
    """Tap gains of every link plus optional Clarke oscillator state.

    Attributes
    ----------
    taps : ndarray, shape (K, n_p + n_r, L)
        Current tap gains; links ``0..n_r`` end at the destination, links
        ``n_p..n_p+n_r-1`` go from the source to relays ``1..n_r``.
    scale : ndarray, shape (K, n_p + n_r, L) or None
        Real tap amplitudes applied to the unit-power oscillator sums.
    cos_theta, psi : ndarray, shape (K, n_p + n_r, L, n_osc) or None
        Arrival-angle cosines and accumulated oscillator phases.
    t : int
        Number of symbol intervals advanced since the draw.
    """

    taps: np.ndarray
    n_r: int
    scale: np.ndarray = None
    cos_theta: np.ndarray = None
    psi: np.ndarray = None
    t: int = 0

    @property
    def K(self):
        return self.taps.shape[0]

    @property
    def L(self):
        return self.taps.shape[-1]

    @property
    def n_p(self):
        return self.n_r + 1

    @property
    def h_dest(self):
        """Links into the destination, shape ``(K, n_p, L)``."""
        return self.taps[:, : self.n_p]

    @property
    def h_sr(self):
        """Source-to-relay links, shape ``(K, n_r, L)``."""
        return self.taps[:, self.n_p :]

    @property
    def fading(self):
        return self.cos_theta is not None


def random_pdp(rng, shape, L):
    """Exponential power-delay profiles with decay constants drawn from U[0, 1]."""
    decay = rng.uniform(0.0, 1.0, size=shape + (1,))
    pdp = np.exp(-decay * np.arange(L))
    return pdp / pdp.sum(axis=-1, keepdims=True)


def _link_normalize(taps):
    return taps / np.sqrt(np.sum(np.abs(taps) ** 2, axis=-1, keepdims=True))


def draw_static(cfg, rng):
    """Draw time-invariant channels for every link.

    Taps are circular complex Gaussian, shaped by a random power-delay
    profile and normalized so each link has exactly unit energy.
    """
    shape = (cfg.K, cfg.n_p + cfg.n_r)
    pdp = random_pdp(rng, shape, cfg.L)
    g = (rng.standard_normal(shape + (cfg.L,)) + 1j * rng.standard_normal(shape + (cfg.L,))) / np.sqrt(2)
    return ChannelSet(taps=_link_normalize(np.sqrt(pdp) * g), n_r=cfg.n_r)


def draw_fading(cfg, rng):
    """Draw channels that evolve under Clarke's model.

    Each tap is a sum of ``cfg.n_osc`` complex sinusoids with stratified
    uniform arrival angles and uniform phases, scaled by the square root of
    a random power-delay profile. With ``cfg.channel_norm == "link"`` the
    scale is fixed at draw time so that every link starts at unit energy;
    with ``"profile"`` only the average energy is one.
    """
    shape = (cfg.K, cfg.n_p + cfg.n_r, cfg.L)
    n = cfg.n_osc
    theta = 2 * np.pi * (np.arange(n) + rng.uniform(size=shape + (n,))) / n
    psi = rng.uniform(0.0, 2 * np.pi, size=shape + (n,))
    scale = np.sqrt(random_pdp(rng, shape[:2], cfg.L))
    x0 = np.exp(1j * psi).sum(axis=-1) / np.sqrt(n)
    if cfg.channel_norm == "link":
        scale = scale / np.sqrt(np.sum(np.abs(scale * x0) ** 2, axis=-1, keepdims=True))
    return ChannelSet(taps=scale * x0, n_r=cfg.n_r, scale=scale, cos_theta=np.cos(theta), psi=psi)


def advance(ch, fdT, steps=1):
    """Evolve the channel by ``steps`` symbol intervals at normalized Doppler ``fdT``."""
    if fdT < 0:
        raise ValueError("fdT must be non-negative")
    if fdT == 0 or steps == 0:
        return ch
    if not ch.fading:
        raise ValueError("a static ChannelSet has no fading state; use draw_fading")
    psi = ch.psi + 2 * np.pi * fdT * steps * ch.cos_theta
    taps = ch.scale * np.exp(1j * psi).sum(axis=-1) / np.sqrt(psi.shape[-1])
    return replace(ch, taps=taps, psi=psi, t=ch.t + steps)


def trajectory(ch, fdT, n):
    """Tap gains for ``n`` consecutive symbols starting at ``ch``.

    Equivalent to calling ``advance`` repeatedly, but vectorized. Returns an
    array of shape ``(n, K, n_p + n_r, L)``.
    """
    if fdT == 0 or not ch.fading:
        if fdT > 0:
            raise ValueError("a static ChannelSet has no fading state; use draw_fading")
        return np.broadcast_to(ch.taps, (n,) + ch.taps.shape).copy()
    n_osc = ch.psi.shape[-1]
    out = np.empty((n,) + ch.taps.shape, dtype=complex)
    step = 2 * np.pi * fdT * ch.cos_theta
    chunk = max(1, 4096 // max(1, ch.taps.size // 64))
    for start in range(0, n, chunk):
        t = np.arange(start, min(n, start + chunk))
        phase = ch.psi[None] + t[:, None, None, None, None] * step[None]
        out[start : start + len(t)] = ch.scale * np.exp(1j * phase).sum(axis=-1) / np.sqrt(n_osc)
    return out


def pack_Hk(h_dest_k):
    """Structured ``(n_p L) x n_p`` channel matrix of one user.

    Column ``j`` carries the taps of hop ``j`` in rows ``jL .. (j+1)L-1``.
    """
    n_p, L = h_dest_k.shape
    H = np.zeros((n_p * L, n_p), dtype=complex)
    for j in range(n_p):
        H[j * L : (j + 1) * L, j] = h_dest_k[j]
    return H


def pack_HT(ch):
    """Stacked ``K n_p L x K n_p`` channel matrix, block diagonal in users."""
    h = ch.h_dest if isinstance(ch, ChannelSet) else np.asarray(ch)
    K, n_p, L = h.shape
    H = np.zeros((K * n_p * L, K * n_p), dtype=complex)
    for k in range(K):
        H[k * n_p * L : (k + 1) * n_p * L, k * n_p : (k + 1) * n_p] = pack_Hk(h[k])
    return H
