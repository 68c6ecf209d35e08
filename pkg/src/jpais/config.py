"""Scenario parameters and the QPSK symbol convention."""

from dataclasses import dataclass, fields, replace

import numpy as np

#: Unit-energy QPSK points indexed by the 2-bit label ``2*b0 + b1``.
QPSK_ALPHABET = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)


def bits_to_qpsk(bits):
    """Map bit pairs ``(b0, b1)`` to ``((1-2b0) + j(1-2b1)) / sqrt(2)``.

    ``bits`` has shape ``(..., 2)``.
    """
    bits = np.asarray(bits)
    return ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / np.sqrt(2)


def qpsk_to_bits(symbols):
    """Hard minimum-distance QPSK decision, returning bits of shape ``(..., 2)``."""
    symbols = np.asarray(symbols)
    return np.stack([symbols.real < 0, symbols.imag < 0], axis=-1).astype(np.int8)


def qpsk_slice(y):
    """Project arbitrary complex samples onto the nearest QPSK point."""
    y = np.asarray(y)
    return (np.where(y.real < 0, -1.0, 1.0) + 1j * np.where(y.imag < 0, -1.0, 1.0)) / np.sqrt(2)


@dataclass(frozen=True)
class SystemConfig:
    """All parameters of one simulated scenario.

    Powers are linear. ``P_A`` is the per-user budget of the reference user;
    interferers get log-normal budgets around it (see ``user_budgets``).
    """

    K: int = 8
    N: int = 16
    L: int = 3
    n_r: int = 2
    P_A: float = 10**1.5
    sigma2: float = 1.0
    alpha: float = 0.998
    lam: float = 0.025
    fdT: float = 0.0
    P_packet: int = 1500
    N_tr: int = 200
    seed: int = 0
    interferer_std_db: float = 3.0
    n_osc: int = 32
    channel_norm: str = "link"

    def __post_init__(self):
        if self.K < 1 or self.N < 2:
            raise ValueError("need K >= 1 and N >= 2")
        if not 1 <= self.L < self.N:
            raise ValueError(f"need 1 <= L < N, got L={self.L}, N={self.N}")
        if self.n_r < 0:
            raise ValueError("n_r must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if self.sigma2 < 0 or self.P_A <= 0 or self.lam < 0 or self.fdT < 0:
            raise ValueError("sigma2, lam, fdT must be >= 0 and P_A > 0")
        if not 0 <= self.N_tr <= self.P_packet:
            raise ValueError("need 0 <= N_tr <= P_packet")
        if self.channel_norm not in ("link", "profile"):
            raise ValueError("channel_norm must be 'link' or 'profile'")

    @classmethod
    def from_snr(cls, snr_db, **kw):
        """Build a config with ``SNR = P_A / sigma2`` equal to ``snr_db``.

        The noise variance stays fixed (default 1) and the power budget is
        the SNR knob.
        """
        sigma2 = kw.pop("sigma2", 1.0)
        return cls(P_A=sigma2 * 10 ** (snr_db / 10), sigma2=sigma2, **kw)

    @property
    def M(self):
        return self.N + self.L - 1

    @property
    def n_p(self):
        return self.n_r + 1

    @property
    def P_T(self):
        return self.K * self.P_A

    @property
    def snr_db(self):
        return 10 * np.log10(self.P_A / self.sigma2) if self.sigma2 > 0 else np.inf

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def user_budgets(cfg, rng):
    """Per-user power budgets ``P_{A,k}``.

    User 0 is the reference and gets exactly ``P_A``; the others are
    log-normal around it with ``cfg.interferer_std_db`` dB spread.
    """
    budgets = np.full(cfg.K, float(cfg.P_A))
    if cfg.K > 1 and cfg.interferer_std_db > 0:
        spread_db = rng.normal(0.0, cfg.interferer_std_db, size=cfg.K - 1)
        budgets[1:] *= 10 ** (spread_db / 10)
    return budgets
