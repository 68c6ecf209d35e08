"""Bit error rate, throughput, mutual information and complexity counts."""

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

#: Algorithms with closed-form complexity counts.
ALGORITHMS = ("JPAIS-GPC", "JPAIS-IPC", "CIS-up", "CIS-down", "NCIS-up", "NCIS-down")

#: CSV columns, in order.
CSV_COLUMNS = (
    "algorithm", "mode", "K", "n_r", "snr_db", "fdT", "p_e", "seed_block", "runs",
    "ber", "ber_ci95", "mi", "mi_unscaled", "nt", "adds", "mults",
)


def count_ber(tx_bits, rx_bits, skip=0):
    """Fraction of differing bits after dropping the first ``skip`` symbols.

    Bit arrays have the symbol index on axis 0 (or 1 when a batch axis
    leads, in which case ``skip`` applies to axis 1).
    """
    tx = np.asarray(tx_bits)
    rx = np.asarray(rx_bits)
    if tx.shape != rx.shape:
        raise ValueError(f"bit streams differ in shape: {tx.shape} vs {rx.shape}")
    axis = 0 if tx.ndim <= 3 else 1
    tx = np.moveaxis(tx, axis, 0)[skip:]
    rx = np.moveaxis(rx, axis, 0)[skip:]
    if tx.size == 0:
        raise ValueError("no bits left after skipping")
    return float(np.mean(tx != rx))


def mean_ci95(samples):
    """Mean and half-width of the normal-approximation 95% interval over runs."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(1.96 * x.std(ddof=1) / np.sqrt(x.size))


def normalized_throughput(ber, R=1.0, P=1500, M=4):
    """``NT = R (1 - BER)^(P log2 M)`` in bits per time slot."""
    ber = np.asarray(ber, dtype=float)
    if np.any((ber < 0) | (ber > 1)):
        raise ValueError("BER must lie in [0, 1]")
    return R * (1.0 - ber) ** (P * np.log2(M))


def mutual_information(sinr, n_p=1):
    """``log2(1 + SINR) / n_p`` bits per channel use."""
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise ValueError("SINR must be non-negative")
    return np.log2(1.0 + sinr) / n_p


def empirical_sinr(y, b, axis=0):
    """SINR of filter outputs ``y`` for reference symbols ``b``.

    Signal power is ``|E[b* y]|^2``; interference plus noise is the rest of
    ``Var(y)``.
    """
    y = np.asarray(y)
    b = np.asarray(b)
    gain = np.mean(np.conj(b) * y, axis=axis)
    signal = np.abs(gain) ** 2
    total = np.mean(np.abs(y - np.mean(y, axis=axis, keepdims=True)) ** 2, axis=axis)
    rest = np.maximum(total - signal, np.finfo(float).tiny)
    return signal / rest


# --- complexity -----------------------------------------------------------------

def _gpc_filter(K, M, n_r):
    d = (n_r + 1) * M
    return 2 * d**2 + 2 * K * d - d + 1, 3 * d**2 + 2 * K * d + 3 * d + 1


def _gpc_alloc(K, M, L, n_r):
    q = K * (n_r + 1)
    adds = 3 * K * q + q * (L - 1) + K * M * (n_r + 1) + K * q + 6 * q**2 + 3 * q + n_r + 2
    mults = K * q + 4 * q**2 + (K + L) * q**2 - q**2 + K * M * (n_r + 1) * L + n_r
    return adds, mults


def _gpc_channel(K, L, n_r):
    q = K * (n_r + 1)
    # the multiplication column is transcribed as printed
    return 5 * (q * L) ** 2 + 5 * q * L + 3, 5 * q**2 + 6 * q * L + 1


def _ipc_filter(M, n_r):
    d = (n_r + 1) * M
    return 2 * d**2 + d + 1, 3 * d**2 + 5 * d + 1


def _ipc_alloc(M, L, n_r):
    n_p = n_r + 1
    adds = 2 * n_p**2 + 3 * n_p + M * n_p * L + n_p * L - 3
    mults = 3 * n_p**2 + 7 * n_p + M * n_p * L + n_p * L + 3
    return adds, mults


def _ipc_channel(M, L, n_r):
    n_p = n_r + 1
    adds = 2 * (n_p * L) ** 2 + 5 * M * n_p * L - 5 * n_p + 3
    mults = 6 * (n_p * L) ** 2 + M * n_p * L + 4 * n_p + 1
    return adds, mults


def recursion_counts(K, N, L, n_r):
    """Per-symbol ``(adds, mults)`` of every recursion, keyed by parameter name."""
    M = N + L - 1
    return {
        "W": _gpc_filter(K, M, n_r),
        "a_T": _gpc_alloc(K, M, L, n_r),
        "H_T": _gpc_channel(K, L, n_r),
        "w_k": _ipc_filter(M, n_r),
        "a_k": _ipc_alloc(M, L, n_r),
        "H_k": _ipc_channel(M, L, n_r),
    }


#: Recursions each algorithm runs; the flag marks per-user recursions.
RECURSIONS = {
    "JPAIS-GPC": (("W", "a_T", "H_T"), False, False),
    "JPAIS-IPC": (("w_k", "a_k", "H_k"), True, False),
    "CIS-up": (("W",), False, False),
    "CIS-down": (("w_k",), True, False),
    "NCIS-up": (("W",), False, True),
    "NCIS-down": (("w_k",), True, True),
}


def complexity_count(algorithm, K=8, N=16, L=3, n_r=2, per_user=True):
    """Complex additions and multiplications per symbol.

    Per-user algorithms (IPC, downlink baselines) are counted for a single
    user unless ``per_user`` is ``False``, in which case they are scaled to
    all ``K`` users. Non-cooperative baselines use ``n_r = 0``.
    """
    if algorithm not in RECURSIONS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    names, user_level, direct = RECURSIONS[algorithm]
    counts = recursion_counts(K, N, L, 0 if direct else n_r)
    adds = sum(counts[n][0] for n in names)
    mults = sum(counts[n][1] for n in names)
    if user_level and not per_user:
        adds, mults = K * adds, K * mults
    return int(adds), int(mults)


def overhead(jpais, baseline, **cfg):
    """Relative multiplication overhead of ``jpais`` over ``baseline``."""
    return complexity_count(jpais, **cfg)[1] / complexity_count(baseline, **cfg)[1] - 1.0


# --- aggregation --------------------------------------------------------------

@dataclass
class RunMetrics:
    """Per-run samples of one grid point, mergeable across workers.

    ``ber`` and ``sinr`` hold one entry per run (run-level averages over
    users and data symbols).
    """

    algorithm: str
    mode: str
    K: int
    n_r: int
    snr_db: float
    fdT: float = 0.0
    p_e: float = 0.0
    seed_block: int = 0
    ber: list = field(default_factory=list)
    sinr: list = field(default_factory=list)
    n_p: int = 1
    P_packet: int = 1500
    N: int = 16
    L: int = 3

    def add(self, ber, sinr):
        self.ber.append(float(ber))
        self.sinr.append(float(sinr))
        return self

    def merge(self, other):
        """Pool the runs of another block of the same grid point."""
        key = ("algorithm", "mode", "K", "n_r", "snr_db", "fdT", "p_e")
        if any(getattr(self, k) != getattr(other, k) for k in key):
            raise ValueError("cannot merge metrics of different grid points")
        out = RunMetrics(**{**asdict(self), "ber": self.ber + other.ber, "sinr": self.sinr + other.sinr})
        out.seed_block = min(self.seed_block, other.seed_block)
        return out

    def row(self):
        """One CSV row following :data:`CSV_COLUMNS`."""
        ber, ci = mean_ci95(self.ber)
        sinr = float(np.mean(self.sinr)) if self.sinr else 0.0
        cx_name = _complexity_name(self.algorithm, self.mode)
        adds, mults = complexity_count(cx_name, K=self.K, N=self.N, L=self.L, n_r=self.n_r) if cx_name else ("", "")
        return {
            "algorithm": self.algorithm,
            "mode": self.mode,
            "K": self.K,
            "n_r": self.n_r,
            "snr_db": self.snr_db,
            "fdT": self.fdT,
            "p_e": self.p_e,
            "seed_block": self.seed_block,
            "runs": len(self.ber),
            "ber": ber,
            "ber_ci95": ci,
            "mi": float(mutual_information(sinr, self.n_p)),
            "mi_unscaled": float(mutual_information(sinr, 1)),
            "nt": float(normalized_throughput(ber, P=self.P_packet)),
            "adds": adds,
            "mults": mults,
        }


def _complexity_name(algorithm, mode):
    # the simulated link is the uplink
    if algorithm in ("JPAIS-GPC", "JPAIS-IPC"):
        return algorithm
    if algorithm in ("CIS", "NCIS"):
        return f"{algorithm}-up"
    return None


def write_csv(path, rows):
    """Write metric rows (dicts or :class:`RunMetrics`) with the fixed header."""
    rows = [r.row() if isinstance(r, RunMetrics) else r for r in rows]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r[k]) for k in CSV_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path):
    """Read a metrics CSV, checking that every schema column is present."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"CSV {path} lacks column(s): {', '.join(missing)}")
        return list(reader)
