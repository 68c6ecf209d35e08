"""Limited feedback of power allocations over a binary symmetric channel.

Packet layout
-------------
Coefficients are serialized in ``a_T`` order (user-major: user 0 hops
``0..n_r``, then user 1, ...). Each coefficient takes ``n_b`` bits, most
significant bit first. In the default ``"magnitude"`` scheme the codeword is
the index of ``|a|`` on a uniform ``2**n_b``-level grid over ``[0, sqrt(P)]``
and reconstruction uses the cell midpoint; the phase is not sent. The
``"cartesian"`` scheme sends the real part and then the imaginary part,
each on ``2**n_b`` uniform levels over ``[-sqrt(P), sqrt(P)]``.

``P`` is ``P_T`` for a global-constraint packet and ``P_{A,k}`` for user
``k``'s coefficients in an individual-constraint packet.
"""

from dataclasses import dataclass

import numpy as np

from .mmse import GPC, IPC, PowerAllocation, normalize

SCHEMES = ("magnitude", "cartesian")


@dataclass
class FeedbackPacket:
    """Serialized allocation.

    Attributes
    ----------
    bits : ndarray of uint8
        Flat bit string, MSB first per field.
    n_b : int
        Bits per quantized field.
    shape : tuple
        ``(K, n_p)`` of the allocation the packet describes.
    ranges : ndarray, shape (K,)
        Per-user amplitude bound ``sqrt(P)`` used by the quantizer.
    budgets : ndarray, shape (K,)
    mode : {"GPC", "IPC"}
    scheme : {"magnitude", "cartesian"}
    """

    bits: np.ndarray
    n_b: int
    shape: tuple
    ranges: np.ndarray
    budgets: np.ndarray
    mode: str = GPC
    scheme: str = "magnitude"

    @property
    def fields_per_coefficient(self):
        return 1 if self.scheme == "magnitude" else 2

    @property
    def expected_length(self):
        return int(np.prod(self.shape)) * self.n_b * self.fields_per_coefficient


def bit_budget(mode, K, n_r, n_b=4):
    """Feedback bits per packet: all of ``a_T`` (GPC) or one user's ``a_k`` (IPC)."""
    if mode == GPC:
        return K * (n_r + 1) * n_b
    if mode == IPC:
        return (n_r + 1) * n_b
    raise ValueError(f"unknown mode {mode!r}")


def _ranges(alloc):
    if alloc.mode == GPC:
        return np.full(alloc.a.shape[0], np.sqrt(alloc.P_T))
    return np.sqrt(np.asarray(alloc.budgets, dtype=float))


def _to_bits(codes, n_b):
    shifts = np.arange(n_b - 1, -1, -1)
    return ((codes[..., None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def _from_bits(bits, n_b):
    weights = 1 << np.arange(n_b - 1, -1, -1)
    return bits.reshape(-1, n_b).astype(np.int64) @ weights


def _encode(x, lo, hi, n_b):
    levels = 2**n_b
    idx = np.floor((x - lo) / (hi - lo) * levels).astype(np.int64)
    return np.clip(idx, 0, levels - 1)


def _decode(idx, lo, hi, n_b):
    return lo + (idx + 0.5) * (hi - lo) / 2**n_b


def quantize(alloc, n_b=4, scheme="magnitude"):
    """Serialize an allocation with ``n_b`` bits per field.

    Parameters
    ----------
    alloc : PowerAllocation
    n_b : int
        Bits per field, at least 1.
    scheme : {"magnitude", "cartesian"}
    """
    if n_b < 1:
        raise ValueError("n_b must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    a = np.asarray(alloc.a, dtype=complex)
    rng_ = _ranges(alloc)[:, None]
    if scheme == "magnitude":
        codes = _encode(np.abs(a), 0.0, rng_, n_b)
    else:
        codes = np.stack([_encode(a.real, -rng_, rng_, n_b), _encode(a.imag, -rng_, rng_, n_b)], axis=-1)
    return FeedbackPacket(
        bits=_to_bits(codes, n_b),
        n_b=n_b,
        shape=a.shape,
        ranges=_ranges(alloc),
        budgets=np.asarray(alloc.budgets, dtype=float),
        mode=alloc.mode,
        scheme=scheme,
    )


def bsc_transmit(pkt, p_e, rng):
    """Flip every bit independently with probability ``p_e``."""
    if not 0 <= p_e <= 1:
        raise ValueError("p_e must lie in [0, 1]")
    flips = (rng.random(pkt.bits.shape) < p_e).astype(np.uint8)
    return FeedbackPacket(
        bits=pkt.bits ^ flips,
        n_b=pkt.n_b,
        shape=pkt.shape,
        ranges=pkt.ranges,
        budgets=pkt.budgets,
        mode=pkt.mode,
        scheme=pkt.scheme,
    )


def dequantize(pkt, renormalize=True):
    """Rebuild the allocation at the cell midpoints.

    With ``renormalize`` the result is rescaled onto its power constraint;
    a user (IPC) or packet (GPC) whose coefficients all decode to zero
    magnitude cannot be rescaled and falls back to equal power.
    """
    bits = np.asarray(pkt.bits, dtype=np.uint8)
    if bits.ndim != 1 or len(bits) != pkt.expected_length:
        raise ValueError(f"packet has {bits.size} bits, expected {pkt.expected_length}")
    codes = _from_bits(bits, pkt.n_b)
    rng_ = np.asarray(pkt.ranges, dtype=float)[:, None]
    if pkt.scheme == "magnitude":
        a = _decode(codes.reshape(pkt.shape), 0.0, rng_, pkt.n_b).astype(complex)
    else:
        c = codes.reshape(pkt.shape + (2,))
        a = _decode(c[..., 0], -rng_, rng_, pkt.n_b) + 1j * _decode(c[..., 1], -rng_, rng_, pkt.n_b)
    alloc = PowerAllocation(a, pkt.budgets, pkt.mode)
    if not renormalize:
        return alloc
    n_p = pkt.shape[1]
    if pkt.mode == GPC:
        if not np.any(a):
            return PowerAllocation.equal(pkt.budgets, n_p, GPC)
        return PowerAllocation(normalize(a.reshape(-1), alloc.P_T).reshape(a.shape), pkt.budgets, GPC)
    rows = []
    for ak, pk in zip(a, pkt.budgets):
        rows.append(normalize(ak, pk) if np.any(ak) else np.full(n_p, np.sqrt(pk / n_p), dtype=complex))
    return PowerAllocation(np.stack(rows), pkt.budgets, IPC)


def feedback_roundtrip(alloc, p_e, rng, n_b=4, scheme="magnitude"):
    """Quantize, send over the BSC and reconstruct at the transmitters."""
    return dequantize(bsc_transmit(quantize(alloc, n_b, scheme), p_e, rng))


def fuse(allocations):
    """Average several received copies of one allocation and renormalize."""
    allocations = list(allocations)
    if not allocations:
        raise ValueError("nothing to fuse")
    first = allocations[0]
    a = np.mean([al.a for al in allocations], axis=0)
    return PowerAllocation(a, first.budgets, first.mode).normalized()
