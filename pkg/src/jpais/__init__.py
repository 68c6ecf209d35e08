"""Joint power allocation and interference suppression for cooperative
multi-hop DS-CDMA networks with amplify-and-forward relays."""

from .config import SystemConfig, QPSK_ALPHABET
from .channel import ChannelSet, draw_static, draw_fading, advance, pack_Hk, pack_HT
from .sigmodel import SignatureSet, Scenario, build_signatures, make_scenario

__version__ = "0.1.0"

__all__ = [
    "SystemConfig",
    "QPSK_ALPHABET",
    "ChannelSet",
    "draw_static",
    "draw_fading",
    "advance",
    "pack_Hk",
    "pack_HT",
    "SignatureSet",
    "Scenario",
    "build_signatures",
    "make_scenario",
]
