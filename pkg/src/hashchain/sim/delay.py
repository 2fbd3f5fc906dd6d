"""Link-level delay terms for beacon delivery over an 802.11p channel."""
from __future__ import annotations

from ..errors import InvalidArgument


def serialization_ms(bits: float, rate_bps: float) -> float:
    if bits <= 0 or rate_bps <= 0:
        raise InvalidArgument("bits and rate must be positive")
    return bits / rate_bps * 1000.0


def contention_ms(density: float, *, aifs_ms=0.0, backoff_slots=0, slot_ms=0.0, per_vehicle_ms=0.0) -> float:
    """Channel-access wait: fixed AIFS, random backoff, and an affine load term.

    Nondecreasing in ``density`` for any non-negative ``per_vehicle_ms``.
    """
    return aifs_ms + backoff_slots * slot_ms + per_vehicle_ms * max(density, 0)


def tx_delay(bits: float, rate_bps: float, contention: float = 0.0, propagation: float = 0.0) -> float:
    """One-hop delivery time in ms: serialization + propagation + channel access."""
    return serialization_ms(bits, rate_bps) + propagation + contention


def propagation_ms(distance_m: float, speed_mps: float = 3.0e8) -> float:
    return distance_m / speed_mps * 1000.0
