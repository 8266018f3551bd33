"""Closed-form diffusion channel for a point emitter and an absorbing sphere."""

from __future__ import annotations

import math

EPS_SERIES = 1e-12
N_MAX = 64

#: returned by `invert_distance_from_count` when nothing was received
UNBOUNDED = math.inf


class ChannelDomainError(ValueError):
    pass


def _check(r, d, D):
    if not r > 0:
        raise ChannelDomainError("r must be positive")
    if not D > 0:
        raise ChannelDomainError("D must be positive")
    if not d > r:
        raise ChannelDomainError("emitter on or inside absorbing surface")


def hit_pdf(r: float, d: float, D: float, t: float) -> float:
    """First-hitting-time density of a sphere of radius r seen from distance d."""
    _check(r, d, D)
    if not t > 0:
        raise ChannelDomainError("t must be positive")
    gap = d - r
    # log space so that t -> 0+ underflows gracefully instead of 0/0
    log_f = (
        math.log(r * gap / d)
        - 0.5 * math.log(4.0 * math.pi * D)
        - 1.5 * math.log(t)
        - gap * gap / (4.0 * D * t)
    )
    return math.exp(log_f)


def hit_cdf(r: float, d: float, D: float, t: float) -> float:
    """Probability of absorption by time t: (r/d) erfc((d-r)/sqrt(4Dt))."""
    _check(r, d, D)
    if t == math.inf:
        return r / d
    if not t > 0:
        raise ChannelDomainError("t must be positive")
    return r / d * math.erfc((d - r) / math.sqrt(4.0 * D * t))


def peak_time(r: float, d: float, D: float) -> float:
    """Mode of `hit_pdf` in t."""
    _check(r, d, D)
    return (d - r) ** 2 / (6.0 * D)


def invert_distance_from_peak(t_peak: float, r: float, D: float) -> float:
    if not t_peak > 0:
        raise ChannelDomainError("t_peak must be positive")
    return r + math.sqrt(6.0 * D * t_peak)


def invert_distance_from_count(n_received: int, N: int, r: float) -> float:
    """Distance whose total hit probability r/d equals n_received/N.

    Returns UNBOUNDED when nothing was received.
    """
    if n_received < 0 or n_received > N:
        raise ValueError(f"n_received must lie in [0, N={N}], got {n_received}")
    if n_received == 0:
        return UNBOUNDED
    return r * N / n_received


def superposition_sum(ratio_sq: float, n_max: int = N_MAX, eps: float = EPS_SERIES) -> float:
    """Partial sum of ratio_sq**n from n=0.

    Stops after the first term smaller than `eps` (that term is kept) or after
    `n_max` terms.
    """
    s, term = 0.0, 1.0
    for _ in range(n_max):
        s += term
        if term < eps:
            break
        term *= ratio_sq
    return s


def expected_relayed_count(
    N: float,
    r: float,
    d_AB: float,
    d_ATB: float,
    d_ATA: float,
    n_max: int = N_MAX,
    eps_series: float = EPS_SERIES,
) -> tuple[float, bool]:
    """Superposition count at Node B; returns (raw value, physically valid).

    The bracket (r/d_ATB - r/d_ATA) goes negative whenever the emitter is
    closer to Node A than to Node B, so the raw value is returned with a
    flag instead of being clamped.
    """
    if not d_AB > 2 * r:
        raise ChannelDomainError("nodes overlap: d_AB must exceed 2r")
    if not (d_ATB > r and d_ATA > r):
        raise ChannelDomainError("emitter on or inside absorbing surface")
    if n_max < 1 or not eps_series > 0:
        raise ValueError("n_max >= 1 and eps_series > 0 required")
    S = superposition_sum((r / d_AB) ** 2, n_max, eps_series)
    value = N * S * (r / d_ATB - r / d_ATA)
    return value, bool(0.0 <= value <= N)
