"""
Channel service - geometry, pathloss, Rayleigh fading and received SNRs.

Noise variances are fixed at 1, so every power is noise-normalised and an
SNR is simply power times squared amplitude.
"""
import logging
import math
from typing import List, Tuple

import numpy as np

from dfrelay.exceptions import DegenerateGeometryError, ValidationError
from dfrelay.models import FadingStats, Geometry, LinkGains, PowerBudget, SnrTriple

logger = logging.getLogger(__name__)

NOISE_POWER = 1.0
MIN_DISTANCE = 1e-9  # meters

# One Philox block (4 x uint64) per trial; columns rs, ds, dr, unused
_DRAWS_PER_TRIAL = 4


def pathloss_stats(geometry: Geometry, budget: PowerBudget) -> FadingStats:
    """Exponential rate parameters d^gamma of the squared link amplitudes."""
    distances = {"rs": geometry.d_rs, "ds": geometry.d_ds, "dr": geometry.d_dr}
    for link, d in distances.items():
        if d < MIN_DISTANCE:
            raise DegenerateGeometryError(
                f"Link {link} has distance {d:.3g} m; nodes must be at least {MIN_DISTANCE} m apart"
            )

    lam = {link: d ** geometry.exponent(link) for link, d in distances.items()}
    return FadingStats(
        lambda_rs=lam["rs"],
        lambda_ds=lam["ds"],
        lambda_dr=lam["dr"],
        lambda_dr_tilde=(budget.Ps / budget.Pr) * lam["dr"],
    )


def mean_squared_gains(stats: FadingStats) -> Tuple[float, float, float]:
    """Pathloss-only squared gains 1/lambda, the mean of each exponential link."""
    return 1.0 / stats.lambda_rs, 1.0 / stats.lambda_ds, 1.0 / stats.lambda_dr


def sample_link_arrays(
    stats: FadingStats,
    start: int,
    count: int,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Draw squared amplitudes for trials [start, start + count).

    Trial i always consumes Philox block i of the stream keyed by seed, so any
    partition of the trial range produces the same numbers.

    Returns:
        (g_rs^2, g_ds^2, g_dr^2) as float64 arrays of length count
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if start < 0:
        raise ValidationError(f"start must be >= 0, got {start}")

    bitgen = np.random.Philox(key=seed, counter=start)
    uniforms = np.random.Generator(bitgen).random((count, _DRAWS_PER_TRIAL))
    # Inverse CDF keeps the one-uniform-per-draw contract
    unit_exp = -np.log1p(-uniforms[:, :3])
    return (
        unit_exp[:, 0] / stats.lambda_rs,
        unit_exp[:, 1] / stats.lambda_ds,
        unit_exp[:, 2] / stats.lambda_dr,
    )


def sample_fading(stats: FadingStats, count: int, seed: int, start: int = 0) -> List[LinkGains]:
    """Independent Rayleigh amplitudes for `count` trials, deterministic in (seed, trial index)."""
    g_rs2, g_ds2, g_dr2 = sample_link_arrays(stats, start, count, seed)
    return [
        LinkGains(g_rs=math.sqrt(a), g_ds=math.sqrt(b), g_dr=math.sqrt(c))
        for a, b, c in zip(g_rs2.tolist(), g_ds2.tolist(), g_dr2.tolist())
    ]


def snr_arrays(g_rs2, g_ds2, g_dr2, budget: PowerBudget):
    """Vectorised received SNRs from squared gains (scalars or arrays)."""
    gamma_s = g_rs2 * budget.Ps / NOISE_POWER
    gamma_o = g_ds2 * budget.Ps / NOISE_POWER
    gamma_d = gamma_o + g_dr2 * budget.Pr / NOISE_POWER
    return gamma_s, gamma_o, gamma_d


def received_snrs(gains: LinkGains, budget: PowerBudget) -> SnrTriple:
    """SNR at the relay, at the destination without relay, and with the relay at full power."""
    gamma_s, gamma_o, gamma_d = snr_arrays(gains.g_rs ** 2, gains.g_ds ** 2, gains.g_dr ** 2, budget)
    return SnrTriple(gamma_s=gamma_s, gamma_o=gamma_o, gamma_d=gamma_d)


def snr_to_power(snr_db: float, d_ds: float, gamma: float) -> float:
    """Transmit power giving the requested average destination SNR over the direct link."""
    if d_ds <= 0:
        raise ValidationError(f"d_ds must be positive, got {d_ds}")
    return 10.0 ** (snr_db / 10.0) * d_ds ** gamma


def power_to_snr(power: float, d_ds: float, gamma: float) -> float:
    """Average received SNR at the destination in dB, 10 log10(P / d_ds^gamma)."""
    if d_ds <= 0 or power <= 0:
        raise ValidationError("power and d_ds must be positive")
    return 10.0 * math.log10(power / d_ds ** gamma)


def budget_for_snr(snr_db: float, d_ds: float, gamma: float) -> PowerBudget:
    """Equal source and relay power P set from the destination SNR."""
    power = snr_to_power(snr_db, d_ds, gamma)
    return PowerBudget(Ps=power, Pr=power)
