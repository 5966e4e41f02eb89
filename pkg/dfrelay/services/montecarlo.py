"""
Monte Carlo service - seeded, parallel estimators for regimes, rate, outage and savings.

Trials are split into chunks of McConfig.chunk and evaluated on a thread
pool. Each chunk returns per-trial columns; columns are concatenated in trial
order before reduction, so estimates depend only on (seed, trials).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from dfrelay.exceptions import InsufficientTrialsError, ValidationError
from dfrelay.models import (
    CsiModel, Estimate, FadingStats, Geometry, McConfig, OutageEstimate, OutagePolicy,
    PolicyKind, PowerBudget, Regime,
)
from dfrelay.services.analysis import direct_outage, outage_closed_form, outage_event_arrays
from dfrelay.services.channel import sample_link_arrays, snr_arrays
from dfrelay.services.csi import (
    EllipseTable, allocation_under_csi_arrays, average_regime, average_snrs,
    practical_relay_power, relay_use_rule,
)
from dfrelay.services.ratecore import classify_regime_arrays, log2_1p, optimal_allocation_arrays

logger = logging.getLogger(__name__)

ChunkKernel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _chunk_bounds(trials: int, chunk: int) -> List[Tuple[int, int]]:
    return [(start, min(chunk, trials - start)) for start in range(0, trials, chunk)]


def run_trials(stats: FadingStats, cfg: McConfig, kernel: ChunkKernel) -> np.ndarray:
    """
    Evaluate kernel(g_rs2, g_ds2, g_dr2) -> (count, m) array over all trials.

    Returns the (trials, m) array of per-trial values in trial order.
    """
    bounds = _chunk_bounds(cfg.trials, cfg.chunk)

    def work(bound: Tuple[int, int]) -> np.ndarray:
        start, count = bound
        g_rs2, g_ds2, g_dr2 = sample_link_arrays(stats, start, count, cfg.seed)
        values = np.asarray(kernel(g_rs2, g_ds2, g_dr2), dtype=float)
        return values.reshape(count, -1)

    if cfg.workers == 1 or len(bounds) == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(work, bounds))
    logger.debug(f"Ran {cfg.trials} trials in {len(bounds)} chunks on {cfg.workers} workers")
    return np.concatenate(parts, axis=0)


def _mean_estimate(values: np.ndarray) -> Estimate:
    n = values.shape[0]
    mean = float(np.sum(values) / n)
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(mean=mean, stderr=stderr, trials=n)


def _binomial_estimate(count: float, n: int) -> Estimate:
    p = count / n
    return Estimate(mean=p, stderr=math.sqrt(max(p * (1.0 - p), 0.0) / n), trials=n)


# ============================================================================
# Estimators
# ============================================================================

def estimate_regime_probs(stats: FadingStats, budget: PowerBudget, cfg: McConfig) -> Tuple[Estimate, Estimate, Estimate]:
    """Empirical R0/R1/R2 frequencies with binomial standard errors."""

    def kernel(g_rs2, g_ds2, g_dr2):
        regime = classify_regime_arrays(g_rs2, g_ds2, g_dr2, budget)
        return np.stack([regime == 0, regime == 1, regime == 2], axis=1)

    counts = np.sum(run_trials(stats, cfg, kernel), axis=0)
    return tuple(_binomial_estimate(float(c), cfg.trials) for c in counts)


def _policy_allocation(policy: OutagePolicy, g_rs2, g_ds2, g_dr2, stats: FadingStats, budget: PowerBudget):
    if policy.kind == PolicyKind.FIXED:
        alpha = policy.alpha_fraction * budget.Ps
        zeros = np.zeros_like(g_rs2)
        if alpha <= 0:
            return zeros, zeros + budget.Ps, zeros, zeros + budget.Pr
        return zeros + alpha, zeros + (budget.Ps - alpha), zeros + budget.Pr / alpha, zeros
    model = {
        PolicyKind.PERFECT: CsiModel.PERFECT,
        PolicyKind.LONG_TERM_PARTIAL: CsiModel.LONG_TERM,
        PolicyKind.LONG_TERM_FULL: CsiModel.LONG_TERM,
    }[policy.kind]
    out = allocation_under_csi_arrays(
        model, g_rs2, g_ds2, g_dr2, stats, budget,
        full_relay_power=policy.kind == PolicyKind.LONG_TERM_FULL,
    )
    return out["alpha_s"], out["beta_s"], out["k_s"], out["beta_r"]


def estimate_outage(
    stats: FadingStats,
    budget: PowerBudget,
    target_rate: float,
    policy: OutagePolicy,
    cfg: McConfig,
) -> OutageEstimate:
    """Outage frequency and its direct/relay/destination breakdown under a relay-power policy."""
    if target_rate < 0:
        raise ValidationError(f"target_rate must be nonnegative, got {target_rate}")

    def kernel(g_rs2, g_ds2, g_dr2):
        if policy.kind == PolicyKind.DIRECT:
            dt = log2_1p(g_ds2 * budget.Ps) < target_rate
            relay = dest = np.zeros_like(dt)
        else:
            alloc = _policy_allocation(policy, g_rs2, g_ds2, g_dr2, stats, budget)
            dt, relay, dest = outage_event_arrays(g_rs2, g_ds2, g_dr2, *alloc, budget, target_rate)
        return np.stack([dt | relay | dest, dt, relay, dest], axis=1)

    counts = np.sum(run_trials(stats, cfg, kernel), axis=0)
    total, p_dt, p_relay, p_dest = (_binomial_estimate(float(c), cfg.trials) for c in counts)
    return OutageEstimate(total=total, p_dt=p_dt, p_relay=p_relay, p_dest=p_dest)


def estimate_rate(
    stats: FadingStats,
    budget: PowerBudget,
    model: CsiModel,
    cfg: McConfig,
    relay_used: Optional[bool] = None,
    geometry: Optional[Geometry] = None,
    table: Optional[EllipseTable] = None,
    full_relay_power: bool = False,
) -> Estimate:
    """
    Mean achieved rate under a CSI model.

    Perfect CSI picks the better of relaying and direct transmission per fade.
    Practical and long-term CSI use the relay when relay_used says so; when it
    is None the relay-use rule decides from geometry, and without a geometry
    the relay is used. full_relay_power gives the block-Markov-only baseline
    that never saves relay power.
    """
    if model in (CsiModel.PRACTICAL, CsiModel.LONG_TERM) and relay_used is None:
        relay_used = relay_use_rule(geometry, table) if geometry is not None else True

    def kernel(g_rs2, g_ds2, g_dr2):
        direct = log2_1p(g_ds2 * budget.Ps)
        if model == CsiModel.DIRECT or relay_used is False:
            return direct
        if model == CsiModel.PERFECT:
            return np.maximum(optimal_allocation_arrays(g_rs2, g_ds2, g_dr2, budget)["rate"], direct)
        out = allocation_under_csi_arrays(
            model, g_rs2, g_ds2, g_dr2, stats, budget, full_relay_power=full_relay_power
        )
        return out["rate"]

    return _mean_estimate(run_trials(stats, cfg, kernel))


def estimate_savings(
    stats: FadingStats,
    budget: PowerBudget,
    model: CsiModel,
    cfg: McConfig,
    clamp: bool = True,
) -> Estimate:
    """Mean unspent relay power Pr - beta_r; zero outside the independent-coding regime."""
    if model not in (CsiModel.PERFECT, CsiModel.PRACTICAL):
        raise ValidationError(f"savings are defined for perfect or practical CSI, not {model.value}")

    if model == CsiModel.PRACTICAL and average_regime(stats, budget) != Regime.R1:
        return Estimate(mean=0.0, stderr=0.0, trials=cfg.trials)

    avg = average_snrs(stats, budget)

    def kernel(g_rs2, g_ds2, g_dr2):
        if model == CsiModel.PERFECT:
            out = optimal_allocation_arrays(g_rs2, g_ds2, g_dr2, budget)
            return np.where(out["regime"] == 1, budget.Pr - out["beta_r"], 0.0)
        gamma_s, _, _ = snr_arrays(g_rs2, g_ds2, g_dr2, budget)
        return budget.Pr - practical_relay_power(gamma_s, avg, budget, clamp=clamp)

    return _mean_estimate(run_trials(stats, cfg, kernel))


# ============================================================================
# Diversity
# ============================================================================

def diversity_slope(
    stats: FadingStats,
    target_rate: float,
    snr_grid_db: Iterable[float],
    source: str = "closed_form",
    policy: OutagePolicy = OutagePolicy(kind=PolicyKind.FIXED, alpha_fraction=0.5),
    cfg: Optional[McConfig] = None,
) -> float:
    """
    Least-squares slope of log10(outage) against SNR in decades.

    Powers are Ps = Pr = 10^(snr/10) * lambda_ds, so the SNR axis is the
    average direct-link SNR. Source is "closed_form" or "monte_carlo".
    """
    snrs = np.asarray(list(snr_grid_db), dtype=float)
    if snrs.size < 2:
        raise ValidationError("diversity slope needs at least two SNR points")
    if source not in ("closed_form", "monte_carlo"):
        raise ValidationError(f"unknown outage source '{source}'")
    if source == "monte_carlo" and cfg is None:
        raise ValidationError("monte_carlo source needs an McConfig")

    outages = []
    for snr_db in snrs:
        P = 10.0 ** (snr_db / 10.0) * stats.lambda_ds
        budget = PowerBudget(Ps=P, Pr=P)
        point_stats = stats.model_copy(update={"lambda_dr_tilde": stats.lambda_dr})
        if source == "closed_form":
            if policy.kind == PolicyKind.DIRECT:
                p = direct_outage(point_stats, budget, target_rate)
            elif policy.kind == PolicyKind.FIXED:
                alpha = policy.alpha_fraction * P
                p = outage_closed_form(point_stats, alpha, P - alpha, budget, target_rate).total
            else:
                raise ValidationError(f"closed-form outage needs a fixed or direct policy, got {policy.kind.value}")
        else:
            p = estimate_outage(point_stats, budget, target_rate, policy, cfg).total.mean
        if p <= 0:
            raise InsufficientTrialsError(f"No outage events at {snr_db} dB; increase trials or lower the SNR grid")
        outages.append(p)

    slope, _ = np.polyfit(snrs / 10.0, np.log10(outages), 1)
    logger.info(f"Diversity slope over {snrs[0]:g}-{snrs[-1]:g} dB ({source}): {slope:.3f}")
    return float(slope)
