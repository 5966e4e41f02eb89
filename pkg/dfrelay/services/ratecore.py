"""
Rate service - DF rate constraints, link-state regimes and optimal power allocation.

The array kernels (`*_arrays`) accept scalars or numpy arrays of squared gains
and are shared by the per-channel API and the Monte Carlo estimators.
Rates are in bits/s/Hz.
"""
import logging
import math

import numpy as np

from dfrelay.exceptions import EmptyGridError, InternalContradictionError
from dfrelay.models import (
    AllocationResult, LinkGains, OracleGrid, OracleResult, PowerAllocation,
    PowerBudget, RatePair, Regime,
)
from dfrelay.services.channel import snr_arrays

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
ALPHA_FLOOR = 1e-12
GOLDEN_WIDTH = 1e-10

REGIME_TAGS = (Regime.R0, Regime.R1, Regime.R2)


def log2_1p(x):
    """log2(1 + x), accurate for small x."""
    return np.log1p(x) / LN2


# ============================================================================
# Array kernels
# ============================================================================

def rate_constraint_arrays(g_rs2, g_ds2, g_dr2, alpha_s, beta_s, k_s, beta_r):
    """J1 and J2 for squared gains and an allocation (all broadcastable)."""
    j1 = log2_1p(g_rs2 * beta_s)
    coherent = 2.0 * np.sqrt(g_ds2 * g_dr2) * np.sqrt(k_s) * alpha_s
    j2 = log2_1p(g_ds2 * (alpha_s + beta_s) + g_dr2 * (alpha_s * k_s + beta_r) + coherent)
    return j1, j2


def classify_regime_arrays(g_rs2, g_ds2, g_dr2, budget: PowerBudget):
    """Regime index 0/1/2 with R0 closed on the right and R1 closed on the right."""
    upper = g_ds2 + (budget.Pr / budget.Ps) * g_dr2
    return np.where(g_rs2 <= g_ds2, 0, np.where(g_rs2 <= upper, 1, 2))


def xi_arrays(gamma_s, gamma_o, gamma_d, Ps: float):
    """
    Block-Markov source split alpha_s solving J1 = J2 with the relay at full power.

    Written in received SNRs so the same routine serves instantaneous and
    average CSI. Uses the conjugate form of the quadratic root; the
    discriminant is nonnegative whenever gamma_s > gamma_d.
    """
    gamma_s = np.asarray(gamma_s, dtype=float)
    p = np.sqrt(np.maximum(gamma_o * (gamma_d - gamma_o), 0.0))
    q = gamma_s * (gamma_s - gamma_d)
    disc = p * p + q
    scale = np.maximum(np.maximum(p * p, np.abs(q)), 1.0)
    if np.any(disc < -1e-12 * scale):
        raise InternalContradictionError(
            f"Negative block-Markov discriminant (min {float(np.min(disc / scale)):.3e} relative)"
        )
    root = q / (p + np.sqrt(np.maximum(disc, 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.where(gamma_s > 0, (root / gamma_s) ** 2 * Ps, 0.0)
    return np.minimum(xi, Ps)


def optimal_allocation_arrays(g_rs2, g_ds2, g_dr2, budget: PowerBudget):
    """
    Closed-form optimal allocation for every channel in the arrays.

    Returns:
        dict with regime (int), alpha_s, beta_s, k_s, beta_r, rate
    """
    Ps, Pr = budget.Ps, budget.Pr
    g_rs2, g_ds2, g_dr2 = np.broadcast_arrays(
        np.asarray(g_rs2, dtype=float), np.asarray(g_ds2, dtype=float), np.asarray(g_dr2, dtype=float)
    )
    shape = g_rs2.shape
    g_rs2, g_ds2, g_dr2 = (np.atleast_1d(g).astype(float) for g in (g_rs2, g_ds2, g_dr2))
    regime = classify_regime_arrays(g_rs2, g_ds2, g_dr2, budget)
    in_r1 = regime == 1
    in_r2 = regime == 2

    if np.any(in_r1 & (g_dr2 <= 0)):
        raise InternalContradictionError("R1 reached with a dead relay-destination link")

    with np.errstate(divide="ignore", invalid="ignore"):
        beta_r_r1 = np.where(in_r1, Ps * (g_rs2 - g_ds2) / np.where(g_dr2 > 0, g_dr2, 1.0), 0.0)
    beta_r = np.clip(beta_r_r1, 0.0, Pr)

    alpha_s = np.zeros_like(g_rs2)
    k_s = np.zeros_like(g_rs2)
    if np.any(in_r2):
        gamma_s, gamma_o, gamma_d = snr_arrays(g_rs2[in_r2], g_ds2[in_r2], g_dr2[in_r2], budget)
        xi = xi_arrays(gamma_s, gamma_o, gamma_d, Ps)
        tiny = xi < ALPHA_FLOOR
        if np.any(tiny):
            logger.debug(f"{int(np.sum(tiny))} R2 channels with alpha_s below floor, using independent coding")
        alpha_r2 = np.where(tiny, 0.0, xi)
        with np.errstate(divide="ignore"):
            k_r2 = np.where(tiny, 0.0, Pr / np.where(tiny, 1.0, alpha_r2))
        alpha_s[in_r2] = alpha_r2
        k_s[in_r2] = k_r2
        beta_r[in_r2] = np.where(tiny, Pr, 0.0)

    beta_s = Ps - alpha_s
    direct = log2_1p(g_ds2 * Ps)
    j1, j2 = rate_constraint_arrays(g_rs2, g_ds2, g_dr2, alpha_s, beta_s, k_s, beta_r)
    rate = np.where(regime == 0, direct, np.minimum(j1, j2))
    out = {
        "regime": regime,
        "alpha_s": alpha_s,
        "beta_s": beta_s,
        "k_s": k_s,
        "beta_r": beta_r,
        "rate": rate,
    }
    # scalar in, 0-d arrays out
    return {key: value.reshape(shape) for key, value in out.items()}


# ============================================================================
# Per-channel API
# ============================================================================

def rate_constraints(gains: LinkGains, alloc: PowerAllocation) -> RatePair:
    """Rate constraints at the relay (j1) and destination (j2)."""
    j1, j2 = rate_constraint_arrays(
        gains.g_rs ** 2, gains.g_ds ** 2, gains.g_dr ** 2,
        alloc.alpha_s, alloc.beta_s, alloc.k_s, alloc.beta_r,
    )
    return RatePair(j1=float(j1), j2=float(j2))


def direct_rate(gains: LinkGains, budget: PowerBudget) -> float:
    """Point-to-point rate over the direct link at full source power."""
    return float(log2_1p(gains.g_ds ** 2 * budget.Ps))


def classify_regime(gains: LinkGains, budget: PowerBudget) -> Regime:
    tag = classify_regime_arrays(gains.g_rs ** 2, gains.g_ds ** 2, gains.g_dr ** 2, budget)
    return REGIME_TAGS[int(tag)]


def optimal_allocation(gains: LinkGains, budget: PowerBudget) -> AllocationResult:
    """Regime, rate-optimal allocation and rate for one channel realization."""
    out = optimal_allocation_arrays(gains.g_rs ** 2, gains.g_ds ** 2, gains.g_dr ** 2, budget)
    alloc = PowerAllocation(
        alpha_s=float(out["alpha_s"]),
        beta_s=float(out["beta_s"]),
        k_s=float(out["k_s"]),
        beta_r=float(out["beta_r"]),
    )
    return AllocationResult(regime=REGIME_TAGS[int(out["regime"])], allocation=alloc, rate=float(out["rate"]))


def fixed_allocation(alpha_s: float, budget: PowerBudget) -> PowerAllocation:
    """Fixed source split with the relay at full power, the allocation the outage closed form assumes."""
    if alpha_s <= 0:
        return PowerAllocation(alpha_s=0.0, beta_s=budget.Ps, k_s=0.0, beta_r=budget.Pr)
    return PowerAllocation(alpha_s=alpha_s, beta_s=budget.Ps - alpha_s, k_s=budget.Pr / alpha_s, beta_r=0.0)


def classical_allocation(gains: LinkGains, budget: PowerBudget) -> AllocationResult:
    """
    Block-Markov-only DF: direct transmission or block Markov with the relay at full power.

    Achieves the composite rate but never saves relay power.
    """
    result = optimal_allocation(gains, budget)
    if result.regime == Regime.R1:
        alloc = PowerAllocation(alpha_s=0.0, beta_s=budget.Ps, k_s=0.0, beta_r=budget.Pr)
        return AllocationResult(regime=Regime.R2, allocation=alloc, rate=result.rate)
    return result


def relay_power_used(alloc: PowerAllocation) -> float:
    return alloc.relay_power


def achieved_rate(
    gains: LinkGains,
    alloc: PowerAllocation,
    relay_used: bool,
    budget: PowerBudget,
) -> float:
    """min(J1, J2) when the relay is used, otherwise the direct rate."""
    alloc.check_feasible(budget)
    if not relay_used:
        return direct_rate(gains, budget)
    pair = rate_constraints(gains, alloc)
    return min(pair.j1, pair.j2)


# ============================================================================
# Brute-force oracle
# ============================================================================

def _golden_max(f, lo: float, hi: float, width: float = GOLDEN_WIDTH):
    """Maximise a unimodal f on [lo, hi] by golden-section search."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > width:
        if fc < fd:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
        else:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
    x = (a + b) / 2.0
    return x, f(x)


def oracle_allocation(
    gains: LinkGains,
    budget: PowerBudget,
    resolution: OracleGrid = OracleGrid(),
) -> OracleResult:
    """
    Exhaustive maximiser of min(J1, J2) over the full-source-power allocations.

    The source always uses full power. For alpha_s > 0 the relay spends its
    remaining budget on the block-Markov component (k_s alpha_s = Pr - beta_r);
    at alpha_s = 0 only beta_r is searched. Direct transmission is a candidate
    too, so the oracle answers the same question as optimal_allocation.
    """
    if resolution.alpha_points < 1 or resolution.beta_r_points < 1:
        raise EmptyGridError("oracle grid needs at least one alpha_s and one beta_r point")

    Ps, Pr = budget.Ps, budget.Pr
    g_rs2, g_ds2, g_dr2 = gains.g_rs ** 2, gains.g_ds ** 2, gains.g_dr ** 2

    alphas = np.linspace(0.0, Ps, resolution.alpha_points) if resolution.alpha_points > 1 else np.array([0.0])
    betas = np.linspace(0.0, Pr, resolution.beta_r_points) if resolution.beta_r_points > 1 else np.array([Pr])
    a_grid, br_grid = np.meshgrid(alphas, betas, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        k_grid = np.where(a_grid > 0, (Pr - br_grid) / np.where(a_grid > 0, a_grid, 1.0), 0.0)
    j1, j2 = rate_constraint_arrays(g_rs2, g_ds2, g_dr2, a_grid, Ps - a_grid, k_grid, br_grid)
    objective = np.minimum(j1, j2)
    i, j = np.unravel_index(int(np.argmax(objective)), objective.shape)

    best_alloc = PowerAllocation(
        alpha_s=float(a_grid[i, j]), beta_s=float(Ps - a_grid[i, j]),
        k_s=float(k_grid[i, j]), beta_r=float(br_grid[i, j]),
    )
    best_rate = float(objective[i, j])
    relay_used = True

    if resolution.refine:
        def block_markov(alpha: float) -> float:
            if alpha <= 0:
                a, b = rate_constraint_arrays(g_rs2, g_ds2, g_dr2, 0.0, Ps, 0.0, Pr)
            else:
                a, b = rate_constraint_arrays(g_rs2, g_ds2, g_dr2, alpha, Ps - alpha, Pr / alpha, 0.0)
            return float(min(a, b))

        alpha_star, rate_star = _golden_max(block_markov, 0.0, Ps)
        if rate_star > best_rate:
            best_rate = rate_star
            best_alloc = fixed_allocation(alpha_star, budget)

    j_direct = direct_rate(gains, budget)
    if j_direct > best_rate:
        best_rate = j_direct
        best_alloc = PowerAllocation(alpha_s=0.0, beta_s=Ps, k_s=0.0, beta_r=0.0)
        relay_used = False

    return OracleResult(allocation=best_alloc, rate=best_rate, relay_used=relay_used)
