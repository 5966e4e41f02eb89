"""
Analysis service - closed forms for regime probabilities, outage and relay power savings.

All squared link amplitudes are exponential with rates from FadingStats;
lambda_dr_tilde is the rate of the power-scaled relay-destination gain
(Pr/Ps) g_dr^2, which is what the regime thresholds compare against.
"""
import logging
import math

import numpy as np
from scipy import integrate

from dfrelay.exceptions import (
    ConstraintViolationError, DomainError, InternalContradictionError, NumericalFailureError,
)
from dfrelay.models import (
    AsymptoticForm, FadingStats, LinkGains, OutageBreakdown, OutageConstants, OutageEvents,
    PowerAllocation, PowerBudget, Regime, RegimeProbabilities,
)
from dfrelay.services.csi import average_regime
from dfrelay.services.ratecore import classify_regime_arrays, log2_1p, rate_constraint_arrays

logger = logging.getLogger(__name__)

QUAD_EPSABS = 1e-10
QUAD_LIMIT = 200
HYPOEXP_TIE = 1e-9
BRACKET_SERIES_BELOW = 1e-3
SPLIT_TOL = 1e-9
ZETA_CHECK_POINTS = 65


def _outage_threshold(target_rate: float) -> float:
    if target_rate <= 0:
        raise DomainError(f"target_rate must be positive, got {target_rate}")
    return math.expm1(target_rate * math.log(2.0))


def _one_minus_exp(x):
    """1 - e^{-x} without cancellation for small x."""
    return -np.expm1(-np.asarray(x, dtype=float))


# ============================================================================
# Regime probabilities
# ============================================================================

def regime_probabilities(stats: FadingStats) -> RegimeProbabilities:
    """Probability of each link-state regime under Rayleigh fading."""
    l_rs, l_ds, l_dr = stats.lambda_rs, stats.lambda_ds, stats.lambda_dr_tilde
    head = l_rs + l_ds
    tail = l_rs + l_dr
    p0 = l_rs / head
    p1 = l_rs * l_ds / (head * tail)
    p2 = l_ds * l_dr / (head * tail)
    return RegimeProbabilities(p0=p0, p1=p1, p2=p2)


def hypoexp_pdf(w, lambda_ds: float, lambda_dr_tilde: float):
    """
    Density of W = g_ds^2 + (Pr/Ps) g_dr^2, a sum of two exponentials.

    Switches to the gamma(2) limit when the rates tie to relative 1e-9.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise DomainError("hypoexp_pdf is defined for w >= 0")
    gap = lambda_dr_tilde - lambda_ds
    if abs(gap) < HYPOEXP_TIE * max(lambda_ds, lambda_dr_tilde):
        lam = 0.5 * (lambda_ds + lambda_dr_tilde)
        return lam * lam * w * np.exp(-lam * w)
    # e^{-a w} - e^{-b w} = e^{-a w} (1 - e^{-(b - a) w}) keeps near-ties accurate
    return lambda_ds * lambda_dr_tilde / gap * np.exp(-lambda_ds * w) * _one_minus_exp(gap * w)


def regime_probability_quadrature(stats: FadingStats) -> float:
    """R1 probability by integrating the relay-gain CDF against the W density."""
    p0 = stats.lambda_rs / (stats.lambda_rs + stats.lambda_ds)

    def integrand(w: float) -> float:
        return float(_one_minus_exp(stats.lambda_rs * w) * hypoexp_pdf(w, stats.lambda_ds, stats.lambda_dr_tilde))

    value, abserr = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-12, limit=QUAD_LIMIT)
    return value - p0


# ============================================================================
# Outage
# ============================================================================

def outage_constants(
    stats: FadingStats,
    alpha_s: float,
    beta_s: float,
    budget: PowerBudget,
    target_rate: float,
) -> OutageConstants:
    if beta_s <= 0:
        raise DomainError(f"beta_s must be positive for a relay-decodable split, got {beta_s}")
    if alpha_s < 0:
        raise DomainError(f"alpha_s must be nonnegative, got {alpha_s}")
    if abs(alpha_s + beta_s - budget.Ps) > SPLIT_TOL * max(budget.Ps, 1.0):
        raise ConstraintViolationError(
            f"alpha_s + beta_s = {alpha_s + beta_s:.9g} differs from Ps = {budget.Ps:.9g}"
        )
    threshold = _outage_threshold(target_rate)
    total = stats.lambda_rs + stats.lambda_ds
    return OutageConstants(
        beta1=math.sqrt(threshold / budget.Ps),
        eta1=math.sqrt(threshold / beta_s),
        c1=stats.lambda_ds / total,
        c2=stats.lambda_rs / total,
        alpha_s=alpha_s,
        Ps=budget.Ps,
        threshold=threshold,
    )


def _check_zeta_below_eta(consts: OutageConstants) -> None:
    grid = np.linspace(0.0, consts.beta1, ZETA_CHECK_POINTS)[1:-1]
    for g in grid:
        if consts.zeta1(float(g)) >= consts.eta1:
            raise InternalContradictionError(
                f"zeta1({g:.6g}) = {consts.zeta1(float(g)):.6g} is not below eta1 = {consts.eta1:.6g}"
            )


def outage_closed_form(
    stats: FadingStats,
    alpha_s: float,
    beta_s: float,
    budget: PowerBudget,
    target_rate: float,
) -> OutageBreakdown:
    """
    Outage probability for a fixed source split with the relay at full power.

    The destination term integrates over g_ds in [0, beta1] the probability
    that the scaled relay-destination amplitude stays below zeta1(g_ds).
    """
    c = outage_constants(stats, alpha_s, beta_s, budget, target_rate)
    l_rs, l_ds, l_dr = stats.lambda_rs, stats.lambda_ds, stats.lambda_dr_tilde
    b2, e2 = c.beta1 ** 2, c.eta1 ** 2

    p_dt = float(_one_minus_exp(l_ds * b2) - c.c1 * _one_minus_exp((l_rs + l_ds) * b2))
    p_relay = float(_one_minus_exp(l_rs * e2) - c.c2 * _one_minus_exp((l_rs + l_ds) * e2))

    _check_zeta_below_eta(c)

    def integrand(g: float) -> float:
        z = c.zeta1(g)
        return 2.0 * l_ds * g * math.exp(-l_ds * g * g) * float(_one_minus_exp(l_dr * z * z))

    result = integrate.quad(
        integrand, 0.0, c.beta1, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSABS, limit=QUAD_LIMIT, full_output=1
    )
    value, abserr = result[0], result[1]
    if len(result) > 3:
        raise NumericalFailureError(
            f"Destination-outage quadrature did not converge: {result[3]}", achieved_tolerance=abserr
        )
    p_dest = math.exp(-l_rs * e2) * value

    breakdown = OutageBreakdown(
        p_dt=min(max(p_dt, 0.0), 1.0),
        p_relay=min(max(p_relay, 0.0), 1.0),
        p_dest=min(max(p_dest, 0.0), 1.0),
    )
    logger.debug(
        f"Outage R={target_rate} alpha_s={alpha_s:.4g}: dt={breakdown.p_dt:.4e} "
        f"relay={breakdown.p_relay:.4e} dest={breakdown.p_dest:.4e} (quad err {abserr:.1e})"
    )
    return breakdown


def direct_outage(stats: FadingStats, budget: PowerBudget, target_rate: float) -> float:
    """Outage of point-to-point transmission over the direct link."""
    threshold = _outage_threshold(target_rate)
    return float(_one_minus_exp(stats.lambda_ds * threshold / budget.Ps))


def outage_event_arrays(g_rs2, g_ds2, g_dr2, alpha_s, beta_s, k_s, beta_r, budget: PowerBudget, target_rate: float):
    """
    Disjoint outage indicators per realization.

    R0 channels transmit directly; elsewhere the relay must decode first and
    then the destination must decode with the given allocation.
    """
    regime = classify_regime_arrays(g_rs2, g_ds2, g_dr2, budget)
    direct = log2_1p(np.asarray(g_ds2, dtype=float) * budget.Ps)
    j1, j2 = rate_constraint_arrays(g_rs2, g_ds2, g_dr2, alpha_s, beta_s, k_s, beta_r)
    uses_relay = regime != 0
    dt = (~uses_relay) & (direct < target_rate)
    relay = uses_relay & (j1 < target_rate)
    dest = uses_relay & (~relay) & (j2 < target_rate)
    return dt, relay, dest


def outage_formulated_mc_events(
    gains: LinkGains,
    budget: PowerBudget,
    alloc: PowerAllocation,
    target_rate: float,
) -> OutageEvents:
    dt, relay, dest = outage_event_arrays(
        gains.g_rs ** 2, gains.g_ds ** 2, gains.g_dr ** 2,
        alloc.alpha_s, alloc.beta_s, alloc.k_s, alloc.beta_r,
        budget, target_rate,
    )
    return OutageEvents(dt=bool(dt), relay=bool(relay), dest=bool(dest))


# ============================================================================
# High-SNR asymptotics
# ============================================================================

def destination_bracket(a: float, form: AsymptoticForm = AsymptoticForm.DERIVED) -> float:
    """
    Factor multiplying lambda_ds lambda_dr (2^R - 1)^2 / (2 P^2) in the destination asymptote.

    DERIVED is the leading term of the destination-outage integral and
    equals 1 at a = 0 and 1/3 at a = 1. PRINTED is the published expression,
    which vanishes at a = 1.
    """
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"alpha fraction must lie in [0, 1], got {a}")
    c = 1.0 - a
    if form == AsymptoticForm.PRINTED:
        if c < BRACKET_SERIES_BELOW:
            logger.debug(f"Printed bracket series branch at a={a}")
            return math.sqrt(a) * (1.0 + c / 6.0 + 3.0 * c * c / 40.0) - 1.0
        return math.sqrt(a / c) * math.asin(math.sqrt(c)) - 1.0

    if c < BRACKET_SERIES_BELOW:
        logger.debug(f"Derived bracket series branch at a={a}")
        return 1.0 / 3.0 + 2.0 * c / 15.0 + 8.0 * c * c / 105.0
    return 1.0 + 2.0 * a + a * (2.0 * a - 1.0) / c - math.sqrt(a) * math.asin(math.sqrt(c)) / c ** 1.5


def outage_asymptotic(
    stats: FadingStats,
    a: float,
    b: float,
    P: float,
    target_rate: float,
    form: AsymptoticForm = AsymptoticForm.DERIVED,
) -> OutageBreakdown:
    """Second-order high-SNR outage for Ps = Pr = P and split alpha_s = aP, beta_s = bP."""
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"alpha fraction must lie in [0, 1], got {a}")
    if b <= 0:
        raise DomainError(f"beta fraction must be positive, got {b}")
    if abs(a + b - 1.0) > SPLIT_TOL:
        raise DomainError(f"a + b must equal 1, got {a + b}")
    if P <= 0:
        raise DomainError(f"P must be positive, got {P}")

    threshold = _outage_threshold(target_rate)
    base = threshold ** 2 / (2.0 * P * P)
    l_rs, l_ds, l_dr = stats.lambda_rs, stats.lambda_ds, stats.lambda_dr_tilde

    p_dt = l_ds * l_rs * base
    relay_scale = b if form == AsymptoticForm.PRINTED else b * b
    p_relay = l_ds * l_rs * base / relay_scale
    p_dest = l_ds * l_dr * base * destination_bracket(a, form)
    return OutageBreakdown(p_dt=p_dt, p_relay=p_relay, p_dest=p_dest)


# ============================================================================
# Relay power savings
# ============================================================================

def expected_savings_perfect(stats: FadingStats, budget: PowerBudget) -> float:
    """Mean unspent relay power in R1 with perfect CSI."""
    Ps, Pr = budget.Ps, budget.Pr
    l_rs, l_ds, l_dr = stats.lambda_rs, stats.lambda_ds, stats.lambda_dr
    # ln(l_dr) - ln((Pr/Ps) l_rs + l_dr)
    log_ratio = -math.log1p((Pr / Ps) * l_rs / l_dr)
    savings = l_ds * l_dr * (Ps * log_ratio + Pr * l_rs / l_dr) / (l_rs * (l_rs + l_ds))
    if savings < -1e-12 * Pr or savings > Pr * (1 + 1e-12):
        raise InternalContradictionError(f"Perfect-CSI savings {savings:.6g} outside [0, {Pr:.6g}]")
    return min(max(savings, 0.0), Pr)


def expected_savings_practical(stats: FadingStats, budget: PowerBudget) -> float:
    """
    Mean unspent relay power with practical CSI.

    Zero unless the average regime is R1; inside it the relay power is the
    unclamped linear interpolation in the instantaneous receive SNR.
    """
    if average_regime(stats, budget) != Regime.R1:
        return 0.0
    l_rs, l_ds, l_dr = stats.lambda_rs, stats.lambda_ds, stats.lambda_dr
    savings = budget.Pr - budget.Ps * (l_ds * l_dr - l_rs * l_dr) / (l_rs * l_ds)
    if savings < -1e-12 * budget.Pr or savings > budget.Pr * (1 + 1e-12):
        raise InternalContradictionError(f"Practical-CSI savings {savings:.6g} outside [0, {budget.Pr:.6g}]")
    return min(max(savings, 0.0), budget.Pr)


def savings_quadrature(stats: FadingStats, budget: PowerBudget, epsabs: float = 1e-10) -> float:
    """
    Perfect-CSI savings by direct triple integration over the squared gains.

    Outer variable g_dr^2, middle g_ds^2, inner g_rs^2 over the R1 interval
    (g_ds^2, g_ds^2 + (Pr/Ps) g_dr^2].
    """
    Ps, Pr = budget.Ps, budget.Pr
    l_rs, l_ds, l_dr = stats.lambda_rs, stats.lambda_ds, stats.lambda_dr

    def integrand(x_rs: float, y_ds: float, u_dr: float) -> float:
        saving = Pr - Ps * (x_rs - y_ds) / u_dr
        density = l_rs * math.exp(-l_rs * x_rs) * l_ds * math.exp(-l_ds * y_ds) * l_dr * math.exp(-l_dr * u_dr)
        return saving * density

    value, abserr = integrate.tplquad(
        integrand,
        0.0, np.inf,
        lambda u: 0.0, lambda u: np.inf,
        lambda u, y: y, lambda u, y: y + (Pr / Ps) * u,
        epsabs=epsabs,
    )
    logger.debug(f"Savings triple quadrature {value:.10g} (err {abserr:.1e})")
    return value
