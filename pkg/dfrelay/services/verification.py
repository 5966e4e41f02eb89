"""
Verification service - every closed form checked against its oracle.

A run produces a VerificationRun holding one CheckResult per check. Runs are
only written to the database when record_run is called.
"""
import logging
import math
from typing import Callable, List, Optional

import numpy as np
from scipy import stats as scistats
from sqlalchemy.engine import Engine

from dfrelay.database import create_db_and_tables, get_engine, get_session
from dfrelay.models import (
    CheckResult, CsiModel, FadingStats, Geometry, LinkGains, McConfig, OracleGrid,
    OutagePolicy, PolicyKind, PowerBudget, VerificationRun,
)
from dfrelay.services.analysis import (
    expected_savings_perfect, expected_savings_practical, outage_asymptotic, outage_closed_form,
    regime_probabilities, savings_quadrature,
)
from dfrelay.services.channel import budget_for_snr, pathloss_stats
from dfrelay.services.montecarlo import (
    diversity_slope, estimate_outage, estimate_rate, estimate_regime_probs, estimate_savings,
)
from dfrelay.services.ratecore import (
    optimal_allocation, optimal_allocation_arrays, oracle_allocation, rate_constraint_arrays,
)

logger = logging.getLogger(__name__)

LEVELS = {
    # trials, allocation channels, regime/savings tuples, outage SNR points, quadrature sets
    "quick": {"trials": 100_000, "channels": 200, "tuples": 5, "snrs": [10.0, 20.0], "quadrature": 2},
    "full": {"trials": 1_000_000, "channels": 1000, "tuples": 20, "snrs": [10.0, 15.0, 20.0, 25.0, 30.0], "quadrature": 20},
}

CONFIDENCE = 0.9973  # three standard errors for a single comparison
FAULT_SCALE = 1.05

# Outage-curve geometry: relay halfway between source and destination
OUTAGE_GEOMETRY = Geometry(source_pos=(0.0, 0.0), relay_pos=(10.0, 0.0), dest_pos=(20.0, 0.0), gamma=3.6)
OUTAGE_TARGET = 5.0
OUTAGE_ALPHA_FRACTION = 0.5


def family_k(comparisons: int) -> float:
    """Standard-error multiplier keeping the family-wise confidence at three sigma."""
    per_test = CONFIDENCE ** (1.0 / max(comparisons, 1))
    return float(scistats.norm.isf((1.0 - per_test) / 2.0))


class _Suite:
    """Collects CheckResults for one run."""

    def __init__(self, inject_fault: bool):
        self.checks: List[CheckResult] = []
        self.scale = FAULT_SCALE if inject_fault else 1.0

    def add(self, name: str, measured: float, expected: float, tolerance: float, passed: Optional[bool] = None) -> None:
        deviation = abs(measured - expected)
        ok = deviation <= tolerance if passed is None else passed
        self.checks.append(CheckResult(
            name=name, measured=measured, expected=expected,
            tolerance=tolerance, deviation=deviation, passed=bool(ok),
        ))
        log = logger.info if ok else logger.warning
        log(f"{'✅' if ok else '❌'} {name}: measured {measured:.6g}, expected {expected:.6g} (tol {tolerance:.3g})")

    def agreement(self, name: str, estimate, closed: float, k: float) -> None:
        closed = closed * self.scale
        n = estimate.trials
        spread = max(estimate.stderr, math.sqrt(max(closed * (1.0 - closed), 0.0) / n) if 0 <= closed <= 1 else 0.0)
        self.add(name, estimate.mean, closed, k * spread + 1e-12)


def _random_stats(rng: np.random.Generator, budget: PowerBudget) -> FadingStats:
    l_rs, l_ds, l_dr = rng.uniform(0.5, 3.0, size=3)
    return FadingStats(
        lambda_rs=l_rs, lambda_ds=l_ds, lambda_dr=l_dr, lambda_dr_tilde=(budget.Ps / budget.Pr) * l_dr,
    )


def _random_budget(rng: np.random.Generator) -> PowerBudget:
    Ps, Pr = rng.uniform(0.5, 2.0, size=2)
    return PowerBudget(Ps=Ps, Pr=Pr)


# ============================================================================
# Checks
# ============================================================================

def check_allocation(suite: _Suite, rng: np.random.Generator, channels: int) -> None:
    worst_grid, worst_refined = math.inf, math.inf
    budget = PowerBudget(Ps=1.0, Pr=1.0)
    for _ in range(channels):
        g_rs, g_ds, g_dr = np.sqrt(rng.exponential(1.0, size=3))
        gains = LinkGains(g_rs=g_rs, g_ds=g_ds, g_dr=g_dr)
        closed = optimal_allocation(gains, budget).rate
        grid = oracle_allocation(gains, budget, OracleGrid(refine=False)).rate
        refined = oracle_allocation(gains, budget, OracleGrid(refine=True)).rate
        worst_grid = min(worst_grid, closed - grid)
        worst_refined = min(worst_refined, closed - refined)
    suite.add("allocation_vs_grid_oracle", worst_grid, 0.0, 1e-4, passed=worst_grid >= -1e-4)
    suite.add("allocation_vs_refined_oracle", worst_refined, 0.0, 1e-6, passed=worst_refined >= -1e-6)


def check_crossing(suite: _Suite, rng: np.random.Generator, samples: int = 10_000) -> None:
    budget = PowerBudget(Ps=1.0, Pr=1.0)
    g2 = rng.exponential(1.0, size=(samples, 3))
    out = optimal_allocation_arrays(g2[:, 0], g2[:, 1], g2[:, 2], budget)
    j1, j2 = rate_constraint_arrays(g2[:, 0], g2[:, 1], g2[:, 2], out["alpha_s"], out["beta_s"], out["k_s"], out["beta_r"])
    relay = out["regime"] != 0
    worst = float(np.max(np.abs(j1 - j2)[relay])) if np.any(relay) else 0.0
    suite.add("rate_crossing_identity", worst, 0.0, 1e-9)


def check_regime_probabilities(suite: _Suite, rng: np.random.Generator, tuples: int, cfg: McConfig) -> None:
    k = family_k(3 * tuples)
    for i in range(tuples):
        budget = _random_budget(rng)
        stats = _random_stats(rng, budget)
        closed = regime_probabilities(stats)
        estimates = estimate_regime_probs(stats, budget, cfg)
        for label, est, p in zip(("p0", "p1", "p2"), estimates, (closed.p0, closed.p1, closed.p2)):
            suite.agreement(f"regime_{label}[{i}]", est, p, k)


def check_outage(suite: _Suite, snrs: List[float], cfg: McConfig) -> None:
    policy = OutagePolicy(kind=PolicyKind.FIXED, alpha_fraction=OUTAGE_ALPHA_FRACTION)
    k = family_k(3 * len(snrs))
    for snr_db in snrs:
        budget = budget_for_snr(snr_db, OUTAGE_GEOMETRY.d_ds, OUTAGE_GEOMETRY.gamma)
        stats = pathloss_stats(OUTAGE_GEOMETRY, budget)
        alpha = OUTAGE_ALPHA_FRACTION * budget.Ps
        closed = outage_closed_form(stats, alpha, budget.Ps - alpha, budget, OUTAGE_TARGET)
        mc = estimate_outage(stats, budget, OUTAGE_TARGET, policy, cfg)
        suite.agreement(f"outage_dt@{snr_db:g}dB", mc.p_dt, closed.p_dt, k)
        suite.agreement(f"outage_relay@{snr_db:g}dB", mc.p_relay, closed.p_relay, k)
        suite.agreement(f"outage_dest@{snr_db:g}dB", mc.p_dest, closed.p_dest, k)


def check_diversity(suite: _Suite) -> None:
    budget = budget_for_snr(30.0, OUTAGE_GEOMETRY.d_ds, OUTAGE_GEOMETRY.gamma)
    stats = pathloss_stats(OUTAGE_GEOMETRY, budget)
    grid = np.linspace(30.0, 50.0, 9)
    composite = diversity_slope(stats, OUTAGE_TARGET, grid)
    direct = diversity_slope(stats, OUTAGE_TARGET, grid, policy=OutagePolicy(kind=PolicyKind.DIRECT))
    suite.add("diversity_slope_composite", composite, -2.0, 0.2)
    suite.add("diversity_slope_direct", direct, -1.0, 0.2)


def check_asymptotic(suite: _Suite) -> None:
    snr_db = 40.0
    budget = budget_for_snr(snr_db, OUTAGE_GEOMETRY.d_ds, OUTAGE_GEOMETRY.gamma)
    stats = pathloss_stats(OUTAGE_GEOMETRY, budget)
    for a in (0.2, 0.5, 0.8):
        b = 1.0 - a
        closed = outage_closed_form(stats, a * budget.Ps, b * budget.Ps, budget, OUTAGE_TARGET).total
        asym = outage_asymptotic(stats, a, b, budget.Ps, OUTAGE_TARGET).total
        ratio = closed / asym if asym > 0 else math.inf
        suite.add(f"asymptotic_ratio[a={a}]", ratio, 1.0, 0.1)


def check_savings(suite: _Suite, rng: np.random.Generator, tuples: int, quadrature: int, cfg: McConfig) -> None:
    k = family_k(2 * tuples)
    for i in range(tuples):
        budget = _random_budget(rng)
        stats = _random_stats(rng, budget)
        perfect = estimate_savings(stats, budget, CsiModel.PERFECT, cfg)
        practical = estimate_savings(stats, budget, CsiModel.PRACTICAL, cfg, clamp=False)
        suite.agreement(f"savings_perfect[{i}]", perfect, expected_savings_perfect(stats, budget), k)
        suite.agreement(f"savings_practical[{i}]", practical, expected_savings_practical(stats, budget), k)
        if i < quadrature:
            quad = savings_quadrature(stats, budget)
            suite.add(f"savings_quadrature[{i}]", quad, expected_savings_perfect(stats, budget) * suite.scale, 1e-6)


def check_determinism(suite: _Suite, cfg: McConfig) -> None:
    budget = budget_for_snr(5.0, OUTAGE_GEOMETRY.d_ds, OUTAGE_GEOMETRY.gamma)
    stats = pathloss_stats(OUTAGE_GEOMETRY, budget)
    small = cfg.model_copy(update={"trials": min(cfg.trials, 50_000)})
    serial = estimate_rate(stats, budget, CsiModel.PERFECT, small.model_copy(update={"workers": 1, "chunk": 4096}))
    parallel = estimate_rate(stats, budget, CsiModel.PERFECT, small.model_copy(update={"workers": 4, "chunk": 1000}))
    same = serial.mean == parallel.mean and serial.stderr == parallel.stderr
    suite.add("determinism_under_chunking", parallel.mean, serial.mean, 0.0, passed=same)


# ============================================================================
# Runs
# ============================================================================

def run_verification(level: str, seed: int, workers: int = 1, inject_fault: bool = False) -> VerificationRun:
    """Execute the suite at the given level. inject_fault corrupts the closed forms by 5%."""
    if level not in LEVELS:
        raise ValueError(f"unknown verification level '{level}'")
    settings = LEVELS[level]
    cfg = McConfig(trials=settings["trials"], seed=seed, workers=workers)
    rng = np.random.default_rng(seed)
    suite = _Suite(inject_fault)
    if inject_fault:
        logger.warning("⚠️ Fault injection enabled: closed forms scaled by 5%")

    steps: List[Callable[[], None]] = [
        lambda: check_allocation(suite, rng, settings["channels"]),
        lambda: check_crossing(suite, rng),
        lambda: check_regime_probabilities(suite, rng, settings["tuples"], cfg),
        lambda: check_outage(suite, settings["snrs"], cfg),
        lambda: check_diversity(suite),
        lambda: check_asymptotic(suite),
        lambda: check_savings(suite, rng, settings["tuples"], settings["quadrature"], cfg),
        lambda: check_determinism(suite, cfg),
    ]
    for step in steps:
        step()

    run = VerificationRun(level=level, seed=seed, trials=cfg.trials, passed=all(c.passed for c in suite.checks))
    run.checks = suite.checks
    failed = sum(not c.passed for c in suite.checks)
    logger.info(f"Verification {level}: {len(suite.checks) - failed}/{len(suite.checks)} checks passed")
    return run


def record_run(run: VerificationRun, engine: Optional[Engine] = None) -> int:
    """Persist a run and its checks; returns the run id."""
    engine = engine or get_engine()
    create_db_and_tables(engine)
    with get_session(engine) as session:
        session.add(run)
        session.commit()
        session.refresh(run)
        logger.info(f"✅ Recorded verification run {run.id} ({len(run.checks)} checks)")
        return run.id
