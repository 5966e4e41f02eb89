"""
SQLModel records for dfrelay.

Value types (budgets, gains, allocations, estimates) are plain SQLModel
models validated by pydantic; VerificationRun and CheckResult are tables.
"""
import math
from datetime import datetime, timezone
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import model_validator
from sqlmodel import SQLModel, Field, Relationship

from dfrelay.exceptions import ConstraintViolationError

# Absolute slack when checking allocations against budgets
FEASIBILITY_TOL = 1e-9


class Regime(str, Enum):
    """Link-state regime: which DF technique is rate-optimal."""
    R0 = "R0"  # direct transmission
    R1 = "R1"  # independent coding
    R2 = "R2"  # block Markov coding


class CsiModel(str, Enum):
    """How much channel state the source and relay know."""
    PERFECT = "perfect"
    PRACTICAL = "practical"
    LONG_TERM = "long_term"
    DIRECT = "direct"  # baseline: relay never used


class PolicyKind(str, Enum):
    """Relay-power policy used by the outage estimator."""
    FIXED = "fixed"
    PERFECT = "perfect"
    LONG_TERM_PARTIAL = "long_term_partial"
    LONG_TERM_FULL = "long_term_full"
    DIRECT = "direct"


class AsymptoticForm(str, Enum):
    DERIVED = "derived"
    PRINTED = "printed"


# ============================================================================
# Channel
# ============================================================================

class PowerBudget(SQLModel):
    """Maximum transmit powers, linear and normalised to unit noise."""
    Ps: float = Field(gt=0)
    Pr: float = Field(gt=0)


class Geometry(SQLModel):
    """Node positions in meters and pathloss exponents."""
    source_pos: Tuple[float, float] = (0.0, 0.0)
    relay_pos: Tuple[float, float]
    dest_pos: Tuple[float, float] = (20.0, 0.0)
    gamma: float = Field(default=3.6, gt=0)
    # Per-link overrides; None means the shared gamma
    gamma_rs: Optional[float] = Field(default=None, gt=0)
    gamma_ds: Optional[float] = Field(default=None, gt=0)
    gamma_dr: Optional[float] = Field(default=None, gt=0)

    @property
    def d_rs(self) -> float:
        return math.dist(self.source_pos, self.relay_pos)

    @property
    def d_ds(self) -> float:
        return math.dist(self.source_pos, self.dest_pos)

    @property
    def d_dr(self) -> float:
        return math.dist(self.relay_pos, self.dest_pos)

    def exponent(self, link: str) -> float:
        override = getattr(self, f"gamma_{link}")
        return self.gamma if override is None else override


class FadingStats(SQLModel):
    """Exponential rate parameters of the squared link amplitudes."""
    lambda_rs: float = Field(gt=0)
    lambda_ds: float = Field(gt=0)
    lambda_dr: float = Field(gt=0)
    lambda_dr_tilde: float = Field(gt=0)


class LinkGains(SQLModel):
    """Instantaneous link amplitudes (not squared)."""
    g_rs: float = Field(ge=0)
    g_ds: float = Field(ge=0)
    g_dr: float = Field(ge=0)


class SnrTriple(SQLModel):
    """Received SNRs: at the relay, direct-only, and relay fully used."""
    gamma_s: float = Field(ge=0)
    gamma_o: float = Field(ge=0)
    gamma_d: float = Field(ge=0)


# ============================================================================
# Rates and allocations
# ============================================================================

class PowerAllocation(SQLModel):
    """Decision variables of the rate maximisation."""
    alpha_s: float = Field(ge=0)
    beta_s: float = Field(ge=0)
    k_s: float = Field(ge=0)
    beta_r: float = Field(ge=0)

    @property
    def relay_power(self) -> float:
        return self.k_s * self.alpha_s + self.beta_r

    def check_feasible(self, budget: PowerBudget, tol: float = FEASIBILITY_TOL) -> None:
        """Raise ConstraintViolationError if either budget is exceeded."""
        source = self.alpha_s + self.beta_s
        if source > budget.Ps * (1 + tol) + tol:
            raise ConstraintViolationError(
                f"Source power {source:.6g} exceeds Ps={budget.Ps:.6g}"
            )
        if self.relay_power > budget.Pr * (1 + tol) + tol:
            raise ConstraintViolationError(
                f"Relay power {self.relay_power:.6g} exceeds Pr={budget.Pr:.6g}"
            )


class RatePair(SQLModel):
    """Relay-decoding (j1) and destination-decoding (j2) rate constraints, bits/s/Hz."""
    j1: float = Field(ge=0)
    j2: float = Field(ge=0)


class AllocationResult(SQLModel):
    regime: Regime
    allocation: PowerAllocation
    rate: float


class OracleGrid(SQLModel):
    """Search grid for the brute-force allocation oracle."""
    alpha_points: int = Field(default=401)
    beta_r_points: int = Field(default=401)
    refine: bool = True


class OracleResult(SQLModel):
    allocation: PowerAllocation
    rate: float
    relay_used: bool = True


# ============================================================================
# CSI
# ============================================================================

class AverageSnrs(SQLModel):
    avg_gamma_s: float = Field(gt=0)
    avg_gamma_o: float = Field(gt=0)
    avg_gamma_d: float = Field(gt=0)


class EllipseParams(SQLModel):
    """Relay-use ellipse in the canonical frame (source at origin, destination on +x)."""
    d_ds: float = Field(gt=0)
    gamma: float = Field(gt=0)
    semi_major: float = Field(gt=0)
    semi_minor: float = Field(ge=0)
    center_x: float
    center_y: float = 0.0

    def contains(self, x: float, y: float) -> bool:
        # Major axis is vertical: foci sit above and below the center
        if self.semi_minor == 0:
            return x == self.center_x and abs(y - self.center_y) <= self.semi_major
        u = (x - self.center_x) / self.semi_minor
        v = (y - self.center_y) / self.semi_major
        return u * u + v * v <= 1.0


# ============================================================================
# Analysis
# ============================================================================

class RegimeProbabilities(SQLModel):
    p0: float = Field(ge=0, le=1)
    p1: float = Field(ge=0, le=1)
    p2: float = Field(ge=0, le=1)


class OutageBreakdown(SQLModel):
    """Outage components: direct transmission, relay, destination."""
    p_dt: float
    p_relay: float
    p_dest: float

    @property
    def total(self) -> float:
        return self.p_dt + self.p_relay + self.p_dest


class OutageEvents(SQLModel):
    """Disjoint outage events for one fading realization."""
    dt: bool = False  # direct transmission in R0 below target
    relay: bool = False  # relay cannot decode in R1 or R2
    dest: bool = False  # relay decodes, destination does not

    @property
    def in_outage(self) -> bool:
        return self.dt or self.relay or self.dest


class OutageConstants(SQLModel):
    beta1: float = Field(ge=0)
    eta1: float = Field(ge=0)
    c1: float = Field(ge=0, le=1)
    c2: float = Field(ge=0, le=1)
    alpha_s: float = Field(ge=0)
    Ps: float = Field(gt=0)
    threshold: float = Field(ge=0)  # 2^R - 1

    def zeta1(self, g_ds: float) -> float:
        """Largest scaled relay-destination amplitude still in destination outage."""
        radicand = g_ds * g_ds * (self.alpha_s - self.Ps) + self.threshold
        radicand = max(radicand, 0.0)
        return (-g_ds * math.sqrt(self.alpha_s) + math.sqrt(radicand)) / math.sqrt(self.Ps)


# ============================================================================
# Monte Carlo
# ============================================================================

class McConfig(SQLModel):
    trials: int = Field(ge=1)
    seed: int = Field(ge=0)
    chunk: int = Field(default=65_536, ge=1)
    workers: int = Field(default=1, ge=1)


class Estimate(SQLModel):
    mean: float
    stderr: float = Field(ge=0)
    trials: int = Field(ge=1)

    def agrees_with(self, value: float, k: float = 3.0, floor: float = 1e-12) -> bool:
        """True when value lies within k standard errors of the mean."""
        return abs(self.mean - value) <= k * self.stderr + floor


class OutagePolicy(SQLModel):
    kind: PolicyKind
    alpha_fraction: float = Field(default=0.0, ge=0, le=1)

    @model_validator(mode="after")
    def _fixed_needs_beta(self) -> "OutagePolicy":
        if self.kind == PolicyKind.FIXED and self.alpha_fraction >= 1.0:
            raise ValueError("fixed policy needs beta_s > 0 (alpha_fraction < 1)")
        return self


class OutageEstimate(SQLModel):
    total: Estimate
    p_dt: Estimate
    p_relay: Estimate
    p_dest: Estimate


# ============================================================================
# CLI
# ============================================================================

class SweepSpec(SQLModel):
    """Grid and physical parameters for a spatial sweep."""
    x_range: Tuple[float, float] = (-10.0, 30.0)
    y_range: Tuple[float, float] = (-20.0, 20.0)
    resolution: float = Field(default=0.5, gt=0)
    source_pos: Tuple[float, float] = (0.0, 0.0)
    dest_pos: Tuple[float, float] = (20.0, 0.0)
    gamma: float = Field(default=3.6, gt=0)
    snr_db: float = 5.0
    target_rate: float = Field(default=5.0, gt=0)
    model: CsiModel = CsiModel.PRACTICAL
    mc: McConfig

    @model_validator(mode="after")
    def _ranges_nonempty(self) -> "SweepSpec":
        for lo, hi in (self.x_range, self.y_range):
            if hi < lo:
                raise ValueError(f"empty range ({lo}, {hi})")
        return self

    def axis(self, lo: float, hi: float) -> List[float]:
        count = int(math.floor((hi - lo) / self.resolution + 1e-9)) + 1
        return [lo + i * self.resolution for i in range(count)]

    def grid(self) -> List[Tuple[float, float]]:
        """Grid points in row-major order: y outer, x inner."""
        xs = self.axis(*self.x_range)
        ys = self.axis(*self.y_range)
        return [(x, y) for y in ys for x in xs]


class CurveSpec(SQLModel):
    """Fixed geometry and SNR axis for outage-versus-SNR curves."""
    source_pos: Tuple[float, float] = (0.0, 0.0)
    relay_pos: Tuple[float, float] = (10.0, 0.0)
    dest_pos: Tuple[float, float] = (20.0, 0.0)
    gamma: float = Field(default=3.6, gt=0)
    target_rate: float = Field(default=5.0, gt=0)
    snr_range: Tuple[float, float] = (0.0, 50.0)
    snr_step: float = Field(default=2.5, gt=0)
    alpha_fraction: float = Field(default=0.5, ge=0, lt=1)
    policies: List[PolicyKind] = [PolicyKind.FIXED, PolicyKind.LONG_TERM_PARTIAL, PolicyKind.LONG_TERM_FULL]
    mc: McConfig

    @model_validator(mode="after")
    def _snr_range_nonempty(self) -> "CurveSpec":
        if self.snr_range[1] < self.snr_range[0]:
            raise ValueError(f"empty SNR range {self.snr_range}")
        return self

    def snr_axis(self) -> List[float]:
        lo, hi = self.snr_range
        count = int(math.floor((hi - lo) / self.snr_step + 1e-9)) + 1
        return [lo + i * self.snr_step for i in range(count)]


# ============================================================================
# Verification history (tables)
# ============================================================================

class VerificationRun(SQLModel, table=True):
    """One execution of the verify suite."""
    __tablename__ = "verification_runs"

    id: Optional[int] = Field(default=None, primary_key=True)
    started_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    level: str = Field(index=True)  # quick, full
    seed: int
    trials: int
    passed: bool = Field(default=False)

    # Relationships
    checks: List["CheckResult"] = Relationship(back_populates="run")


class CheckResult(SQLModel, table=True):
    """Outcome of a single closed-form-vs-oracle check."""
    __tablename__ = "check_results"

    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: Optional[int] = Field(default=None, foreign_key="verification_runs.id")
    name: str = Field(index=True)
    measured: float
    expected: float
    tolerance: float
    deviation: float
    passed: bool

    # Relationships
    run: Optional[VerificationRun] = Relationship(back_populates="checks")
