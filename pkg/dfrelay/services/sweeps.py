"""
Sweep service - row builders behind the figure subcommands.

Each builder returns (columns, rows) with rows in grid order. Grid points are
evaluated on a thread pool; points where the relay sits on the source or the
destination carry NaN values instead of failing the sweep.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from dfrelay.config import ELLIPSE_TABLE_PATH
from dfrelay.exceptions import DegenerateGeometryError, ValidationError
from dfrelay.models import (
    CsiModel, CurveSpec, Geometry, LinkGains, McConfig, OutagePolicy,
    PolicyKind, Regime, SweepSpec,
)
from dfrelay.services.analysis import (
    expected_savings_perfect, expected_savings_practical, outage_closed_form,
)
from dfrelay.services.channel import budget_for_snr, mean_squared_gains, pathloss_stats
from dfrelay.services.csi import EllipseTable, default_table, ensure_ellipse
from dfrelay.services.montecarlo import estimate_outage, estimate_rate, estimate_savings
from dfrelay.services.ratecore import classify_regime

logger = logging.getLogger(__name__)

Row = Dict[str, Any]
NAN = float("nan")

# Outage threshold for the outage-region flag
OUTAGE_REGION_LIMIT = 0.02


def _point_config(mc: McConfig) -> McConfig:
    # Grid points run in parallel; trials within a point stay serial
    return mc.model_copy(update={"workers": 1})


def _map_points(fn: Callable[[Any], Row], points: Sequence[Any], workers: int) -> List[Row]:
    """Apply fn to every point, keeping input order in the output."""
    if workers <= 1 or len(points) <= 1:
        return [fn(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, points))


def _geometry(spec: SweepSpec, x: float, y: float) -> Geometry:
    return Geometry(source_pos=spec.source_pos, relay_pos=(x, y), dest_pos=spec.dest_pos, gamma=spec.gamma)


# ============================================================================
# Spatial maps
# ============================================================================

def regime_map_rows(spec: SweepSpec) -> Tuple[List[str], List[Row]]:
    """Regime of every relay position from pathloss-only gains."""
    d_ds = math.dist(spec.source_pos, spec.dest_pos)
    budget = budget_for_snr(spec.snr_db, d_ds, spec.gamma)

    def evaluate(point: Tuple[float, float]) -> Row:
        x, y = point
        geometry = _geometry(spec, x, y)
        try:
            stats = pathloss_stats(geometry, budget)
        except DegenerateGeometryError:
            # Relay on the source sees an unbounded relay gain; on the destination g_rs = g_ds
            tag = Regime.R2 if geometry.d_rs < geometry.d_dr else Regime.R0
            return {"x": x, "y": y, "regime": tag.value}
        g_rs2, g_ds2, g_dr2 = mean_squared_gains(stats)
        gains = LinkGains(g_rs=math.sqrt(g_rs2), g_ds=math.sqrt(g_ds2), g_dr=math.sqrt(g_dr2))
        return {"x": x, "y": y, "regime": classify_regime(gains, budget).value}

    return ["x", "y", "regime"], _map_points(evaluate, spec.grid(), spec.mc.workers)


def rate_map_rows(
    spec: SweepSpec,
    baseline: CsiModel,
    table: Optional[EllipseTable] = None,
) -> Tuple[List[str], List[Row]]:
    """Mean rate under spec.model and a baseline model, with the percentage gain."""
    d_ds = math.dist(spec.source_pos, spec.dest_pos)
    budget = budget_for_snr(spec.snr_db, d_ds, spec.gamma)
    cfg = _point_config(spec.mc)
    if {CsiModel.PRACTICAL, CsiModel.LONG_TERM} & {spec.model, baseline}:
        path = None
        if table is None:
            table, path = default_table(), ELLIPSE_TABLE_PATH
        ensure_ellipse(table, d_ds, spec.gamma, spec.snr_db, cfg, path=path)

    def evaluate(point: Tuple[float, float]) -> Row:
        x, y = point
        geometry = _geometry(spec, x, y)
        try:
            stats = pathloss_stats(geometry, budget)
        except DegenerateGeometryError:
            return {"x": x, "y": y, "rate": NAN, "rate_stderr": NAN, "baseline_rate": NAN,
                    "baseline_stderr": NAN, "gain_pct": NAN}
        rate = estimate_rate(stats, budget, spec.model, cfg, geometry=geometry, table=table)
        base = estimate_rate(stats, budget, baseline, cfg, geometry=geometry, table=table)
        return {
            "x": x, "y": y,
            "rate": rate.mean, "rate_stderr": rate.stderr,
            "baseline_rate": base.mean, "baseline_stderr": base.stderr,
            "gain_pct": 100.0 * (rate.mean / base.mean - 1.0) if base.mean > 0 else NAN,
        }

    logger.info(f"Rate map {spec.model.value} vs {baseline.value} over {len(spec.grid())} points")
    columns = ["x", "y", "rate", "rate_stderr", "baseline_rate", "baseline_stderr", "gain_pct"]
    return columns, _map_points(evaluate, spec.grid(), spec.mc.workers)


def _closed_form_savings(model: CsiModel, stats, budget) -> float:
    if model == CsiModel.PERFECT:
        return expected_savings_perfect(stats, budget)
    return expected_savings_practical(stats, budget)


def savings_map_rows(spec: SweepSpec, clamp: bool = False) -> Tuple[List[str], List[Row]]:
    """Expected relay savings as a fraction of Pr, closed form next to Monte Carlo."""
    if spec.model not in (CsiModel.PERFECT, CsiModel.PRACTICAL):
        raise ValidationError(f"savings map needs perfect or practical CSI, got {spec.model.value}")
    d_ds = math.dist(spec.source_pos, spec.dest_pos)
    budget = budget_for_snr(spec.snr_db, d_ds, spec.gamma)
    cfg = _point_config(spec.mc)

    def evaluate(point: Tuple[float, float]) -> Row:
        x, y = point
        try:
            stats = pathloss_stats(_geometry(spec, x, y), budget)
        except DegenerateGeometryError:
            return {"x": x, "y": y, "closed_form_fraction": NAN, "mc_fraction": NAN, "mc_stderr_fraction": NAN}
        mc = estimate_savings(stats, budget, spec.model, cfg, clamp=clamp)
        return {
            "x": x, "y": y,
            "closed_form_fraction": _closed_form_savings(spec.model, stats, budget) / budget.Pr,
            "mc_fraction": mc.mean / budget.Pr,
            "mc_stderr_fraction": mc.stderr / budget.Pr,
        }

    columns = ["x", "y", "closed_form_fraction", "mc_fraction", "mc_stderr_fraction"]
    return columns, _map_points(evaluate, spec.grid(), spec.mc.workers)


def outage_region_rows(spec: SweepSpec) -> Tuple[List[str], List[Row]]:
    """Long-term-CSI outage with minimum relay power, the below-2% flag and the expected savings."""
    d_ds = math.dist(spec.source_pos, spec.dest_pos)
    budget = budget_for_snr(spec.snr_db, d_ds, spec.gamma)
    cfg = _point_config(spec.mc)
    policy = OutagePolicy(kind=PolicyKind.LONG_TERM_PARTIAL)

    def evaluate(point: Tuple[float, float]) -> Row:
        x, y = point
        try:
            stats = pathloss_stats(_geometry(spec, x, y), budget)
        except DegenerateGeometryError:
            return {"x": x, "y": y, "outage": NAN, "outage_stderr": NAN, "below_limit": "", "savings_fraction": NAN}
        est = estimate_outage(stats, budget, spec.target_rate, policy, cfg)
        return {
            "x": x, "y": y,
            "outage": est.total.mean,
            "outage_stderr": est.total.stderr,
            "below_limit": int(est.total.mean < OUTAGE_REGION_LIMIT),
            # long-term relay power is the mean of the practical one, so the expectations agree
            "savings_fraction": expected_savings_practical(stats, budget) / budget.Pr,
        }

    columns = ["x", "y", "outage", "outage_stderr", "below_limit", "savings_fraction"]
    return columns, _map_points(evaluate, spec.grid(), spec.mc.workers)


def tradeoff_rows(spec: SweepSpec, table: Optional[EllipseTable] = None) -> Tuple[List[str], List[Row]]:
    """Composite DF against the block-Markov-only baseline along the source-destination axis."""
    if spec.model not in (CsiModel.PERFECT, CsiModel.PRACTICAL):
        raise ValidationError(f"trade-off sweep needs perfect or practical CSI, got {spec.model.value}")
    d_ds = math.dist(spec.source_pos, spec.dest_pos)
    budget = budget_for_snr(spec.snr_db, d_ds, spec.gamma)
    cfg = _point_config(spec.mc)
    sx, sy = spec.source_pos
    ux, uy = (spec.dest_pos[0] - sx) / d_ds, (spec.dest_pos[1] - sy) / d_ds
    offsets = spec.axis(*spec.x_range)

    def evaluate(t: float) -> Row:
        x, y = sx + t * ux, sy + t * uy
        try:
            stats = pathloss_stats(_geometry(spec, x, y), budget)
        except DegenerateGeometryError:
            return {"x": x, "y": y, "composite_rate": NAN, "classical_rate": NAN,
                    "composite_savings_fraction": NAN, "classical_savings_fraction": 0.0}
        composite = estimate_rate(stats, budget, spec.model, cfg, relay_used=True)
        classical = estimate_rate(stats, budget, spec.model, cfg, relay_used=True, full_relay_power=True)
        savings = estimate_savings(stats, budget, spec.model, cfg, clamp=True)
        return {
            "x": x, "y": y,
            "composite_rate": composite.mean,
            "classical_rate": classical.mean,
            "composite_savings_fraction": savings.mean / budget.Pr,
            "classical_savings_fraction": 0.0,
        }

    columns = ["x", "y", "composite_rate", "classical_rate", "composite_savings_fraction", "classical_savings_fraction"]
    return columns, _map_points(evaluate, offsets, spec.mc.workers)


# ============================================================================
# Outage curve
# ============================================================================

def outage_curve_rows(spec: CurveSpec) -> Tuple[List[str], List[Row]]:
    """
    Outage versus SNR for each policy.

    Closed-form columns are filled for the fixed-split policy only; every
    policy gets a Monte Carlo estimate with its breakdown.
    """
    geometry = Geometry(source_pos=spec.source_pos, relay_pos=spec.relay_pos, dest_pos=spec.dest_pos, gamma=spec.gamma)
    cfg = _point_config(spec.mc)
    tasks = [(snr, kind) for kind in spec.policies for snr in spec.snr_axis()]

    def evaluate(task: Tuple[float, PolicyKind]) -> Row:
        snr_db, kind = task
        budget = budget_for_snr(snr_db, geometry.d_ds, spec.gamma)
        stats = pathloss_stats(geometry, budget)
        policy = OutagePolicy(kind=kind, alpha_fraction=spec.alpha_fraction if kind == PolicyKind.FIXED else 0.0)
        row: Row = {"snr_db": snr_db, "policy": kind.value}
        if kind == PolicyKind.FIXED:
            alpha = spec.alpha_fraction * budget.Ps
            cf = outage_closed_form(stats, alpha, budget.Ps - alpha, budget, spec.target_rate)
            row.update({"cf_total": cf.total, "cf_p_dt": cf.p_dt, "cf_p_relay": cf.p_relay, "cf_p_dest": cf.p_dest})
        else:
            row.update({"cf_total": NAN, "cf_p_dt": NAN, "cf_p_relay": NAN, "cf_p_dest": NAN})
        mc = estimate_outage(stats, budget, spec.target_rate, policy, cfg)
        row.update({
            "mc_total": mc.total.mean, "mc_stderr": mc.total.stderr,
            "mc_p_dt": mc.p_dt.mean, "mc_p_relay": mc.p_relay.mean, "mc_p_dest": mc.p_dest.mean,
        })
        return row

    rows = _map_points(evaluate, tasks, spec.mc.workers)
    _attach_local_slopes(rows)
    columns = ["snr_db", "policy", "cf_total", "cf_p_dt", "cf_p_relay", "cf_p_dest",
               "mc_total", "mc_stderr", "mc_p_dt", "mc_p_relay", "mc_p_dest", "local_slope"]
    return columns, rows


def _attach_local_slopes(rows: List[Row]) -> None:
    """Backward-difference slope of log10(outage) per SNR decade, closed form when available."""
    previous: Dict[str, Row] = {}
    for row in rows:
        value = row["cf_total"] if not math.isnan(row["cf_total"]) else row["mc_total"]
        prior = previous.get(row["policy"])
        slope = NAN
        if prior is not None:
            prior_value = prior["cf_total"] if not math.isnan(prior["cf_total"]) else prior["mc_total"]
            if value > 0 and prior_value > 0:
                slope = (math.log10(value) - math.log10(prior_value)) / ((row["snr_db"] - prior["snr_db"]) / 10.0)
        row["local_slope"] = slope
        previous[row["policy"]] = row
