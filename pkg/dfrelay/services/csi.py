"""
CSI service - allocations under perfect, practical and long-term CSI,
and the geometric relay-use rule.
"""
import logging
import math
import threading
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from dfrelay.config import ELLIPSE_TABLE_PATH
from dfrelay.exceptions import ValidationError
from dfrelay.models import (
    AllocationResult, AverageSnrs, CsiModel, EllipseParams, FadingStats,
    Geometry, LinkGains, McConfig, PowerAllocation, PowerBudget, Regime,
)
from dfrelay.services.channel import snr_arrays
from dfrelay.services.ratecore import (
    REGIME_TAGS, log2_1p, optimal_allocation_arrays, rate_constraint_arrays, xi_arrays,
)

logger = logging.getLogger(__name__)

# Focal points of the relay-use ellipse as fractions of d_ds: (2, +-8) at d_ds = 20
FOCUS_X_FRACTION = 0.1
FOCUS_Y_FRACTION = 0.4


def average_snrs(stats: FadingStats, budget: PowerBudget) -> AverageSnrs:
    """Means of the received SNRs under exponential squared gains."""
    avg_gamma_o = budget.Ps / stats.lambda_ds
    return AverageSnrs(
        avg_gamma_s=budget.Ps / stats.lambda_rs,
        avg_gamma_o=avg_gamma_o,
        avg_gamma_d=avg_gamma_o + budget.Pr / stats.lambda_dr,
    )


def average_regime(stats: FadingStats, budget: PowerBudget) -> Regime:
    """Regime the statistics alone point to, same endpoint convention as the instantaneous rule."""
    avg = average_snrs(stats, budget)
    if avg.avg_gamma_s <= avg.avg_gamma_o:
        return Regime.R0
    if avg.avg_gamma_s <= avg.avg_gamma_d:
        return Regime.R1
    return Regime.R2


def practical_relay_power(gamma_s, avg: AverageSnrs, budget: PowerBudget, clamp: bool = True):
    """
    Independent-coding relay power from the instantaneous receive SNR and average destination SNRs.

    Unclamped values can leave [0, Pr]; the savings closed form integrates
    that raw expression, rate evaluation needs the clamped one.
    """
    beta_r = (gamma_s - avg.avg_gamma_o) / (avg.avg_gamma_d - avg.avg_gamma_o) * budget.Pr
    if clamp:
        return np.clip(beta_r, 0.0, budget.Pr)
    return beta_r


def long_term_relay_power(avg: AverageSnrs, budget: PowerBudget) -> float:
    return (avg.avg_gamma_s - avg.avg_gamma_o) / (avg.avg_gamma_d - avg.avg_gamma_o) * budget.Pr


def long_term_alpha(avg: AverageSnrs, budget: PowerBudget) -> float:
    """Block-Markov source split computed from average SNRs."""
    return float(xi_arrays(avg.avg_gamma_s, avg.avg_gamma_o, avg.avg_gamma_d, budget.Ps))


def allocation_under_csi_arrays(
    model: CsiModel,
    g_rs2,
    g_ds2,
    g_dr2,
    stats: FadingStats,
    budget: PowerBudget,
    full_relay_power: bool = False,
) -> Dict[str, np.ndarray]:
    """
    Allocation and achieved rate per channel under a CSI model.

    full_relay_power forces beta_r = Pr in the independent-coding regime
    (the full-power comparison policy). Practical relay power is clamped.
    """
    Ps, Pr = budget.Ps, budget.Pr
    g_rs2, g_ds2, g_dr2 = np.broadcast_arrays(
        np.asarray(g_rs2, dtype=float), np.asarray(g_ds2, dtype=float), np.asarray(g_dr2, dtype=float)
    )
    direct = log2_1p(g_ds2 * Ps)

    if model == CsiModel.PERFECT:
        out = optimal_allocation_arrays(g_rs2, g_ds2, g_dr2, budget)
        if full_relay_power:
            r1 = out["regime"] == 1
            out["beta_r"] = np.where(r1, Pr, out["beta_r"])
        return out

    zeros = np.zeros_like(g_rs2)
    if model == CsiModel.DIRECT:
        return {
            "regime": zeros.astype(int), "alpha_s": zeros, "beta_s": zeros + Ps,
            "k_s": zeros, "beta_r": zeros, "rate": direct,
        }

    avg = average_snrs(stats, budget)
    regime = average_regime(stats, budget)
    alpha_s, k_s, beta_r = zeros.copy(), zeros.copy(), zeros.copy()

    if regime == Regime.R1:
        if full_relay_power:
            beta_r = zeros + Pr
        elif model == CsiModel.PRACTICAL:
            gamma_s, _, _ = snr_arrays(g_rs2, g_ds2, g_dr2, budget)
            beta_r = practical_relay_power(gamma_s, avg, budget, clamp=True)
        else:
            beta_r = zeros + min(max(long_term_relay_power(avg, budget), 0.0), Pr)
    elif regime == Regime.R2:
        xi = long_term_alpha(avg, budget)
        alpha_s = zeros + xi
        k_s = zeros + (Pr / xi if xi > 0 else 0.0)
        if xi <= 0:
            beta_r = zeros + Pr

    beta_s = Ps - alpha_s
    j1, j2 = rate_constraint_arrays(g_rs2, g_ds2, g_dr2, alpha_s, beta_s, k_s, beta_r)
    rate = direct if regime == Regime.R0 else np.minimum(j1, j2)
    return {
        "regime": zeros.astype(int) + REGIME_TAGS.index(regime),
        "alpha_s": alpha_s,
        "beta_s": beta_s,
        "k_s": k_s,
        "beta_r": beta_r,
        "rate": rate,
    }


def allocation_under_csi(
    model: CsiModel,
    gains: LinkGains,
    stats: FadingStats,
    budget: PowerBudget,
) -> AllocationResult:
    """Regime and allocation a CSI model arrives at for one fading realization."""
    out = allocation_under_csi_arrays(
        model, gains.g_rs ** 2, gains.g_ds ** 2, gains.g_dr ** 2, stats, budget
    )
    alloc = PowerAllocation(
        alpha_s=float(out["alpha_s"]),
        beta_s=float(out["beta_s"]),
        k_s=float(out["k_s"]),
        beta_r=float(out["beta_r"]),
    )
    return AllocationResult(regime=REGIME_TAGS[int(out["regime"])], allocation=alloc, rate=float(out["rate"]))


# ============================================================================
# Relay-use ellipse
# ============================================================================

def canonical_position(geometry: Geometry) -> Tuple[float, float]:
    """Relay coordinates in the frame with the source at the origin and the destination on +x."""
    sx, sy = geometry.source_pos
    dx, dy = geometry.dest_pos[0] - sx, geometry.dest_pos[1] - sy
    rx, ry = geometry.relay_pos[0] - sx, geometry.relay_pos[1] - sy
    d = math.hypot(dx, dy)
    if d == 0:
        raise ValidationError("source and destination coincide")
    cos_t, sin_t = dx / d, dy / d
    return rx * cos_t + ry * sin_t, -rx * sin_t + ry * cos_t


def ellipse_for_axis(d_ds: float, gamma: float, semi_major: float) -> EllipseParams:
    """Ellipse with the scaled (2, +-8) foci and the given semi-major axis."""
    focal = FOCUS_Y_FRACTION * d_ds
    semi_major = max(semi_major, focal)
    return EllipseParams(
        d_ds=d_ds,
        gamma=gamma,
        semi_major=semi_major,
        semi_minor=math.sqrt(max(semi_major ** 2 - focal ** 2, 0.0)),
        center_x=FOCUS_X_FRACTION * d_ds,
        center_y=0.0,
    )


class EllipseTable:
    """Lookup table of fitted relay-use ellipses keyed by (d_ds, gamma)."""

    HEADER = "# d_ds gamma semi_major semi_minor center_x center_y"

    def __init__(self, entries: Optional[Dict[Tuple[float, float], EllipseParams]] = None):
        self._entries: Dict[Tuple[float, float], EllipseParams] = dict(entries or {})

    @staticmethod
    def _key(d_ds: float, gamma: float) -> Tuple[float, float]:
        return round(d_ds, 6), round(gamma, 6)

    @classmethod
    def load(cls, path: Path = ELLIPSE_TABLE_PATH) -> "EllipseTable":
        """Read the table; a missing file is an empty table."""
        table = cls()
        path = Path(path)
        if not path.exists():
            logger.debug(f"No ellipse table at {path}, starting empty")
            return table
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 6:
                raise ValidationError(f"{path}:{lineno}: expected 6 columns, got {len(fields)}")
            d_ds, gamma, a, b, cx, cy = (float(f) for f in fields)
            table.put(EllipseParams(d_ds=d_ds, gamma=gamma, semi_major=a, semi_minor=b, center_x=cx, center_y=cy))
        return table

    def save(self, path: Path = ELLIPSE_TABLE_PATH) -> None:
        rows = [self.HEADER]
        for key in sorted(self._entries):
            e = self._entries[key]
            rows.append(
                f"{e.d_ds:.6f} {e.gamma:.6f} {e.semi_major:.6f} {e.semi_minor:.6f} {e.center_x:.6f} {e.center_y:.6f}"
            )
        Path(path).write_text("\n".join(rows) + "\n")
        logger.info(f"✅ Wrote {len(self._entries)} ellipse rows to {path}")

    def put(self, params: EllipseParams) -> None:
        self._entries[self._key(params.d_ds, params.gamma)] = params

    def lookup(self, d_ds: float, gamma: float) -> Optional[EllipseParams]:
        return self._entries.get(self._key(d_ds, gamma))

    def __len__(self) -> int:
        return len(self._entries)


def fit_ellipse(
    d_ds: float,
    gamma: float,
    snr_db: float,
    cfg: McConfig,
    resolution: float = 1.0,
    candidates: int = 121,
) -> EllipseParams:
    """
    Fit the relay-use ellipse by thresholding the practical-CSI rate gain at zero.

    Only relay positions farther from the destination than from the source
    are scored, since the distance clause of the rule already covers the rest.
    """
    from dfrelay.services.channel import budget_for_snr, pathloss_stats
    from dfrelay.services.montecarlo import estimate_rate

    budget = budget_for_snr(snr_db, d_ds, gamma)
    points, labels = [], []
    steps = int(round(2 * d_ds / resolution))
    for i in range(steps + 1):
        x = -d_ds + i * resolution
        for j in range(steps + 1):
            y = -d_ds + j * resolution
            geometry = Geometry(source_pos=(0.0, 0.0), relay_pos=(x, y), dest_pos=(d_ds, 0.0), gamma=gamma)
            if geometry.d_rs < 1e-6 or geometry.d_dr < geometry.d_rs:
                continue
            stats = pathloss_stats(geometry, budget)
            practical = estimate_rate(stats, budget, CsiModel.PRACTICAL, cfg, relay_used=True)
            direct = estimate_rate(stats, budget, CsiModel.DIRECT, cfg)
            points.append((x, y))
            labels.append(practical.mean > direct.mean)

    if not points:
        raise ValidationError("ellipse fit grid is empty")

    xy = np.asarray(points)
    truth = np.asarray(labels)
    focal = FOCUS_Y_FRACTION * d_ds
    best_axis, best_score = focal, -1
    for axis in np.linspace(focal, focal + 1.5 * d_ds, candidates):
        e = ellipse_for_axis(d_ds, gamma, float(axis))
        if e.semi_minor > 0:
            inside = ((xy[:, 0] - e.center_x) / e.semi_minor) ** 2 + ((xy[:, 1] - e.center_y) / e.semi_major) ** 2 <= 1.0
        else:
            inside = np.zeros(len(xy), dtype=bool)
        score = int(np.sum(inside == truth))
        if score > best_score:
            best_axis, best_score = float(axis), score

    fitted = ellipse_for_axis(d_ds, gamma, best_axis)
    logger.info(
        f"Fitted relay-use ellipse d_ds={d_ds} gamma={gamma}: semi_major={fitted.semi_major:.3f}, "
        f"semi_minor={fitted.semi_minor:.3f}, agreement {best_score}/{len(truth)}"
    )
    return fitted


_default_table: Optional[EllipseTable] = None
_table_lock = threading.RLock()


def default_table() -> EllipseTable:
    """Process-wide table read once from DFRELAY_ELLIPSE_TABLE."""
    global _default_table
    with _table_lock:
        if _default_table is None:
            _default_table = EllipseTable.load(ELLIPSE_TABLE_PATH)
        return _default_table


def ensure_ellipse(
    table: EllipseTable,
    d_ds: float,
    gamma: float,
    snr_db: float,
    cfg: McConfig,
    refit: bool = False,
    path: Optional[Path] = None,
) -> EllipseParams:
    """Lookup-table entry for (d_ds, gamma), fitted and persisted when missing or when refit is set."""
    with _table_lock:
        ellipse = None if refit else table.lookup(d_ds, gamma)
        if ellipse is None:
            logger.info(f"No ellipse for d_ds={d_ds:.3f}, gamma={gamma}; fitting")
            ellipse = fit_ellipse(d_ds, gamma, snr_db, cfg)
            table.put(ellipse)
            if path is not None:
                table.save(path)
    return ellipse


def relay_use_rule(
    geometry: Geometry,
    table: Optional[EllipseTable] = None,
    snr_db: float = 5.0,
    cfg: Optional[McConfig] = None,
) -> bool:
    """
    Whether to use the relay under practical or long-term CSI.

    True when the relay is closer to the destination than to the source, or
    inside the fitted ellipse. Missing entries are fitted once; without an
    explicit table the shared default table is used and saved after a fit.
    """
    if geometry.d_dr < geometry.d_rs:
        return True

    path = None
    if table is None:
        table, path = default_table(), ELLIPSE_TABLE_PATH
    ellipse = table.lookup(geometry.d_ds, geometry.gamma)
    if ellipse is None:
        from dfrelay.config import SWEEP_TRIALS, current_seed

        cfg = cfg or McConfig(trials=SWEEP_TRIALS // 5, seed=current_seed())
        ellipse = ensure_ellipse(table, geometry.d_ds, geometry.gamma, snr_db, cfg, path=path)

    x, y = canonical_position(geometry)
    return ellipse.contains(x, y)
