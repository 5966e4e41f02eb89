"""
Shared fixtures for the dfrelay test suite.
"""
import pytest

from dfrelay.models import EllipseParams, FadingStats, Geometry, McConfig, PowerBudget
from dfrelay.services.csi import EllipseTable

SEED = 20160419


@pytest.fixture
def unit_budget() -> PowerBudget:
    return PowerBudget(Ps=1.0, Pr=1.0)


@pytest.fixture
def unit_stats() -> FadingStats:
    return FadingStats(lambda_rs=1.0, lambda_ds=1.0, lambda_dr=1.0, lambda_dr_tilde=1.0)


@pytest.fixture
def midpoint_geometry() -> Geometry:
    """Relay halfway along a 20 m source-destination axis."""
    return Geometry(source_pos=(0.0, 0.0), relay_pos=(10.0, 0.0), dest_pos=(20.0, 0.0), gamma=3.6)


@pytest.fixture
def mc() -> McConfig:
    return McConfig(trials=200_000, seed=SEED, chunk=65_536, workers=2)


@pytest.fixture
def small_mc() -> McConfig:
    return McConfig(trials=2_000, seed=SEED, chunk=512, workers=1)


@pytest.fixture
def ellipse_table() -> EllipseTable:
    """Table with the d_ds = 20, gamma = 3.6 ellipse: foci (2, +-8), semi-major 10."""
    table = EllipseTable()
    table.put(EllipseParams(d_ds=20.0, gamma=3.6, semi_major=10.0, semi_minor=6.0, center_x=2.0, center_y=0.0))
    return table


def stats_from(l_rs: float, l_ds: float, l_dr: float, budget: PowerBudget) -> FadingStats:
    return FadingStats(
        lambda_rs=l_rs, lambda_ds=l_ds, lambda_dr=l_dr, lambda_dr_tilde=(budget.Ps / budget.Pr) * l_dr,
    )
