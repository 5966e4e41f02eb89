#!/usr/bin/env python3
"""
dfrelay Verification History Initialization
===========================================
Creates the verification_runs and check_results tables and lists the most
recent recorded runs.

Usage:
    uv run python scripts/init_database.py
    DFRELAY_DATABASE_URL=sqlite:///other.db uv run python scripts/init_database.py
"""

import sys
from pathlib import Path

# Add package to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from sqlmodel import Session, select

from dfrelay.database import create_db_and_tables, get_engine, get_session
from dfrelay.models import VerificationRun


def show_recent_runs(session: Session, limit: int = 5):
    """Print the latest recorded verification runs."""
    runs = session.exec(
        select(VerificationRun).order_by(VerificationRun.started_at.desc()).limit(limit)
    ).all()

    if not runs:
        print("ℹ️  No verification runs recorded yet")
        print("   Record one with: uv run python -m dfrelay.main verify --record")
        return

    for run in runs:
        status = "✅ PASS" if run.passed else "❌ FAIL"
        print(f"   {status}  #{run.id} {run.started_at:%Y-%m-%d %H:%M} {run.level} seed={run.seed} ({len(run.checks)} checks)")


def main():
    print("=" * 60)
    print("🚀 Initializing dfrelay verification history")
    print("=" * 60)

    engine = get_engine()
    print(f"\n📊 Creating tables at {engine.url} ...")
    create_db_and_tables(engine)
    print("✅ Tables created")

    print("\n📋 Recent runs:")
    with get_session(engine) as session:
        show_recent_runs(session)

    print("\n" + "=" * 60)


if __name__ == "__main__":
    main()
