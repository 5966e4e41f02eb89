"""
Runtime configuration: environment variables and key=value config files.
"""
import os
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv, dotenv_values

from dfrelay.exceptions import ValidationError

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_SEED = int(os.getenv("DFRELAY_SEED", "20160419"))
DEFAULT_WORKERS = int(os.getenv("DFRELAY_WORKERS", str(os.cpu_count() or 1)))
LOG_LEVEL = os.getenv("DFRELAY_LOG_LEVEL", "INFO").upper()
DATABASE_URL = os.getenv("DFRELAY_DATABASE_URL", "sqlite:///dfrelay.db")
ELLIPSE_TABLE_PATH = Path(os.getenv("DFRELAY_ELLIPSE_TABLE", "ellipse_table.txt"))

# Figure defaults
DEFAULT_GAMMA = 3.6
DEFAULT_D_DS = 20.0
DEFAULT_SNR_DB = 5.0
DEFAULT_TARGET_RATE = 5.0

# Trial counts: verification runs vs spatial sweeps
VERIFY_TRIALS = 1_000_000
SWEEP_TRIALS = 10_000
DEFAULT_CHUNK = 65_536


def current_seed() -> int:
    """Seed from the environment, read at call time so tests can monkeypatch it."""
    return int(os.getenv("DFRELAY_SEED", str(DEFAULT_SEED)))


def load_config_file(path: Optional[Path]) -> Dict[str, str]:
    """
    Read a key=value config file.

    Keys are normalised to the argparse destination form (dashes become
    underscores, lower case). Returns an empty dict when no path is given.
    """
    if path is None:
        return {}
    if not Path(path).is_file():
        raise ValidationError(f"Config file not found: {path}")

    raw = dotenv_values(path)
    values = {}
    for key, value in raw.items():
        if value is None:
            continue
        values[key.strip().lower().replace("-", "_")] = value.strip()
    logger.debug(f"Loaded {len(values)} settings from {path}")
    return values


def apply_config(args: Any, values: Dict[str, str], explicit: set) -> None:
    """
    Overlay config-file values onto parsed arguments.

    Flags given explicitly on the command line win; everything else takes the
    config value, coerced to the type of the current default.
    """
    for key, raw in values.items():
        if not hasattr(args, key):
            logger.warning(f"⚠️ Ignoring unknown config key: {key}")
            continue
        if key in explicit:
            continue
        current = getattr(args, key)
        try:
            if isinstance(current, bool):
                coerced: Any = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                coerced = int(raw)
            elif isinstance(current, float):
                coerced = float(raw)
            elif isinstance(current, tuple):
                kind = type(current[0]) if current else str
                coerced = tuple(kind(part.strip()) for part in raw.split(","))
            else:
                coerced = raw
        except ValueError as e:
            raise ValidationError(f"Bad value for config key '{key}': {raw}") from e
        setattr(args, key, coerced)
