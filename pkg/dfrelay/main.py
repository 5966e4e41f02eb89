"""
dfrelay command line
Composite DF relaying: regime maps, rate gains, outage curves and relay power savings.

Every figure subcommand writes one CSV (stdout by default) whose `#` header
records the version, all parameters and the seed.
"""
import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pydantic
from jinja2 import Environment, FileSystemLoader

from dfrelay import __version__
from dfrelay.config import (
    DEFAULT_CHUNK, DEFAULT_GAMMA, DEFAULT_SNR_DB, DEFAULT_TARGET_RATE, DEFAULT_WORKERS,
    ELLIPSE_TABLE_PATH, LOG_LEVEL, SWEEP_TRIALS, apply_config, current_seed, load_config_file,
)
from dfrelay.exceptions import NumericalFailureError, ValidationError, VerificationFailure
from dfrelay.models import CsiModel, CurveSpec, McConfig, PolicyKind, SweepSpec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_VERIFICATION = 4

# Jinja2 templates
templates = Environment(
    loader=FileSystemLoader(str(Path(__file__).parent / "templates")),
    keep_trailing_newline=True,
    autoescape=False,
)

# Run-control flags left out of CSV headers so output does not depend on them
_UNRECORDED = {
    "command", "handler", "config", "output", "verbose", "workers", "chunk", "report", "record",
    "inject_fault", "ellipse_table", "refit_ellipse",
}

UNITS = {
    "x": "m", "y": "m", "regime": "R0 direct / R1 independent coding / R2 block Markov",
    "rate": "bits/s/Hz", "rate_stderr": "bits/s/Hz", "baseline_rate": "bits/s/Hz",
    "baseline_stderr": "bits/s/Hz", "gain_pct": "percent",
    "closed_form_fraction": "fraction of Pr", "mc_fraction": "fraction of Pr",
    "mc_stderr_fraction": "fraction of Pr", "outage": "probability", "outage_stderr": "probability",
    "below_limit": "1 if outage < 0.02", "savings_fraction": "fraction of Pr",
    "composite_rate": "bits/s/Hz", "classical_rate": "bits/s/Hz",
    "composite_savings_fraction": "fraction of Pr", "classical_savings_fraction": "fraction of Pr",
    "snr_db": "dB", "policy": "relay power policy", "local_slope": "log10 outage per SNR decade",
    "cf_total": "probability", "cf_p_dt": "probability", "cf_p_relay": "probability",
    "cf_p_dest": "probability", "mc_total": "probability", "mc_stderr": "probability",
    "mc_p_dt": "probability", "mc_p_relay": "probability", "mc_p_dest": "probability",
    "d_ds": "m", "gamma": "pathloss exponent", "semi_major": "m", "semi_minor": "m",
    "center_x": "m", "center_y": "m",
    "name": "check", "measured": "check units", "expected": "check units", "tolerance": "check units",
    "deviation": "check units", "passed": "1 pass / 0 fail",
}


# ============================================================================
# Argument types
# ============================================================================

def _pair(text: str) -> Tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got '{text}'")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got '{text}'")


def _policies(text: str) -> Tuple[str, ...]:
    kinds = tuple(p.strip() for p in text.split(",") if p.strip())
    valid = {k.value for k in PolicyKind}
    for kind in kinds:
        if kind not in valid:
            raise argparse.ArgumentTypeError(f"unknown policy '{kind}', choose from {sorted(valid)}")
    return kinds


def _mc(args: argparse.Namespace, default_trials: int = SWEEP_TRIALS) -> McConfig:
    trials = int(args.trials) if args.trials is not None else default_trials
    return McConfig(trials=trials, seed=int(args.seed), chunk=int(args.chunk), workers=int(args.workers))


def _sweep_spec(args: argparse.Namespace) -> SweepSpec:
    return SweepSpec(
        x_range=args.x_range,
        y_range=args.y_range,
        resolution=args.resolution,
        source_pos=args.source,
        dest_pos=args.dest,
        gamma=args.gamma,
        snr_db=args.snr_db,
        target_rate=args.target_rate,
        model=CsiModel(args.model),
        mc=_mc(args),
    )


# ============================================================================
# Output
# ============================================================================

def _format(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.12g}"
    return str(value)


def render_csv(
    command: str,
    args: argparse.Namespace,
    columns: Sequence[str],
    rows: Sequence[Dict[str, Any]],
    ellipse=None,
) -> str:
    """Header block plus CSV body as one string."""
    params = {
        key: value for key, value in sorted(vars(args).items())
        if key not in _UNRECORDED and key != "seed"
    }
    header = templates.get_template("csv_header.j2").render(
        version=__version__,
        command=command,
        seed=args.seed,
        params=params,
        ellipse=ellipse,
        units=[(c, UNITS.get(c, "")) for c in columns],
    )
    body = io.StringIO()
    writer = csv.writer(body, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[c]) for c in columns])
    return header + body.getvalue()


def write_output(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        Path(output).write_text(text)
    except OSError as e:
        raise ValidationError(f"Cannot write {output}: {e.strerror}") from e
    logger.info(f"✅ Wrote {output}")


# ============================================================================
# Subcommands
# ============================================================================

def cmd_regime_map(args: argparse.Namespace) -> int:
    from dfrelay.services.sweeps import regime_map_rows

    columns, rows = regime_map_rows(_sweep_spec(args))
    write_output(render_csv("regime-map", args, columns, rows), args.output)
    return EXIT_OK


def _ellipse_table(args: argparse.Namespace, spec: SweepSpec):
    from dfrelay.services.csi import EllipseTable, ensure_ellipse

    table = EllipseTable.load(args.ellipse_table)
    d_ds = math.dist(spec.source_pos, spec.dest_pos)
    ellipse = ensure_ellipse(
        table, d_ds, spec.gamma, spec.snr_db, spec.mc.model_copy(update={"trials": max(spec.mc.trials // 5, 1)}),
        refit=args.refit_ellipse, path=args.ellipse_table,
    )
    return table, ellipse


def cmd_rate_map(args: argparse.Namespace) -> int:
    from dfrelay.services.sweeps import rate_map_rows

    spec = _sweep_spec(args)
    baseline = CsiModel(args.baseline)
    table, ellipse = None, None
    if {CsiModel.PRACTICAL, CsiModel.LONG_TERM} & {spec.model, baseline}:
        table, ellipse = _ellipse_table(args, spec)
    columns, rows = rate_map_rows(spec, baseline, table=table)
    write_output(render_csv("rate-map", args, columns, rows, ellipse=ellipse), args.output)
    return EXIT_OK


def cmd_outage_curve(args: argparse.Namespace) -> int:
    from dfrelay.services.sweeps import outage_curve_rows

    spec = CurveSpec(
        source_pos=args.source,
        relay_pos=args.relay,
        dest_pos=args.dest,
        gamma=args.gamma,
        target_rate=args.target_rate,
        snr_range=args.snr_range,
        snr_step=args.snr_step,
        alpha_fraction=args.alpha_fraction,
        policies=[PolicyKind(p) for p in args.policies],
        mc=_mc(args),
    )
    columns, rows = outage_curve_rows(spec)
    write_output(render_csv("outage-curve", args, columns, rows), args.output)
    return EXIT_OK


def cmd_savings_map(args: argparse.Namespace) -> int:
    from dfrelay.services.sweeps import savings_map_rows

    columns, rows = savings_map_rows(_sweep_spec(args), clamp=args.clamp)
    write_output(render_csv("savings-map", args, columns, rows), args.output)
    return EXIT_OK


def cmd_outage_region(args: argparse.Namespace) -> int:
    from dfrelay.services.sweeps import outage_region_rows

    columns, rows = outage_region_rows(_sweep_spec(args))
    write_output(render_csv("outage-region", args, columns, rows), args.output)
    return EXIT_OK


def cmd_tradeoff(args: argparse.Namespace) -> int:
    from dfrelay.services.sweeps import tradeoff_rows

    columns, rows = tradeoff_rows(_sweep_spec(args))
    write_output(render_csv("tradeoff", args, columns, rows), args.output)
    return EXIT_OK


def cmd_fit_ellipse(args: argparse.Namespace) -> int:
    from dfrelay.services.csi import EllipseTable, ensure_ellipse

    table = EllipseTable.load(args.ellipse_table)
    ellipse = ensure_ellipse(
        table, args.d_ds, args.gamma, args.snr_db, _mc(args, default_trials=SWEEP_TRIALS // 5),
        refit=True, path=args.ellipse_table,
    )
    row = ellipse.model_dump()
    columns = ["d_ds", "gamma", "semi_major", "semi_minor", "center_x", "center_y"]
    write_output(render_csv("fit-ellipse", args, columns, [row], ellipse=ellipse), args.output)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    from dfrelay.services.verification import LEVELS, record_run, run_verification

    run = run_verification(args.level, seed=int(args.seed), workers=int(args.workers), inject_fault=args.inject_fault)
    if args.trials is None:
        args.trials = LEVELS[args.level]["trials"]

    columns = ["name", "measured", "expected", "tolerance", "deviation", "passed"]
    rows = [
        {c: getattr(check, c) for c in columns}
        for check in run.checks
    ]
    write_output(render_csv("verify", args, columns, rows), args.output)

    report = templates.get_template("verify_report.j2").render(
        version=__version__, run=run, passed=sum(c.passed for c in run.checks),
    )
    if args.report is not None:
        write_output(report, args.report)
    else:
        sys.stderr.write(report)

    if args.record:
        record_run(run)
    if not run.passed:
        failed = [c.name for c in run.checks if not c.passed]
        raise VerificationFailure(f"{len(failed)} checks failed: {', '.join(failed[:10])}")
    return EXIT_OK


# ============================================================================
# Parser
# ============================================================================

def _common(parser: argparse.ArgumentParser, trials: bool = True) -> None:
    parser.add_argument("--workers", type=int, default=DEFAULT_WORKERS, help="worker threads")
    parser.add_argument("--seed", type=int, default=current_seed(), help="RNG seed (env DFRELAY_SEED)")
    if trials:
        parser.add_argument("--trials", type=int, default=None, help=f"Monte Carlo trials (default {SWEEP_TRIALS})")
    parser.add_argument("--chunk", type=int, default=DEFAULT_CHUNK, help="trials per parallel chunk")
    parser.add_argument("--config", type=Path, default=None, help="key=value file overriding defaults")
    parser.add_argument("--output", type=Path, default=None, help="CSV path (default stdout)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")


def _grid(
    parser: argparse.ArgumentParser,
    model: str,
    x_range: Tuple[float, float] = (-10.0, 30.0),
    y_range: Tuple[float, float] = (-20.0, 20.0),
    source: Tuple[float, float] = (0.0, 0.0),
    dest: Tuple[float, float] = (20.0, 0.0),
    snr_db: float = DEFAULT_SNR_DB,
    target_rate: float = DEFAULT_TARGET_RATE,
) -> None:
    parser.add_argument("--x-range", type=_pair, default=x_range, help="lo,hi in meters")
    parser.add_argument("--y-range", type=_pair, default=y_range, help="lo,hi in meters")
    parser.add_argument("--resolution", type=float, default=0.5, help="grid step in meters")
    parser.add_argument("--source", type=_pair, default=source, help="x,y")
    parser.add_argument("--dest", type=_pair, default=dest, help="x,y")
    parser.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="pathloss exponent")
    parser.add_argument("--snr-db", type=float, default=snr_db, help="average direct-link SNR")
    parser.add_argument("--target-rate", type=float, default=target_rate, help="bits/s/Hz")
    parser.add_argument("--model", choices=[m.value for m in CsiModel], default=model)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfrelay", description=__doc__.strip().splitlines()[1])
    parser.add_argument("--version", action="version", version=f"dfrelay {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regime-map", help="optimal transmission technique over relay positions")
    _common(p)
    _grid(p, model=CsiModel.PERFECT.value)
    p.set_defaults(handler=cmd_regime_map)

    p = sub.add_parser("rate-map", help="mean rate gain of one CSI model over another")
    _common(p)
    _grid(p, model=CsiModel.PRACTICAL.value)
    p.add_argument("--baseline", choices=[m.value for m in CsiModel], default=CsiModel.DIRECT.value)
    p.add_argument("--ellipse-table", type=Path, default=ELLIPSE_TABLE_PATH)
    p.add_argument("--refit-ellipse", action="store_true", help="refit the relay-use ellipse first")
    p.set_defaults(handler=cmd_rate_map)

    p = sub.add_parser("outage-curve", help="outage versus SNR per relay-power policy")
    _common(p)
    p.add_argument("--source", type=_pair, default=(0.0, 0.0))
    p.add_argument("--relay", type=_pair, default=(10.0, 0.0))
    p.add_argument("--dest", type=_pair, default=(20.0, 0.0))
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--target-rate", type=float, default=DEFAULT_TARGET_RATE)
    p.add_argument("--snr-range", type=_pair, default=(0.0, 50.0), help="lo,hi in dB")
    p.add_argument("--snr-step", type=float, default=2.5)
    p.add_argument("--alpha-fraction", type=float, default=0.5, help="alpha_s / Ps for the fixed policy")
    p.add_argument(
        "--policies", type=_policies,
        default=(PolicyKind.FIXED.value, PolicyKind.LONG_TERM_PARTIAL.value, PolicyKind.LONG_TERM_FULL.value),
    )
    p.set_defaults(handler=cmd_outage_curve)

    p = sub.add_parser("savings-map", help="expected relay power savings over relay positions")
    _common(p)
    _grid(p, model=CsiModel.PERFECT.value)
    p.add_argument("--clamp", action="store_true", help="clamp practical relay power to [0, Pr]")
    p.set_defaults(handler=cmd_savings_map)

    p = sub.add_parser("outage-region", help="where long-term-CSI outage stays below 2%%")
    _common(p)
    _grid(
        p, model=CsiModel.LONG_TERM.value, x_range=(-15.0, 15.0), y_range=(-15.0, 15.0),
        source=(-5.0, 0.0), dest=(5.0, 0.0), snr_db=10.0, target_rate=1.0,
    )
    p.set_defaults(handler=cmd_outage_region)

    p = sub.add_parser("tradeoff", help="composite vs block-Markov-only DF along the axis")
    _common(p)
    _grid(p, model=CsiModel.PERFECT.value)
    p.set_defaults(handler=cmd_tradeoff)

    p = sub.add_parser("fit-ellipse", help="refit the relay-use ellipse lookup entry")
    _common(p)
    p.add_argument("--d-ds", type=float, default=20.0)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--snr-db", type=float, default=DEFAULT_SNR_DB)
    p.add_argument("--ellipse-table", type=Path, default=ELLIPSE_TABLE_PATH)
    p.set_defaults(handler=cmd_fit_ellipse)

    p = sub.add_parser("verify", help="closed forms against their oracles")
    _common(p, trials=False)
    p.add_argument("--level", choices=["quick", "full"], default="quick")
    p.add_argument("--record", action="store_true", help="store the run in the verification database")
    p.add_argument("--report", type=Path, default=None, help="text report path (default stderr)")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_verify, trials=None)

    return parser


def _explicit_dests(parser: argparse.ArgumentParser, command: str, argv: Sequence[str]) -> set:
    """Destinations of flags that appear literally on the command line."""
    subparser = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    ).choices[command]
    given = set()
    for action in subparser._actions:
        for option in action.option_strings:
            if any(arg == option or arg.startswith(option + "=") for arg in argv):
                given.add(action.dest)
    return given


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )

    try:
        if args.config is not None:
            apply_config(args, load_config_file(args.config), _explicit_dests(parser, args.command, argv))
        logger.info(f"🚀 dfrelay {args.command} (seed {args.seed})")
        return args.handler(args)
    except VerificationFailure as e:
        logger.error(f"❌ {e}")
        return EXIT_VERIFICATION
    except NumericalFailureError as e:
        tol = f" (achieved tolerance {e.achieved_tolerance:.3g})" if e.achieved_tolerance is not None else ""
        logger.error(f"❌ Numerical failure: {e}{tol}")
        return EXIT_NUMERICAL
    except (ValidationError, pydantic.ValidationError, ValueError) as e:
        logger.error(f"❌ Invalid input: {e}")
        return EXIT_VALIDATION
    except OSError as e:
        logger.error(f"❌ I/O error on {e.filename}: {e.strerror}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
