"""
End-to-end tests for the dfrelay command line.
"""
import csv
from pathlib import Path

import pytest

from dfrelay.main import EXIT_OK, EXIT_VALIDATION, EXIT_VERIFICATION, build_parser, main

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def read_rows(path: Path):
    lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


def header(path: Path):
    return [line for line in path.read_text().splitlines() if line.startswith("#")]


def single_point(x: float, y: float):
    return ["--x-range", f"{x},{x}", "--y-range", f"{y},{y}", "--resolution", "1"]


# ============================================================================
# Figure subcommands
# ============================================================================

def test_regime_map_points(tmp_path):
    out = tmp_path / "regimes.csv"
    assert main(["regime-map", *single_point(10.0, 0.0), "--output", str(out)]) == EXIT_OK
    assert read_rows(out)[0]["regime"] == "R1"

    assert main(["regime-map", *single_point(40.0, 0.0), "--output", str(out)]) == EXIT_OK
    assert read_rows(out)[0]["regime"] == "R0"


def test_regime_map_block_markov_around_source(tmp_path):
    out = tmp_path / "regimes.csv"
    assert main(["regime-map", *single_point(0.0, 0.0), "--output", str(out)]) == EXIT_OK
    assert read_rows(out)[0]["regime"] == "R2"

    args = ["regime-map", "--x-range", "-2,2", "--y-range", "-2,2", "--resolution", "1", "--output", str(out)]
    assert main(args) == EXIT_OK
    rows = read_rows(out)
    assert len(rows) == 25
    assert {r["regime"] for r in rows} == {"R2"}


def test_header_records_parameters(tmp_path):
    out = tmp_path / "regimes.csv"
    main(["regime-map", *single_point(10.0, 0.0), "--seed", "42", "--output", str(out)])
    lines = header(out)
    assert lines[0].startswith("# dfrelay ")
    assert "# seed: 42" in lines
    assert "# gamma: 3.6" in lines
    assert "# column regime: R0 direct / R1 independent coding / R2 block Markov" in lines
    assert not any(line.startswith("# workers") for line in lines)


def test_column_row_follows_header_directly(tmp_path):
    out = tmp_path / "regimes.csv"
    main(["regime-map", *single_point(10.0, 0.0), "--output", str(out)])
    lines = out.read_text().splitlines()
    assert "" not in lines
    first_body = next(i for i, line in enumerate(lines) if not line.startswith("#"))
    assert lines[first_body] == "x,y,regime"
    assert lines[first_body - 1].startswith("# column ")


def test_rate_map_against_itself_has_no_gain(tmp_path):
    out = tmp_path / "rates.csv"
    args = ["rate-map", "--model", "perfect", "--baseline", "perfect", "--trials", "300",
            "--x-range", "5,15", "--y-range", "0,0", "--resolution", "5", "--output", str(out)]
    assert main(args) == EXIT_OK
    rows = read_rows(out)
    assert len(rows) == 3
    assert all(float(r["gain_pct"]) == 0.0 for r in rows)


def test_output_independent_of_workers(tmp_path):
    base = ["rate-map", "--model", "perfect", "--trials", "500", "--chunk", "128",
            "--x-range", "5,15", "--y-range", "0,5", "--resolution", "5"]
    one, four = tmp_path / "one.csv", tmp_path / "four.csv"
    assert main([*base, "--workers", "1", "--output", str(one)]) == EXIT_OK
    assert main([*base, "--workers", "4", "--output", str(four)]) == EXIT_OK
    assert one.read_text() == four.read_text()


def test_degenerate_points_produce_nan_rows(tmp_path):
    out = tmp_path / "savings.csv"
    args = ["savings-map", "--trials", "100", "--x-range", "0,20", "--y-range", "0,0",
            "--resolution", "20", "--output", str(out)]
    assert main(args) == EXIT_OK
    rows = read_rows(out)
    assert [r["mc_fraction"] for r in rows] == ["nan", "nan"]


def test_outage_curve_small_run(tmp_path):
    out = tmp_path / "outage.csv"
    args = ["outage-curve", "--snr-range", "0,10", "--snr-step", "10", "--policies", "fixed",
            "--trials", "200", "--output", str(out)]
    assert main(args) == EXIT_OK
    rows = read_rows(out)
    assert [float(r["snr_db"]) for r in rows] == [0.0, 10.0]
    assert rows[0]["local_slope"] == "nan"
    assert float(rows[1]["cf_total"]) < float(rows[0]["cf_total"])
    assert float(rows[1]["local_slope"]) < 0


def test_tradeoff_keeps_rate_and_saves_power(tmp_path):
    out = tmp_path / "tradeoff.csv"
    args = ["tradeoff", "--trials", "300", "--x-range", "10,10", "--resolution", "1", "--output", str(out)]
    assert main(args) == EXIT_OK
    (row,) = read_rows(out)
    assert row["composite_rate"] == row["classical_rate"]
    assert float(row["composite_savings_fraction"]) > 0
    assert float(row["classical_savings_fraction"]) == 0.0


# ============================================================================
# Errors and configuration
# ============================================================================

@pytest.mark.parametrize("extra", [
    ["--resolution", "0"],
    ["--resolution", "-1"],
    ["--x-range", "5,0"],
])
def test_bad_grid_exits_with_validation_code(tmp_path, extra):
    assert main(["regime-map", *extra, "--output", str(tmp_path / "x.csv")]) == EXIT_VALIDATION


def test_malformed_pair_is_an_argparse_error():
    with pytest.raises(SystemExit) as exc:
        main(["regime-map", "--x-range", "five"])
    assert exc.value.code == 2


def test_unwritable_output(tmp_path):
    out = tmp_path / "missing" / "regimes.csv"
    assert main(["regime-map", *single_point(10.0, 0.0), "--output", str(out)]) == EXIT_VALIDATION


def test_missing_config_file(tmp_path):
    assert main(["regime-map", "--config", str(tmp_path / "absent.conf")]) == EXIT_VALIDATION


def test_command_line_beats_config_file(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("snr_db=10\nresolution=2\nx_range=10,10\ny_range=0,0\n")
    out = tmp_path / "regimes.csv"
    assert main(["regime-map", "--config", str(conf), "--snr-db", "7", "--output", str(out)]) == EXIT_OK
    lines = header(out)
    assert "# snr_db: 7.0" in lines
    assert "# resolution: 2.0" in lines
    assert "# x_range: (10.0, 10.0)" in lines


def test_fixture_configs_name_real_options():
    parser = build_parser()
    configs = sorted(FIXTURES.glob("*.conf"))
    assert configs
    for path in configs:
        command = path.name.split(".")[0]
        defaults = vars(parser.parse_args([command]))
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key = line.split("=", 1)[0].strip().lower().replace("-", "_")
            assert key in defaults, f"{path.name}: unknown key {key}"


# ============================================================================
# Verification
# ============================================================================

@pytest.mark.slow
def test_quick_verification_passes(tmp_path):
    out, report = tmp_path / "checks.csv", tmp_path / "report.txt"
    args = ["verify", "--level", "quick", "--workers", "4", "--output", str(out), "--report", str(report)]
    assert main(args) == EXIT_OK
    assert all(r["passed"] == "1" for r in read_rows(out))
    assert "VERIFICATION FAILED" not in report.read_text()


@pytest.mark.slow
def test_injected_fault_fails_verification(tmp_path):
    out, report = tmp_path / "checks.csv", tmp_path / "report.txt"
    args = ["verify", "--level", "quick", "--workers", "4", "--inject-fault",
            "--output", str(out), "--report", str(report)]
    assert main(args) == EXIT_VERIFICATION
    assert "VERIFICATION FAILED" in report.read_text()


@pytest.mark.slow
def test_verify_output_independent_of_workers(tmp_path):
    one, four = tmp_path / "one.csv", tmp_path / "four.csv"
    assert main(["verify", "--level", "quick", "--workers", "1", "--output", str(one)]) == EXIT_OK
    assert main(["verify", "--level", "quick", "--workers", "4", "--output", str(four)]) == EXIT_OK
    assert one.read_bytes() == four.read_bytes()
