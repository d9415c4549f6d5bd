# Command-line front end: reads a scenario document, runs the overlap engines and
# writes fidelity curves (CSV) and conditional-phase summary records.

import argparse
import csv
import dataclasses
import io
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Sequence, TextIO, Tuple

import numpy as np

from core.errors import InvalidParameterError, OracleUsageError, UnsupportedOperationError, XpmError
from utils.misc_utils import log_info
from xpm.condphase import conditional_phase
from xpm.oracle import DiscreteModeOracle
from xpm.overlap import PhotonPhotonEngine, fidelity_curve
from xpm.scenario import Scenario, fig1_scenario, fig2_scenario, load_scenario

EXIT_OK = 0
EXIT_NUMERIC_FAILURE = 1
EXIT_USAGE = 2

CSV_HEADER = ("theta", "fidelity", "overlap_re", "overlap_im", "error_estimate", "flags")

# documented oracle tolerances: absolute for discrete modes, relative for the series
DISCRETE_TOLERANCE = 1e-6
SERIES_TOLERANCE = 1e-10
DEFAULT_BINS = 4096
DEFAULT_SERIES_ORDER = 40

# reproduction acceptance
FIG1_THETA_C, FIG1_MIN_FIDELITY = 0.01, 0.998
FIG2_MIN_FIDELITY = 1 - 1e-4
THETA_C_PRECISION = 1e-4


def _fmt(x: float) -> str:
    return "%.17g" % x


def _flags(flags) -> str:
    return ";".join(flags) if flags else "none"


@dataclass(frozen=True)
class SummaryRecord:
    theta_c: float
    f_max: float
    evaluations: int
    flags: Tuple[str, ...] = ()

    def __str__(self):
        return (
            f"theta_c={_fmt(self.theta_c)} f_max={_fmt(self.f_max)} "
            f"evaluations={self.evaluations} flags={_flags(self.flags)}"
        )


def write_curve(curve, stream: TextIO):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for theta, res in curve:
        row = [theta, res.fidelity, res.value.real, res.value.imag, res.error_estimate]
        writer.writerow([_fmt(x) for x in row] + [";".join(res.flags)])


def run_curve(scenario: Scenario, out: str = None, verbose: bool = False) -> int:
    """evaluates the fidelity curve on the scenario θ grid and writes it as CSV

    The CSV goes to `out`, else to the scenario `output` key, else to stdout. Failed
    points are kept as flagged rows.
    """
    engine = scenario.build_engine(debug_logs=verbose)
    grid = scenario.theta_grid()
    log_info(f"{scenario.kind}: evaluating {len(grid)} points")
    curve = fidelity_curve(engine, grid)

    path = out or scenario.output
    if path:
        with open(path, "w", newline="") as f:
            write_curve(curve, f)
        log_info(f"curve written to {path}")
    else:
        write_curve(curve, sys.stdout)

    failed = sum(res.failed for _, res in curve)
    if failed:
        log_info(f"{failed} of {len(curve)} points failed")
        return EXIT_NUMERIC_FAILURE
    return EXIT_OK


def condphase_summary(scenario: Scenario, verbose: bool = False) -> SummaryRecord:
    engine = scenario.build_engine(debug_logs=verbose)
    if isinstance(engine, PhotonPhotonEngine):
        # F is θ-independent for the bi-photon gate, θ_c is -arg <Φ_in|Φ_out>
        res = engine.overlap(0.0)
        return SummaryRecord(res.phase, res.fidelity, 1, res.flags)

    res = conditional_phase(engine.fidelity, scenario.coarse_points, scenario.tol)
    return SummaryRecord(res.theta_c, res.f_max, res.evaluations, engine.flags + res.flags)


def run_condphase(scenario: Scenario, stream: TextIO = None, verbose: bool = False) -> int:
    """prints the single-line summary record"""
    summary = condphase_summary(scenario, verbose)
    print(summary, file=stream or sys.stdout)
    return EXIT_OK


def run_oracle_check(
    scenario: Scenario, oracle: str = "discrete", resolution: int = None, stream: TextIO = None
) -> int:
    """max deviation between engine and oracle over the scenario θ grid

    resolution is the bin count for the discrete oracle and the series order N for
    the series oracle. Exits with EXIT_NUMERIC_FAILURE if the deviation is above the
    documented tolerance.
    """
    stream = stream or sys.stdout
    alpha, f, field = scenario.oracle_inputs()
    if oracle == "discrete":
        bins = resolution or DEFAULT_BINS
        reference = DiscreteModeOracle(alpha, f, field, bins)
        oracle_value = reference.overlap
        tolerance, relative = DISCRETE_TOLERANCE, False
    elif oracle == "series":
        N = DEFAULT_SERIES_ORDER if resolution is None else resolution
        reference = DiscreteModeOracle(alpha, f, field, DEFAULT_BINS)
        # applicability is checked before any engine work
        reference.series_overlap(0.0, 0)

        def oracle_value(theta):
            return reference.series_overlap(theta, N).value

        tolerance, relative = SERIES_TOLERANCE, True
    else:
        raise OracleUsageError(f"unknown oracle {oracle!r}, expected discrete or series")

    engine = scenario.build_engine()
    max_dev = 0.0
    for theta in scenario.theta_grid():
        a, b = engine.overlap(theta).value, oracle_value(theta)
        dev = abs(a - b)
        if relative:
            dev /= max(abs(b), np.finfo(float).tiny)
        max_dev = max(max_dev, dev)

    passed = max_dev <= tolerance
    kind = "relative" if relative else "absolute"
    print(
        f"oracle={oracle} max_deviation={max_dev:.3e} ({kind}) tolerance={tolerance:.1e} "
        f"flags={_flags(reference.flags)} {'PASS' if passed else 'FAIL'}",
        file=stream,
    )
    return EXIT_OK if passed else EXIT_NUMERIC_FAILURE


def _reproduce(scenario: Scenario, out: str, check, verbose: bool) -> int:
    status = run_curve(scenario, out=out or os.devnull, verbose=verbose)
    summary = condphase_summary(scenario, verbose)
    print(summary)
    passed = check(summary)
    print("PASS" if passed else "FAIL")
    if status != EXIT_OK or not passed:
        return EXIT_NUMERIC_FAILURE
    return EXIT_OK


def reproduce_fig1(out: str = None, overrides=None, verbose: bool = False) -> int:
    """counter-propagating pass-through, θ_c at χ/v"""

    def check(s: SummaryRecord):
        return abs(s.theta_c - FIG1_THETA_C) <= THETA_C_PRECISION and s.f_max >= FIG1_MIN_FIDELITY

    return _reproduce(fig1_scenario(**(overrides or {})), out, check, verbose)


def reproduce_fig2(out: str = None, overrides=None, verbose: bool = False) -> int:
    """co-propagating regularized contact, θ_c at zero"""
    scenario = fig2_scenario(**(overrides or {}))

    def check(s: SummaryRecord):
        f0 = scenario.build_engine().fidelity(0.0)
        return abs(s.theta_c) <= THETA_C_PRECISION and f0 >= FIG2_MIN_FIDELITY

    return _reproduce(scenario, out, check, verbose)


def create_parser():
    """Creates argument parser."""
    parser = argparse.ArgumentParser(description="cross-phase modulation overlap and conditional phase")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", help="scenario document", required=True, type=str)
        p.add_argument("--out", help="CSV output path", type=str)
        p.add_argument("--theta-steps", help="number of θ grid points", type=int)
        p.add_argument("--tol", help="golden-section bracket tolerance", type=float)
        p.add_argument("-v", "--verbose", help="print engine logs", action="store_true")
        return p

    common(sub.add_parser("curve", help="fidelity curve on the θ grid as CSV"))
    common(sub.add_parser("condphase", help="conditional phase summary record"))
    check = common(sub.add_parser("oracle-check", help="compare the engine against a brute-force oracle"))
    check.add_argument("--oracle", choices=("discrete", "series"), default="discrete")
    check.add_argument("--resolution", help="bins (discrete) or series order (series)", type=int)
    common(sub.add_parser("reproduce-fig1", help="counter-propagating pass-through"), config_required=False)
    common(sub.add_parser("reproduce-fig2", help="co-propagating regularized contact"), config_required=False)
    return parser


def _overrides(args):
    overrides = {}
    if args.theta_steps is not None:
        if args.theta_steps < 1:
            raise InvalidParameterError(f"--theta-steps must be >= 1, got {args.theta_steps}")
        overrides["theta_steps"] = args.theta_steps
    if args.tol is not None:
        if not args.tol > 0:
            raise InvalidParameterError(f"--tol must be positive, got {args.tol}")
        overrides["tol"] = args.tol
    return overrides


def main(argv: Sequence[str] = None) -> int:
    args = create_parser().parse_args(argv)
    try:
        overrides = _overrides(args)
        if args.command == "reproduce-fig1":
            return reproduce_fig1(args.out, overrides, args.verbose)
        if args.command == "reproduce-fig2":
            return reproduce_fig2(args.out, overrides, args.verbose)

        scenario = dataclasses.replace(load_scenario(args.config), **overrides)
        if scenario.theta_steps == 1:
            scenario = dataclasses.replace(scenario, theta_max=scenario.theta_min)
        log_info(f"loaded {args.config} ({scenario.kind})")
        if args.command == "curve":
            return run_curve(scenario, args.out, args.verbose)
        if args.command == "condphase":
            return run_condphase(scenario, verbose=args.verbose)
        return run_oracle_check(scenario, args.oracle, args.resolution)
    except (InvalidParameterError, UnsupportedOperationError, OSError) as e:
        log_info(f"[ERROR]: {e}")
        return EXIT_USAGE
    except XpmError as e:
        log_info(f"[ERROR]: numeric failure: {e}")
        return EXIT_NUMERIC_FAILURE


if __name__ == "__main__":
    sys.exit(main())


################################### TESTS ######################################

TEST_DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "test_data")


def _config(name):
    return os.path.join(TEST_DATA, name)


def _read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_curve_csv():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = os.path.join(tmpdirname, "curve.csv")
        assert main(["curve", "--config", _config("gaussian_small.cfg"), "--out", out, "--theta-steps", "5"]) == 0
        rows = _read_rows(out)
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 6
    thetas = [float(r[0]) for r in rows[1:]]
    assert thetas == sorted(thetas)
    for r in rows[1:]:
        fid, re, im = float(r[1]), float(r[2]), float(r[3])
        np.testing.assert_allclose(fid, re * re + im * im, rtol=1e-12)
        assert 0 < fid <= 1 + float(r[4])
        assert r[5] == ""


def test_curve_determinism():
    from utils.test_utils import try_file_curve_determinism

    assert try_file_curve_determinism(_config("gaussian_small.cfg"), ["--theta-steps", "9"])


def test_curve_fig1_peak():
    scenario = load_scenario(_config("fig1.cfg"))
    scenario = dataclasses.replace(scenario, theta_steps=21)
    buf = io.StringIO()
    curve = fidelity_curve(scenario.build_engine(), scenario.theta_grid())
    write_curve(curve, buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))[1:]
    best = max(rows, key=lambda r: float(r[1]))
    assert abs(float(best[0]) - 0.01) < 1e-12


def test_condphase_summaries():
    buf = io.StringIO()
    assert run_condphase(load_scenario(_config("photon_photon.cfg")), stream=buf) == 0
    record = dict(item.split("=") for item in buf.getvalue().split())
    assert set(record) == {"theta_c", "f_max", "evaluations", "flags"}
    assert abs(float(record["theta_c"]) - 0.01) <= 1e-9
    assert abs(float(record["f_max"]) - 1.0) <= 1e-9
    assert record["flags"] == "none"

    base = load_scenario(_config("gaussian_small.cfg"))
    free = condphase_summary(dataclasses.replace(base, chi_over_v=0.0))
    assert abs(free.theta_c) <= 1e-6
    assert abs(free.f_max - 1.0) <= 1e-9

    vacuum = condphase_summary(dataclasses.replace(base, nbar=0.0))
    assert vacuum.theta_c == 0.0
    assert abs(vacuum.f_max - 1.0) <= 1e-12
    assert "flat" in vacuum.flags


def test_curve_failed_points():
    from core.errors import QuadratureError
    from xpm.overlap import CoherentPhotonEngine

    class _FailingAbove(CoherentPhotonEngine):
        def overlap(self, theta):
            if theta > 0:
                raise QuadratureError("outer quadrature did not converge", partial=0.0, residual=1.0)
            return super().overlap(theta)

    class _Scenario(Scenario):
        def build_engine(self, debug_logs=False):
            return _FailingAbove(*self.oracle_inputs(), debug_logs=debug_logs)

    base = load_scenario(_config("gaussian_small.cfg"))
    scenario = _Scenario(**dict(dataclasses.asdict(base), theta_steps=5))
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = os.path.join(tmpdirname, "curve.csv")
        assert run_curve(scenario, out) == EXIT_NUMERIC_FAILURE
        rows = _read_rows(out)[1:]
    assert [float(r[0]) for r in rows] == list(scenario.theta_grid())
    assert [r[5] for r in rows[:3]] == ["", "", ""]
    for r in rows[3:]:
        assert "failed" in r[5].split(";")
        assert np.isnan(float(r[1]))


def test_oracle_check():
    import pytest

    buf = io.StringIO()
    scenario = dataclasses.replace(load_scenario(_config("gaussian_small.cfg")), theta_steps=5)
    assert run_oracle_check(scenario, "series", 40, stream=buf) == 0
    assert buf.getvalue().rstrip().endswith("PASS")

    with pytest.raises(OracleUsageError):
        run_oracle_check(dataclasses.replace(scenario, nbar=1000.0), "series", 40)


def test_oracle_check_discrete_fig1():
    buf = io.StringIO()
    scenario = fig1_scenario(nbar=2.0, theta_steps=5)
    assert run_oracle_check(scenario, "discrete", 4096, stream=buf) == EXIT_OK
    line = buf.getvalue().rstrip()
    assert line.startswith("oracle=discrete ")
    assert "flags=boundary_degenerate" in line
    assert line.endswith("PASS")

    with tempfile.TemporaryDirectory() as tmpdirname:
        cfg = os.path.join(tmpdirname, "fig1_small.cfg")
        with open(cfg, "w") as f:
            f.write(
                "[scenario]\nkind = counter_propagating\nnbar = 2\nsigma_c = 1\nsigma_s = 1\n"
                "separation = 5\nchi_over_v = 0.01\nvt = 10\ntheta_min = 0\ntheta_max = 0.02\n"
            )
        args = ["oracle-check", "--config", cfg, "--theta-steps", "3", "--oracle", "discrete", "--resolution", "4096"]
        assert main(args) == EXIT_OK


def test_usage_errors():
    assert main(["oracle-check", "--config", _config("transverse.cfg"), "--theta-steps", "3"]) == EXIT_USAGE
    assert main(["curve", "--config", _config("does_not_exist.cfg")]) == EXIT_USAGE
    assert main(["curve", "--config", _config("fig1.cfg"), "--theta-steps", "0"]) == EXIT_USAGE
    with tempfile.TemporaryDirectory() as tmpdirname:
        bad = os.path.join(tmpdirname, "bad.cfg")
        with open(bad, "w") as f:
            f.write("[scenario]\nkind = co_propagating\nvt = 10\n")
        assert main(["condphase", "--config", bad]) == EXIT_USAGE


def test_reproduce_fig1_deterministic():
    import filecmp

    with tempfile.TemporaryDirectory() as tmpdirname:
        out_1 = os.path.join(tmpdirname, "fig1_1.csv")
        out_2 = os.path.join(tmpdirname, "fig1_2.csv")
        assert main(["reproduce-fig1", "--out", out_1, "--theta-steps", "21"]) == 0
        assert main(["reproduce-fig1", "--out", out_2, "--theta-steps", "21"]) == 0
        assert filecmp.cmp(out_1, out_2, shallow=False)


def test_reproduce_fig2():
    assert reproduce_fig2(overrides={"theta_steps": 5}) == 0
