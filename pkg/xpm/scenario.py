"""Scenario documents

A scenario is a flat `key = value` document with an optional `[scenario]` header and
`#` comments, for example

    [scenario]
    kind = counter_propagating
    nbar = 1000
    sigma_c = 1
    sigma_s = 1
    separation = 5      # units of sigma_s
    chi_over_v = 0.01
    vt = 10

Geometry conventions shared by every kind: the coherent pulse (or photon 1 for
photon_photon) is centered at 0 and moves with v1 = 1; the single photon sits at
separation * sigma_s and is at rest.
"""

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from core.errors import InvalidParameterError, OracleUsageError, ScenarioParseError
from core.interaction_kernel import contact_kernel, gaussian_kernel, transverse_contact_kernel
from core.phase_field import Geometry, PhaseField
from core.pulse_profile import PulseProfile, coherent_profile, gaussian_profile
from xpm.condphase import CondPhaseParams
from xpm.overlap import (
    CoherentPhotonEngine,
    CopropagatingEngine,
    OverlapEngine,
    PhotonPhotonEngine,
    TransverseEngine,
)

# kind -> (required keys, optional keys)
KIND_KEYS: Dict[str, Tuple[Tuple[str, ...], Tuple[str, ...]]] = {
    "counter_propagating": (("nbar", "sigma_c", "sigma_s", "separation", "chi_over_v", "vt"), ("epsilon",)),
    "co_propagating": (("nbar", "sigma_c", "sigma_s", "chi_t", "epsilon"), ("separation",)),
    "transverse": (("nbar", "sigma_c", "sigma_s", "chi_over_v", "epsilon_t"), ("separation",)),
    "photon_photon": (("sigma_c", "sigma_s", "separation", "chi_over_v", "vt"), ("epsilon",)),
}

COMMON_KEYS = ("theta_min", "theta_max", "theta_steps", "output", "coarse_points", "tol", "support")
INTEGER_KEYS = ("theta_steps", "coarse_points")
STRING_KEYS = ("kind", "output")

ALL_KEYS = set(STRING_KEYS).union(COMMON_KEYS, *(req + opt for req, opt in KIND_KEYS.values()))


@dataclass(frozen=True)
class Scenario:
    kind: str
    nbar: float = None
    sigma_c: float = 1.0
    sigma_s: float = 1.0
    # initial center distance, units of sigma_s
    separation: float = 0.0
    chi_over_v: float = None
    chi_t: float = None
    vt: float = None
    epsilon: float = None
    epsilon_t: float = None
    theta_min: float = -0.05
    theta_max: float = 0.05
    theta_steps: int = 201
    output: str = None
    coarse_points: int = CondPhaseParams.COARSE_POINTS
    tol: float = CondPhaseParams.TOL
    # gaussian truncation, units of sigma
    support: float = 8.0

    def theta_grid(self) -> np.ndarray:
        return np.linspace(self.theta_min, self.theta_max, self.theta_steps)

    def profiles(self) -> Tuple[PulseProfile, PulseProfile]:
        """(coherent pulse or photon 1, single photon)"""
        dim = 2 if self.kind == "transverse" else 1
        if dim == 2:
            first_center, photon_center = (0.0, 0.0), (self.separation * self.sigma_s, 0.0)
        else:
            first_center, photon_center = 0.0, self.separation * self.sigma_s
        first = gaussian_profile(first_center, self.sigma_c, dim, support_width=self.support)
        photon = gaussian_profile(photon_center, self.sigma_s, dim, support_width=self.support)
        if self.kind == "photon_photon":
            return first, photon
        return coherent_profile(first, self.nbar), photon

    def field(self) -> PhaseField:
        if self.kind == "transverse":
            kernel = transverse_contact_kernel(self.chi_over_v, self.epsilon_t)
            return PhaseField(kernel, v1=1.0, v2=0.0, geometry=Geometry.TRANSVERSE)
        if self.kind == "co_propagating":
            return PhaseField(gaussian_kernel(self.chi_t, self.epsilon), v1=1.0, v2=1.0, t=1.0)
        if self.epsilon is None:
            kernel = contact_kernel(self.chi_over_v)
        else:
            kernel = gaussian_kernel(self.chi_over_v, self.epsilon)
        return PhaseField(kernel, v1=1.0, v2=0.0, t=self.vt)

    def build_engine(self, debug_logs: bool = False) -> OverlapEngine:
        first, photon = self.profiles()
        if self.kind == "co_propagating":
            return CopropagatingEngine(first, photon, self.chi_t, self.epsilon, debug_logs=debug_logs)
        if self.kind == "transverse":
            return TransverseEngine(first, photon, self.field(), debug_logs=debug_logs)
        if self.kind == "photon_photon":
            return PhotonPhotonEngine(first, photon, self.field(), debug_logs=debug_logs)
        return CoherentPhotonEngine(first, photon, self.field(), debug_logs=debug_logs)

    def oracle_inputs(self) -> Tuple[PulseProfile, PulseProfile, PhaseField]:
        """(α, f, field) for the discrete-mode oracles, 1-D coherent kinds only"""
        if self.kind in ("transverse", "photon_photon"):
            raise OracleUsageError(f"no oracle for kind {self.kind}")
        alpha, f = self.profiles()
        return alpha, f, self.field()


def _number(key: str, text: str, line: int):
    try:
        value = float(text)
    except ValueError:
        raise ScenarioParseError(f"non-numeric value for {key}: {text!r}", key, line) from None
    if not math.isfinite(value):
        raise ScenarioParseError(f"non-finite value for {key}: {text!r}", key, line)
    if key in INTEGER_KEYS:
        if value != int(value):
            raise ScenarioParseError(f"{key} must be an integer, got {text!r}", key, line)
        return int(value)
    return value


def _check(cond: bool, message: str, key: str, lines: Dict[str, int]):
    if not cond:
        raise ScenarioParseError(message, key, lines.get(key))


def _construct(build, key: str, lines: Dict[str, int]):
    try:
        build()
    except InvalidParameterError as e:
        raise ScenarioParseError(str(e), key, lines.get(key)) from e


def parse_scenario(text: str) -> Scenario:
    """parses and validates a scenario document

    Raises:
        ScenarioParseError: naming the offending key and line
    """
    values, lines = {}, {}
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[scenario]" or seen_header or values:
                raise ScenarioParseError(f"unexpected section header {line!r}", line=lineno)
            seen_header = True
            continue
        if "=" not in line:
            raise ScenarioParseError(f"expected `key = value`, got {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ScenarioParseError(f"unknown key: {key}", key, lineno)
        if key in values:
            raise ScenarioParseError(f"duplicate key: {key}", key, lineno)
        if not value:
            raise ScenarioParseError(f"empty value for {key}", key, lineno)
        values[key] = value if key in STRING_KEYS else _number(key, value, lineno)
        lines[key] = lineno

    if "kind" not in values:
        raise ScenarioParseError("missing key: kind", "kind")
    kind = values["kind"]
    _check(kind in KIND_KEYS, f"unknown kind: {kind}", "kind", lines)

    required, optional = KIND_KEYS[kind]
    allowed = set(required) | set(optional) | set(COMMON_KEYS) | {"kind"}
    for key in sorted(values, key=lines.get):
        _check(key in allowed, f"extraneous key: {key}", key, lines)
    for key in required:
        _check(key in values, f"missing key: {key}", key, lines)

    for key in ("sigma_c", "sigma_s", "epsilon", "epsilon_t", "support", "tol"):
        if key in values:
            _check(values[key] > 0, f"{key} must be positive, got {values[key]}", key, lines)
    for key in ("nbar", "vt"):
        if key in values:
            _check(values[key] >= 0, f"{key} must be non-negative, got {values[key]}", key, lines)

    s = Scenario(**values)
    _check(s.theta_steps >= 1, f"theta_steps must be >= 1, got {s.theta_steps}", "theta_steps", lines)
    _check(
        s.theta_min < s.theta_max or (s.theta_steps == 1 and s.theta_min == s.theta_max),
        f"theta_min must be below theta_max, got [{s.theta_min}, {s.theta_max}]",
        "theta_min" if "theta_min" in lines else "theta_max",
        lines,
    )
    _check(s.coarse_points >= 8, f"coarse_points must be >= 8, got {s.coarse_points}", "coarse_points", lines)

    # what the profile and kernel constructors still reject, against the key feeding them
    _construct(s.profiles, "separation", lines)
    _construct(s.field, {"co_propagating": "chi_t", "transverse": "epsilon_t"}.get(kind, "chi_over_v"), lines)
    return s


def load_scenario(path: str) -> Scenario:
    with open(path, "r") as f:
        return parse_scenario(f.read())


def fig1_scenario(nbar: float = 1000.0, **overrides) -> Scenario:
    """counter-propagating pass-through: identical unit gaussians 5σ apart, χ/v = 0.01, vt = 10σ"""
    params = dict(
        kind="counter_propagating",
        nbar=nbar,
        separation=5.0,
        chi_over_v=0.01,
        vt=10.0,
        theta_min=0.0,
        theta_max=0.02,
    )
    params.update(overrides)
    return Scenario(**params)


def fig2_scenario(**overrides) -> Scenario:
    """co-propagating regularized contact: n̄ = 1000, χt = 0.01, ε = 1e-20"""
    params = dict(kind="co_propagating", nbar=1000.0, chi_t=0.01, epsilon=1e-20, theta_min=-0.01, theta_max=0.01)
    params.update(overrides)
    return Scenario(**params)


def transverse_scenario(epsilon_t: float, **overrides) -> Scenario:
    """pass-through with the transverse contact kernel, σ_T = 0.2 and n̄ = 1"""
    params = dict(kind="transverse", nbar=1.0, sigma_c=0.2, sigma_s=0.2, chi_over_v=0.01, epsilon_t=epsilon_t)
    params.update(overrides)
    return Scenario(**params)


################################### TESTS ######################################

FIG1_DOC = """
# counter-propagating pass-through
[scenario]
kind = counter_propagating
nbar = 1000
sigma_c = 1
sigma_s = 1
separation = 5
chi_over_v = 0.01
vt = 10
"""


def _expect_parse_error(text, message, line=None):
    import re

    import pytest

    with pytest.raises(ScenarioParseError, match=re.escape(message)) as info:
        parse_scenario(text)
    assert info.value.line == line, f"line {info.value.line} != {line}"
    return info.value


def test_parse_fig1_document():
    s = parse_scenario(FIG1_DOC)
    assert s.kind == "counter_propagating"
    assert (s.nbar, s.separation, s.chi_over_v, s.vt) == (1000.0, 5.0, 0.01, 10.0)
    assert (s.coarse_points, s.tol, s.support) == (256, 1e-6, 8.0)
    assert s.theta_steps == 201 and len(s.theta_grid()) == 201
    assert s.epsilon is None and s.output is None

    alpha, f = s.profiles()
    assert f.center == (5.0,)
    assert isinstance(s.build_engine(), CoherentPhotonEngine)
    assert s.field().kernel.is_exact_contact


def test_parse_errors():
    _expect_parse_error("", "missing key: kind")
    _expect_parse_error("# only a comment\n", "missing key: kind")

    doc = "kind = co_propagating\nnbar = 1\nsigma_c = 1\nsigma_s = 1\nchi_t = 0.01\nepsilon = 1e-4\nvt = 10\n"
    e = _expect_parse_error(doc, "extraneous key: vt", line=7)
    assert e.key == "vt"
    assert "(line 7)" in str(e)

    _expect_parse_error(FIG1_DOC + "colour = red\n", "unknown key: colour", line=11)
    _expect_parse_error(FIG1_DOC.replace("vt = 10", "vt = ten"), "non-numeric value for vt", line=10)
    _expect_parse_error(FIG1_DOC.replace("vt = 10\n", ""), "missing key: vt")
    _expect_parse_error(FIG1_DOC + "nbar = 2\n", "duplicate key: nbar", line=11)
    _expect_parse_error(FIG1_DOC.replace("sigma_s = 1", "sigma_s = 0"), "sigma_s must be positive", line=7)
    _expect_parse_error(FIG1_DOC.replace("nbar = 1000", "nbar = -1"), "nbar must be non-negative", line=5)
    _expect_parse_error(FIG1_DOC + "theta_steps = 2.5\n", "must be an integer", line=11)
    _expect_parse_error(FIG1_DOC + "theta_min = 1\ntheta_max = 0\n", "theta_min must be below theta_max", line=11)
    _expect_parse_error(FIG1_DOC.replace("kind = counter_propagating", "kind = sideways"), "unknown kind", line=4)
    _expect_parse_error(FIG1_DOC + "[other]\n", "unexpected section header", line=11)
    _expect_parse_error(FIG1_DOC + "support 8\n", "expected `key = value`", line=11)

    # the center overflows inside the profile constructor
    overflow = FIG1_DOC.replace("sigma_s = 1\n", "sigma_s = 10\n").replace("separation = 5", "separation = 1e308")
    e = _expect_parse_error(overflow, "center must be finite", line=8)
    assert e.key == "separation"


def test_single_point_grid_and_optional_keys():
    s = parse_scenario(FIG1_DOC + "theta_steps = 1\ntheta_min = 0.01\ntheta_max = 0.01\nepsilon = 0.01\n")
    assert list(s.theta_grid()) == [0.01]
    assert not s.field().kernel.is_exact_contact

    s = parse_scenario(FIG1_DOC + "support = 6\noutput = curve.csv\n")
    assert s.output == "curve.csv"
    assert s.profiles()[1].support() == (-1.0, 11.0)


def test_engine_dispatch():
    import pytest

    cop = parse_scenario(
        "[scenario]\nkind = co_propagating\nnbar = 1\nsigma_c = 1\nsigma_s = 1\nchi_t = 0.01\nepsilon = 1e-20\n"
    )
    assert isinstance(cop.build_engine(), CopropagatingEngine)
    assert cop.build_engine().frozen

    assert isinstance(transverse_scenario(0.004).build_engine(), TransverseEngine)
    pp = Scenario("photon_photon", separation=10.0, chi_over_v=0.01, vt=20.0)
    assert isinstance(pp.build_engine(), PhotonPhotonEngine)

    for s in (transverse_scenario(0.004), pp):
        with pytest.raises(OracleUsageError):
            s.oracle_inputs()


def test_fig1_condphase():
    from xpm.condphase import conditional_phase

    res = conditional_phase(fig1_scenario().build_engine().fidelity)
    assert abs(res.theta_c - 0.01) <= 1e-4
    assert res.f_max >= 0.998


def test_fig2_condphase():
    from xpm.condphase import conditional_phase
    from utils.test_utils import fidelity_peak_test

    engine = fig2_scenario().build_engine()
    res = conditional_phase(engine.fidelity)
    assert abs(res.theta_c) <= 1e-4
    assert engine.fidelity(0.0) >= 1 - 1e-4
    fidelity_peak_test(engine.fidelity, np.linspace(-0.01, 0.01, 21), 0.0, 1e-12, min_fidelity=1 - 1e-4)


def test_transverse_conditional_phase_vanishes():
    from xpm.condphase import conditional_phase

    results = []
    for eps_t in (4e-3, 4e-4, 4e-5):
        engine = transverse_scenario(eps_t).build_engine()
        results.append((conditional_phase(engine.fidelity, coarse_points=64).theta_c, engine.fidelity(0.0)))
    thetas = [t for t, _ in results]
    print(f" theta_c: {thetas}")
    assert thetas[0] > thetas[1] > thetas[2] > 0
    assert results[-1][1] >= 0.99
