"""Conditional phase θ_c = argmax_θ F(θ)

A coarse scan on the periodic grid θ_k = -π + 2πk/N is followed by a golden-section
search (maximizing) on [θ_k* - h, θ_k* + h], h = 2π/N. The search works on the
unwrapped line and calls F at wrapped arguments, so a maximum near ±π is handled
like any other.
"""

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from core.errors import InvalidParameterError
from utils.misc_utils import wrap_phase

INV_PHI = (math.sqrt(5) - 1) / 2  # 1 / phi
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2  # 1 / phi^2

FLAG_FLAT = "flat"


@dataclass
class CondPhaseParams:
    """conditional phase search parameters"""

    # points of the coarse periodic grid
    COARSE_POINTS: int = 256

    # target width of the final golden-section bracket (rad)
    TOL: float = 1e-6

    # F is treated as flat if its range on the coarse grid is below this
    FLAT_RANGE: float = 1e-14


@dataclass(frozen=True)
class CondPhaseResult:
    theta_c: float
    f_max: float
    bracket_width: float
    evaluations: int
    flags: Tuple[str, ...] = ()
    # best F seen after the coarse scan and after every golden-section step
    refinement_trace: Tuple[float, ...] = ()

    @property
    def is_flat(self) -> bool:
        return FLAG_FLAT in self.flags


class _CountingFunction:
    def __init__(self, func: Callable[[float], float]):
        self.func = func
        self.count = 0
        self.best_theta = None
        self.best_value = -np.inf

    def __call__(self, theta: float) -> float:
        self.count += 1
        value = float(self.func(wrap_phase(theta)))
        if value > self.best_value:
            self.best_theta, self.best_value = theta, value
        return value


def _golden_section_max(F: _CountingFunction, a: float, b: float, tol: float):
    """golden-section search for the maximum of F on [a, b]

    Returns:
        (lo, hi, trace): final bracket with hi - lo <= tol, best F after every step
    """
    h = b - a
    trace = []
    if h <= tol:
        return a, b, trace

    # steps needed to reach the tolerance
    n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))

    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = F(c)
    yd = F(d)
    trace.append(F.best_value)

    for _ in range(n - 1):
        if yc > yd:
            b = d
            d = c
            yd = yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = F(c)
        else:
            a = c
            c = d
            yc = yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = F(d)
        trace.append(F.best_value)

    if yc > yd:
        return a, d, trace
    return c, b, trace


def conditional_phase(
    evaluate_F: Callable[[float], float],
    coarse_points: int = CondPhaseParams.COARSE_POINTS,
    tol: float = CondPhaseParams.TOL,
) -> CondPhaseResult:
    """θ_c and the maximal fidelity of the fidelity function evaluate_F

    Args:
        evaluate_F: θ -> F(θ), defined on [-π, π)
        coarse_points (int): coarse grid size, at least 8
        tol (float): width of the final search bracket

    Returns:
        CondPhaseResult: theta_c is the midpoint of the final bracket wrapped to [-π, π);
            f_max is the largest F seen. Ties on the coarse grid go to the smallest |θ|.
            A flat F gives theta_c = 0 and the "flat" flag.
    """
    if int(coarse_points) != coarse_points or coarse_points < 8:
        raise InvalidParameterError(f"coarse_points must be an integer >= 8, got {coarse_points}")
    if not tol > 0:
        raise InvalidParameterError(f"tol must be positive, got {tol}")
    coarse_points = int(coarse_points)

    F = _CountingFunction(evaluate_F)
    step = 2 * np.pi / coarse_points
    grid = -np.pi + step * np.arange(coarse_points)
    values = np.array([F(t) for t in grid])

    best = values.max()
    if best - values.min() < CondPhaseParams.FLAT_RANGE:
        return CondPhaseResult(0.0, float(best), 0.0, F.count, (FLAG_FLAT,), (float(best),))

    ties = [k for k in range(coarse_points) if values[k] == best]
    k_best = min(ties, key=lambda k: (abs(grid[k]), grid[k]))
    theta_best = grid[k_best]

    lo, hi, trace = _golden_section_max(F, theta_best - step, theta_best + step, tol)
    theta_c = wrap_phase(0.5 * (lo + hi))
    F(theta_c)
    trace = [float(best)] + trace + [F.best_value]
    return CondPhaseResult(theta_c, F.best_value, hi - lo, F.count, (), tuple(trace))


################################### TESTS ######################################


def _stub(center, nbar=20.0):
    return lambda theta: np.exp(nbar * (np.cos(theta - center) - 1))


def test_analytic_stub():
    res = conditional_phase(_stub(0.3))
    assert abs(res.theta_c - 0.3) <= 1e-6
    assert res.bracket_width <= 1e-6
    np.testing.assert_allclose(res.f_max, 1.0, atol=1e-10)
    assert not res.is_flat
    assert res.evaluations > 256


def test_argmax_covariance():
    c = 0.3
    for center in (0.1, -1.7, 3.0):
        base = conditional_phase(_stub(center))
        F = _stub(center)
        shifted = conditional_phase(lambda t: F(t - c))
        diff = wrap_phase(shifted.theta_c - base.theta_c - c)
        assert abs(diff) <= 2e-6


def test_monotone_refinement():
    res = conditional_phase(_stub(-0.77, nbar=3.0), coarse_points=64, tol=1e-8)
    assert all(b >= a for a, b in zip(res.refinement_trace, res.refinement_trace[1:]))
    assert res.refinement_trace[-1] == res.f_max


def test_solver_independence():
    F = _stub(1.234567)
    tol = 1e-4
    coarse = conditional_phase(F, tol=tol)
    fine = conditional_phase(F, tol=tol / 2)
    assert abs(coarse.theta_c - fine.theta_c) < tol


def test_flat_function():
    res = conditional_phase(lambda t: 1.0)
    assert res.theta_c == 0.0
    assert res.is_flat
    assert res.f_max == 1.0
    assert res.evaluations == 256


def test_tie_break_smallest_phase():
    # maxima at 0, ±π/2 and -π
    res = conditional_phase(lambda t: np.cos(2 * t) ** 2)
    assert abs(res.theta_c) <= 1e-6


def test_peak_near_pi_wraps():
    res = conditional_phase(_stub(np.pi - 1e-3))
    assert abs(wrap_phase(res.theta_c - (np.pi - 1e-3))) <= 1e-6


def test_invalid_arguments():
    import pytest

    for kwargs in ({"coarse_points": 4}, {"tol": 0.0}):
        with pytest.raises(InvalidParameterError):
            conditional_phase(_stub(0.0), **kwargs)
