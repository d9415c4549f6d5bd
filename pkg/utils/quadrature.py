"""Composite Gauss-Legendre quadrature with panel doubling

All integrals in the overlap engine go through this file. The rule is fixed-order
Gauss-Legendre on `panels` equal panels per segment; a segment is the interval
between two consecutive edges, so callers can put edges at the points where the
integrand is not smooth (plateau edges of the interaction phase, for example).

The refinement loop doubles the panel count until two successive results differ
by less than the absolute tolerance. Node placement only depends on
(edges, panels, order), so results are deterministic.
"""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from core.errors import QuadratureError
from utils.misc_utils import cache


@dataclass
class QuadratureParams:
    """quadrature hyper parameters"""

    # Gauss-Legendre order on every panel
    ORDER: int = 16

    # panel count per segment at the first refinement level
    INITIAL_PANELS: int = 4

    # refinement stops (with a QuadratureError) once this many panels are reached
    MAX_PANELS: int = 1 << 14

    # absolute tolerance between successive refinement levels
    ATOL: float = 1e-10


@dataclass(frozen=True)
class QuadratureResult:
    value: np.ndarray
    error: float
    panels: int


@cache
def gauss_legendre_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """nodes and weights of the Gauss-Legendre rule mapped to [0, 1]"""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def composite_rule(edges, panels: int, order: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """returns nodes and weights of the composite rule on every segment of `edges`

    Args:
        edges (array_like): shape (..., S+1), non-decreasing along the last axis
        panels (int): equal panels per segment
        order (int): Gauss-Legendre order per panel

    Returns:
        nodes, weights: arrays of shape (..., S * panels * order)
    """
    edges = np.asarray(edges, dtype=float)
    t, w = gauss_legendre_rule(order)
    lo = edges[..., :-1, None, None]
    width = (edges[..., 1:] - edges[..., :-1])[..., None, None]

    # position of every node inside its segment, in units of the segment width
    frac = (np.arange(panels)[:, None] + t[None, :]) / panels
    nodes = lo + width * frac
    weights = np.broadcast_to(width / panels * w, nodes.shape)

    new_shape = edges.shape[:-1] + (-1,)
    return nodes.reshape(new_shape), np.ascontiguousarray(weights).reshape(new_shape)


def integrate(
    func: Callable[[np.ndarray], np.ndarray],
    edges,
    params: QuadratureParams = None,
    atol: float = None,
) -> QuadratureResult:
    """integrates func over the segments of `edges` with panel doubling

    func receives nodes of shape (..., N) and must return values of the same shape.
    The leading axes (...) are independent integrals solved together; convergence is
    judged on the worst of them.

    Raises:
        QuadratureError: if MAX_PANELS is reached before convergence
    """
    params = params or QuadratureParams()
    atol = params.ATOL if atol is None else atol

    def _rule_sum(panels):
        nodes, weights = composite_rule(edges, panels, params.ORDER)
        return np.sum(func(nodes) * weights, axis=-1)

    panels = params.INITIAL_PANELS
    prev = _rule_sum(panels)
    while True:
        panels *= 2
        cur = _rule_sum(panels)
        err = float(np.max(np.abs(cur - prev))) if np.size(cur) else 0.0
        if err < atol:
            return QuadratureResult(cur, err, panels)
        if panels >= params.MAX_PANELS:
            raise QuadratureError(
                f"quadrature did not converge with {panels} panels (residual {err:.3e})",
                partial=cur,
                residual=err,
            )
        prev = cur


def tensor_rule(edges_x, edges_y, panels: int, order: int = 16):
    """2-D tensor-product rule on a rectangle

    Returns:
        X, Y, W: meshgrid nodes (indexing="ij") and product weights
    """
    nx, wx = composite_rule(edges_x, panels, order)
    ny, wy = composite_rule(edges_y, panels, order)
    X, Y = np.meshgrid(nx, ny, indexing="ij")
    return X, Y, np.outer(wx, wy)


################################### TESTS ######################################


def test_rule_exact_for_polynomials():
    nodes, weights = composite_rule([-1.0, 2.0], panels=1, order=4)
    # degree 7 is exact for 4-point Gauss-Legendre
    val = np.sum(weights * nodes ** 7)
    np.testing.assert_allclose(val, (2.0 ** 8 - 1.0) / 8, rtol=1e-13)


def test_integrate_gaussian():
    res = integrate(lambda x: np.exp(-0.5 * x ** 2), [-10.0, 10.0])
    np.testing.assert_allclose(res.value, np.sqrt(2 * np.pi), rtol=1e-12)
    assert res.error < 1e-10


def test_integrate_with_breakpoint():
    """a step function is integrated exactly once an edge sits on the jump"""
    step = lambda x: np.where(x < 0.3, 1.0, 0.0)
    res = integrate(step, [-1.0, 0.3, 1.0])
    np.testing.assert_allclose(res.value, 1.3, rtol=1e-14)


def test_integrate_batched_edges():
    edges = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 1.0]])
    res = integrate(lambda x: x, edges)
    np.testing.assert_allclose(res.value, [0.5, 2.0, 0.0], atol=1e-14)


def test_integrate_raises_on_cap():
    import pytest

    params = QuadratureParams(INITIAL_PANELS=1, MAX_PANELS=4)
    with pytest.raises(QuadratureError) as info:
        # oscillates far too fast for 4 panels
        integrate(lambda x: np.cos(1e4 * x), [0.0, 10.0], params=params)
    assert info.value.partial is not None
    assert info.value.residual > 0


def test_tensor_rule_area():
    X, Y, W = tensor_rule([0.0, 2.0], [-1.0, 1.0], panels=2, order=4)
    np.testing.assert_allclose(np.sum(W), 4.0, rtol=1e-14)
    np.testing.assert_allclose(np.sum(W * X * Y ** 2), 2.0 * 2.0 / 3.0, rtol=1e-13)
