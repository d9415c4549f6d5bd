"""Two-body interaction kernels Δ(u), u = x - x'

The exact contact kernel χδ(u) cannot be evaluated pointwise, only through its
primitive (integrated_kernel). The gaussian kernel is the regularized delta
    Δ(u) = χ / (2 sqrt(π ε)) exp(-u² / (4ε))
and the same convention for ε is used everywhere in the repo.

The transverse kernel is the 2-D analogue g(u) = χ / (4πε) exp(-|u|² / (4ε)); its
argument is the transverse distance |x_T - y_T|.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np
from scipy.special import erfc

from core.errors import InvalidParameterError, UnsupportedOperationError


class KernelKind(Enum):
    CONTACT = "contact"
    GAUSSIAN = "gaussian_regularized"
    TOP_HAT = "top_hat"
    TRANSVERSE_CONTACT = "transverse_contact"


@dataclass(frozen=True)
class InteractionKernel:
    kind: KernelKind
    chi: float
    eps: float = None
    range_r: float = None

    def __post_init__(self):
        if not np.isfinite(self.chi) or np.iscomplexobj(self.chi):
            raise InvalidParameterError(f"chi must be a finite real number, got {self.chi}")
        if self.kind in (KernelKind.GAUSSIAN, KernelKind.TRANSVERSE_CONTACT):
            if self.eps is None or not self.eps > 0:
                raise InvalidParameterError(f"{self.kind.value} kernel needs eps > 0, got {self.eps}")
        if self.kind == KernelKind.TOP_HAT:
            if self.range_r is None or not self.range_r > 0:
                raise InvalidParameterError(f"top_hat kernel needs range_r > 0, got {self.range_r}")

    @property
    def is_exact_contact(self) -> bool:
        return self.kind == KernelKind.CONTACT


def contact_kernel(chi: float) -> InteractionKernel:
    return InteractionKernel(KernelKind.CONTACT, chi)


def gaussian_kernel(chi: float, eps: float) -> InteractionKernel:
    return InteractionKernel(KernelKind.GAUSSIAN, chi, eps=eps)


def top_hat_kernel(chi: float, range_r: float) -> InteractionKernel:
    return InteractionKernel(KernelKind.TOP_HAT, chi, range_r=range_r)


def transverse_contact_kernel(chi: float, eps_t: float) -> InteractionKernel:
    return InteractionKernel(KernelKind.TRANSVERSE_CONTACT, chi, eps=eps_t)


def evaluate_kernel(k: InteractionKernel, u):
    """pointwise kernel value Δ(u)

    For the transverse kernel `u` is the transverse distance |x_T - y_T|.

    Raises:
        UnsupportedOperationError: for the exact contact kernel
    """
    u = np.asarray(u, dtype=float)
    if k.kind == KernelKind.CONTACT:
        raise UnsupportedOperationError(
            "the exact contact kernel has no pointwise value, use integrated_kernel "
            "or a gaussian_regularized kernel"
        )
    if k.kind == KernelKind.GAUSSIAN:
        return k.chi / (2.0 * np.sqrt(np.pi * k.eps)) * np.exp(-(u ** 2) / (4.0 * k.eps))
    if k.kind == KernelKind.TOP_HAT:
        inside = np.where(np.abs(u) < k.range_r, 1.0, 0.0)
        inside = np.where(np.abs(u) == k.range_r, 0.5, inside)
        return k.chi / (2.0 * k.range_r) * inside
    # transverse
    return k.chi / (4.0 * np.pi * k.eps) * np.exp(-(u ** 2) / (4.0 * k.eps))


def integrated_kernel(k: InteractionKernel, a, b):
    """returns ∫_a^b Δ(u) du (vectorized over a, b)

    The exact delta sitting on an endpoint counts one half of χ.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a > b):
        raise InvalidParameterError("integrated_kernel needs a <= b")

    if k.kind == KernelKind.CONTACT:
        # sign(b) - sign(a) is 2 when 0 is interior, 1 when 0 is an endpoint
        return 0.5 * k.chi * (np.sign(b) - np.sign(a))

    if k.kind == KernelKind.GAUSSIAN:
        s = 2.0 * np.sqrt(k.eps)
        # erfc differences keep the far tails accurate
        right = 0.5 * k.chi * (erfc(a / s) - erfc(b / s))
        left = 0.5 * k.chi * (erfc(-b / s) - erfc(-a / s))
        mixed = k.chi - 0.5 * k.chi * (erfc(b / s) + erfc(-a / s))
        return np.where(a >= 0, right, np.where(b <= 0, left, mixed))

    if k.kind == KernelKind.TOP_HAT:
        r = k.range_r
        length = np.clip(np.minimum(b, r) - np.maximum(a, -r), 0.0, None)
        return k.chi / (2.0 * r) * length

    raise UnsupportedOperationError("transverse_contact has no 1-D primitive")


def breakpoints(k: InteractionKernel) -> List[float]:
    """points where Δ (or its primitive) is not smooth"""
    if k.kind in (KernelKind.CONTACT, KernelKind.GAUSSIAN):
        return [0.0]
    if k.kind == KernelKind.TOP_HAT:
        return [-k.range_r, k.range_r]
    return []


def effective_radius(k: InteractionKernel) -> float:
    """half-width outside of which Δ is below double precision of its peak"""
    if k.kind == KernelKind.CONTACT:
        return 0.0
    if k.kind == KernelKind.TOP_HAT:
        return k.range_r
    return 12.0 * np.sqrt(k.eps)


################################### TESTS ######################################


def test_kernel_validation():
    import pytest

    for bad in (lambda: gaussian_kernel(1.0, 0.0), lambda: top_hat_kernel(1.0, -1.0)):
        with pytest.raises(InvalidParameterError):
            bad()


def test_evaluate_kernel_examples():
    import pytest

    k = gaussian_kernel(1.0, 1e-20)
    np.testing.assert_allclose(evaluate_kernel(k, 0.0), 2.8209479e9, rtol=1e-7)

    assert evaluate_kernel(top_hat_kernel(1.0, 1.0), 2.0) == 0.0

    g = gaussian_kernel(0.7, 0.3)
    u = np.linspace(-2, 2, 41)
    np.testing.assert_array_equal(evaluate_kernel(g, u), evaluate_kernel(g, -u))

    with pytest.raises(UnsupportedOperationError):
        evaluate_kernel(contact_kernel(1.0), 0.0)


def test_integrated_kernel_examples():
    import pytest

    c = contact_kernel(0.5)
    assert integrated_kernel(c, -1.0, 1.0) == 0.5
    assert integrated_kernel(c, 1.0, 2.0) == 0.0
    # half count on the boundary
    assert integrated_kernel(c, 0.0, 2.0) == 0.25
    assert integrated_kernel(c, -1.0, 0.0) == 0.25

    g = gaussian_kernel(1.0, 0.01)
    np.testing.assert_allclose(integrated_kernel(g, -1.0, 1.0), 1.0 - 1.5375e-12, rtol=1e-15)

    with pytest.raises(InvalidParameterError):
        integrated_kernel(g, 1.0, -1.0)


def test_regularized_kernels_integrate_to_chi():
    from utils.quadrature import integrate

    g = gaussian_kernel(0.3, 0.01)
    res = integrate(lambda u: evaluate_kernel(g, u), [-2.0, 0.0, 2.0])
    np.testing.assert_allclose(res.value, 0.3, rtol=1e-10)

    t = top_hat_kernel(0.3, 0.5)
    res = integrate(lambda u: evaluate_kernel(t, u), [-2.0, -0.5, 0.5, 2.0])
    np.testing.assert_allclose(res.value, 0.3, rtol=1e-12)

    tr = transverse_contact_kernel(0.3, 0.02)
    # radial integral 2π ∫ g(r) r dr
    res = integrate(lambda r: 2 * np.pi * r * evaluate_kernel(tr, r), [0.0, 2.0])
    np.testing.assert_allclose(res.value, 0.3, rtol=1e-10)


def test_contact_limit_consistency():
    a, b = -1e-3, 2e-3
    exact = integrated_kernel(contact_kernel(1.0), a, b)
    errors = []
    for eps in (1e-4, 1e-6, 1e-8):
        approx = integrated_kernel(gaussian_kernel(1.0, eps), a, b)
        err = abs(approx - exact)
        assert err <= erfc(min(abs(a), abs(b)) / (2 * np.sqrt(eps)))
        errors.append(err)
    assert errors[0] > errors[1] > errors[2]


def test_integrated_kernel_additivity():
    from hypothesis import given, settings
    from hypothesis import strategies as st

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
    def additive(points):
        a, b, c = sorted(points)
        for k in (gaussian_kernel(1.3, 0.01), top_hat_kernel(1.3, 0.4), contact_kernel(1.3)):
            whole = integrated_kernel(k, a, c)
            split = integrated_kernel(k, a, b) + integrated_kernel(k, b, c)
            np.testing.assert_allclose(whole, split, atol=1e-14)

    additive()
