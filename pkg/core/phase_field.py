"""Accumulated interaction phase φ(x, y, t)

    φ(x, y, t) = ∫_0^t Δ(x - y + v t') dt',    v = v1 - v2

Pulse 1 (coordinate x) moves with v1 and pulse 2 (coordinate y) with v2. For v != 0
the time integral is the kernel primitive over the swept interval divided by |v|,
so no time stepping is needed. With the exact contact kernel φ only takes the values
0 and χ/|v| (the plateau), except on the boundary set where the half-count rule of
integrated_kernel applies.

In the transverse geometry the longitudinal pass-through is assumed complete and
only the transverse profile of the interaction is kept:
    φ(x_T, y_T) = (χ/|v|) g(|x_T - y_T|)
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import List

import numpy as np

from core.errors import InvalidParameterError, UnsupportedOperationError
from core.interaction_kernel import (
    InteractionKernel,
    KernelKind,
    breakpoints,
    contact_kernel,
    effective_radius,
    evaluate_kernel,
    gaussian_kernel,
    integrated_kernel,
    top_hat_kernel,
    transverse_contact_kernel,
)
from core.pulse_profile import PulseProfile, gaussian_profile, mean_photon_number
from utils.quadrature import integrate


class Geometry(Enum):
    LONGITUDINAL = "longitudinal"
    TRANSVERSE = "transverse"


@dataclass(frozen=True)
class PhaseField:
    kernel: InteractionKernel
    v1: float = 1.0
    v2: float = 0.0
    t: float = 0.0
    geometry: Geometry = Geometry.LONGITUDINAL
    # constant background phase added to φ everywhere
    offset: float = 0.0

    def __post_init__(self):
        for name in ("v1", "v2", "t", "offset"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        if self.t < 0:
            raise InvalidParameterError(f"elapsed time must be non-negative, got {self.t}")
        transverse_kernel = self.kernel.kind == KernelKind.TRANSVERSE_CONTACT
        if self.geometry == Geometry.TRANSVERSE:
            if not transverse_kernel:
                raise InvalidParameterError("transverse geometry needs a transverse_contact kernel")
            if self.v == 0:
                raise InvalidParameterError("transverse geometry is a pass-through, v must be non-zero")
        elif transverse_kernel:
            raise InvalidParameterError("transverse_contact kernel needs the transverse geometry")

    @property
    def v(self) -> float:
        return self.v1 - self.v2

    @property
    def sweep(self) -> float:
        """relative displacement v*t accumulated during the interaction"""
        return self.v * self.t

    @property
    def plateau_phase(self) -> float:
        """χ/|v| + offset, the phase of a fully swept kernel"""
        if self.v == 0:
            raise UnsupportedOperationError("no plateau phase for co-propagating pulses")
        return self.kernel.chi / abs(self.v) + self.offset

    def with_offset(self, offset: float) -> "PhaseField":
        return replace(self, offset=offset)


def phi(field: PhaseField, x, y):
    """φ(x, y) for arrays x, y (broadcast against each other)

    In the transverse geometry x and y are (x, y)-coordinate pairs of the transverse plane.

    Raises:
        UnsupportedOperationError: co-propagating pulses (v = 0) with the exact contact
            kernel; use copropagating_overlap or a regularized kernel instead
    """
    k = field.kernel
    if field.geometry == Geometry.TRANSVERSE:
        r = np.hypot(np.asarray(x[0]) - y[0], np.asarray(x[1]) - y[1])
        return evaluate_kernel(k, r) / abs(field.v) + field.offset

    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if field.v == 0:
        if k.is_exact_contact:
            raise UnsupportedOperationError(
                "φ of co-propagating pulses with the exact contact kernel is a delta in x - y; "
                "use copropagating_overlap or a gaussian_regularized kernel"
            )
        return field.t * evaluate_kernel(k, d) + field.offset

    end = d + field.sweep
    lo, hi = np.minimum(d, end), np.maximum(d, end)
    return integrated_kernel(k, lo, hi) / abs(field.v) + field.offset


def _kernel_edges(k: InteractionKernel) -> List[float]:
    edges = breakpoints(k)
    if k.kind == KernelKind.GAUSSIAN:
        # isolate the steep part of the regularized delta in its own segment
        r = effective_radius(k)
        edges = [-r, 0.0, r]
    return edges


def x_breakpoints(field: PhaseField, y: float) -> List[float]:
    """x positions where φ(., y) is not smooth (sorted, deduplicated)"""
    if field.geometry == Geometry.TRANSVERSE:
        return []
    points = []
    for b in _kernel_edges(field.kernel):
        points.append(y + b)
        if field.v != 0:
            points.append(y + b - field.sweep)
    return sorted(set(points))


def boundary_degenerate(field: PhaseField, x, y):
    """True where a discontinuity of the kernel sits exactly on an end of the sweep

    Only the contact and top_hat kernels have such points; at them φ takes the
    half-count value.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    flag = np.zeros(d.shape, dtype=bool)
    if field.kernel.kind not in (KernelKind.CONTACT, KernelKind.TOP_HAT):
        return flag
    for b in breakpoints(field.kernel):
        flag |= d == b
        if field.v != 0:
            flag |= d + field.sweep == b
    return flag


def plateau_interval(field: PhaseField):
    """range of d = x - y on which the kernel is swept completely"""
    if field.v == 0:
        raise UnsupportedOperationError("pass-through needs v != 0")
    r = effective_radius(field.kernel)
    span = abs(field.sweep)
    if field.v > 0:
        return r - span, -r
    return r, span - r


def _unit(p: PulseProfile):
    n = mean_photon_number(p)
    if n > 0:
        return p, n
    p = replace(p, amplitude_scale=1.0)
    return p, mean_photon_number(p)


def pass_through_fraction(field: PhaseField, p1: PulseProfile, p2: PulseProfile) -> float:
    """probability mass of |p1(x)|²|p2(y)|² (normalized) on the plateau of φ

    1 means the pulses start and end well separated with a full crossing in between.
    """
    if field.geometry == Geometry.TRANSVERSE:
        # the longitudinal crossing is complete by assumption
        return 1.0
    d_lo, d_hi = plateau_interval(field)
    if d_lo >= d_hi:
        return 0.0

    p1, n1 = _unit(p1)
    p2, n2 = _unit(p2)
    y_lo, y_hi = p2.support()

    def integrand(y):
        return p2.density(y) * p1.mass_between(y + d_lo, y + d_hi)

    res = integrate(integrand, [y_lo, p2.center[0], y_hi], atol=1e-13)
    return float(np.clip(res.value / (n1 * n2), 0.0, 1.0))


################################### TESTS ######################################


def _fig1_field(chi_over_v=0.01, vt=10.0, kernel=None):
    kernel = kernel or contact_kernel(chi_over_v)
    return PhaseField(kernel, v1=1.0, v2=0.0, t=vt)


def test_phi_examples():
    field = _fig1_field()
    # photon 5σ ahead of the coherent point, swept over 10σ
    assert phi(field, -5.0, 0.0) == 0.01
    assert phi(field, 1.0, 0.0) == 0.0

    g = PhaseField(gaussian_kernel(1.0, 0.01), v1=1.0, v2=0.0, t=10.0)
    np.testing.assert_allclose(phi(g, -5.0, 0.0), 1.0, rtol=1e-15)

    # time quadrature of the kernel along the sweep
    direct = integrate(lambda s: evaluate_kernel(g.kernel, -5.0 + s), [0.0, 5.0 - 0.6, 5.0, 5.0 + 0.6, 10.0])
    np.testing.assert_allclose(phi(g, -5.0, 0.0), direct.value, rtol=1e-10)


def test_phi_copropagating():
    import pytest

    g = PhaseField(gaussian_kernel(1.0, 0.25), v1=1.0, v2=1.0, t=0.5)
    np.testing.assert_allclose(phi(g, 0.3, 0.3), 0.5 / (2 * np.sqrt(np.pi * 0.25)))
    with pytest.raises(UnsupportedOperationError):
        phi(PhaseField(contact_kernel(1.0), v1=1.0, v2=1.0, t=1.0), 0.0, 0.0)


def test_phi_transverse():
    field = PhaseField(transverse_contact_kernel(0.02, 0.001), v1=2.0, v2=0.0, t=1.0, geometry=Geometry.TRANSVERSE)
    np.testing.assert_allclose(phi(field, (0.0, 0.0), (0.0, 0.0)), 0.01 / (4 * np.pi * 0.001))
    assert np.all(phi(field, (np.array([1.0]), 0.0), (0.0, 0.0)) < 1e-100)


def test_phi_offset_and_reality():
    field = _fig1_field(kernel=top_hat_kernel(0.2, 0.5)).with_offset(0.3)
    x = np.linspace(-12, 12, 97)
    vals = phi(field, x[:, None], x[None, :])
    assert np.isrealobj(vals)
    assert np.all(vals >= 0.3) and np.all(vals <= 0.5 + 1e-15)


def test_plateau_invariance():
    field = _fig1_field(vt=20.0)
    alpha, photon = gaussian_profile(0.0, 1.0), gaussian_profile(10.0, 1.0)
    assert pass_through_fraction(field, alpha, photon) >= 1 - 1e-6

    x = np.linspace(-4, 4, 201)[:, None]
    y = np.linspace(6, 14, 201)[None, :]
    assert np.max(np.abs(phi(field, x, y) - field.plateau_phase)) == 0.0


def test_pass_through_fraction_examples():
    from scipy.special import erfc

    alpha, photon = gaussian_profile(0.0, 1.0), gaussian_profile(5.0, 1.0)
    frac = pass_through_fraction(_fig1_field(), alpha, photon)
    assert 1 - 1e-3 <= frac < 1.0
    # z - y is normal with mean -5 and variance 2
    np.testing.assert_allclose(frac, 1 - erfc(2.5), rtol=1e-10)

    assert pass_through_fraction(_fig1_field(vt=0.0), alpha, photon) == 0.0

    same = gaussian_profile(0.0, 1.0)
    frac = pass_through_fraction(_fig1_field(vt=0.1), alpha, same)
    assert 0.0 < frac < 1.0


def test_boundary_degenerate():
    field = _fig1_field()
    flags = boundary_degenerate(field, np.array([0.0, -10.0, -3.0]), 0.0)
    np.testing.assert_array_equal(flags, [True, True, False])
    assert phi(field, 0.0, 0.0) == 0.005
    g = PhaseField(gaussian_kernel(1.0, 0.01), t=10.0)
    assert not np.any(boundary_degenerate(g, 0.0, 0.0))


def test_x_breakpoints():
    assert x_breakpoints(_fig1_field(), 5.0) == [-5.0, 5.0]
    g = PhaseField(gaussian_kernel(1.0, 0.01), t=2.0)
    np.testing.assert_allclose(x_breakpoints(g, 0.0), [-3.2, -2.0, -1.2, -0.8, 0.0, 1.2])


def test_time_additivity():
    g = gaussian_kernel(0.7, 0.05)
    t1, t2 = 0.8, 1.7
    v1, v2 = 1.3, 0.2
    x = np.linspace(-4, 4, 81)[:, None]
    y = np.linspace(-3, 3, 61)[None, :]
    whole = phi(PhaseField(g, v1, v2, t1 + t2), x, y)
    first = phi(PhaseField(g, v1, v2, t1), x, y)
    second = phi(PhaseField(g, v1, v2, t2), x + (v1 - v2) * t1, y)
    np.testing.assert_allclose(whole, first + second, atol=1e-10)


def test_velocity_reflection_symmetry():
    from hypothesis import given, settings
    from hypothesis import strategies as st

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-20.0, 20.0), st.floats(0.1, 3.0), st.floats(0.0, 10.0))
    def reflected(d, v, t):
        for k in (gaussian_kernel(0.4, 0.02), top_hat_kernel(0.4, 0.3), contact_kernel(0.4)):
            forward = phi(PhaseField(k, v, 0.0, t), d, 0.0)
            backward = phi(PhaseField(k, 0.0, v, t), -d, 0.0)
            np.testing.assert_allclose(forward, backward, atol=1e-14)

    reflected()
