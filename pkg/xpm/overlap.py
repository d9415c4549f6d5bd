"""Output-state overlaps of the XPM process

Coherent state α ⊗ single photon f. With φ(x, y) the accumulated interaction phase
the overlap with the ideal output |α e^{-iθ}> ⊗ |f> is

    value(θ) = ∫dy |f(y)|² exp(E(y, θ))
    E(y, θ)  = ∫dx |α(x)|² (e^{i(θ - φ(x, y))} - 1)
             = n̄ (e^{iθ} - 1) + e^{iθ} J(y),     J(y) = ∫dx |α(x)|² (e^{-iφ(x, y)} - 1)

and F(θ) = |value(θ)|². J does not depend on θ, so the engines tabulate it once per
outer quadrature level and a whole fidelity curve costs one exponentiation per node.
The n̄ part is subtracted analytically, which keeps n̄ up to 1e6 stable.

Single photon f1 ⊗ single photon f2 uses the same tables with α := f1:

    <Φ_in|Φ_out> = ∫dy |f2(y)|² (∫|f1|² + J(y))

A constant background phase c (PhaseField.offset) enters exactly as θ -> θ - c.

Engines:
    CoherentPhotonEngine   longitudinal geometry, any kernel with a pointwise φ
    CopropagatingEngine    v = 0 with a narrow regularized delta (down to ε = 1e-20)
    TransverseEngine       pass-through with a 2-D transverse regularized delta
    PhotonPhotonEngine     bi-photon gate
"""

import abc
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import binom, erfc, gamma, ive, sici

from core.errors import (
    InvalidParameterError,
    InvariantViolationError,
    QuadratureError,
    UnsupportedOperationError,
    XpmError,
)
from core.interaction_kernel import contact_kernel, gaussian_kernel, top_hat_kernel
from core.phase_field import (
    Geometry,
    PhaseField,
    pass_through_fraction,
    phi,
    x_breakpoints,
)
from core.pulse_profile import (
    ProfileKind,
    PulseProfile,
    coherent_profile,
    gaussian_profile,
    mean_photon_number,
)
from utils.misc_utils import cache, expm1i, log_info
from utils.quadrature import QuadratureParams, integrate

FLAG_FAILED = "failed"
FLAG_LOW_PASS_THROUGH = "low_pass_through"

# pass-through fractions below 1 - LOW_PASS_THROUGH are flagged
LOW_PASS_THROUGH = 1e-3

# above this peak phase the envelope is frozen across the spike, if the freezing bound allows
FROZEN_SPIKE_PHASE = 256.0

# above this peak phase the spike moments come from the endpoint expansions
ASYMPTOTIC_SPIKE_PHASE = 2e4
ASYMPTOTIC_WINDOW = 4096.0

# truncation of the spike window in units of 2 sqrt(ε)
SPIKE_WINDOW = 6.0

# rows of the J table evaluated together
ROW_CHUNK = 1024


@dataclass(frozen=True)
class OverlapResult:
    value: complex
    error_estimate: float = 0.0
    flags: Tuple[str, ...] = ()

    @property
    def fidelity(self) -> float:
        return abs(self.value) ** 2

    @property
    def phase(self) -> float:
        """-arg(value)"""
        return float(-np.angle(self.value))

    @property
    def failed(self) -> bool:
        return FLAG_FAILED in self.flags


def inner_tolerance(nbar: float) -> float:
    return 1e-10 + 1e-13 * nbar


def single_mode_fidelity(nbar: float, theta: float, phi0: float) -> float:
    """F of the single-mode picture where every photon of α picks up the phase φ0"""
    return float(np.exp(2 * nbar * (np.cos(theta - phi0) - 1)))


def _log_power_derivatives(m: float, order: int) -> List[Tuple[int, dict]]:
    """(n, {e: c}) for j = 0..order, with d^j/dw^j (L^m / w) = w^{-n} Σ c L^e and L = ln(B/w)"""
    terms = [(1, {m: 1.0})]
    for _ in range(order):
        n, poly = terms[-1]
        nxt = {}
        for e, c in poly.items():
            nxt[e] = nxt.get(e, 0.0) - n * c
            if e != 0:
                nxt[e - 1] = nxt.get(e - 1, 0.0) - e * c
        terms.append((n + 1, nxt))
    return terms


def _endpoint_coefficients(m: float, count: int) -> np.ndarray:
    """first `count` Taylor coefficients of (1 - u)^{-1} (-ln(1 - u) / u)^m"""
    # -ln(1 - u) / u = 1 + x,  x = u/2 + u²/3 + ...
    x = np.concatenate([[0.0], 1.0 / np.arange(2, count + 1)])
    series = np.zeros(count)
    power = np.array([1.0])
    for n in range(count):
        series += binom(m, n) * np.pad(power, (0, count - len(power)))
        power = P.polymul(power, x)[:count]
    return P.polymul(series, np.ones(count))[:count]


def _spike_moment_direct(B: float, order: int) -> Tuple[complex, float]:
    # one segment per half oscillation of exp(-i B e^{-s²}) down to phase 1, then the decaying tail
    count = int((B - 1.0) // np.pi)
    w = B - np.pi * np.arange(count + 1)
    if w[-1] > 1.0:
        w = np.append(w, 1.0)
    s_osc = np.sqrt(np.log(B / w))
    s_end = np.sqrt(np.log(B) + 40.0)
    edges = np.concatenate([s_osc, np.linspace(s_osc[-1], s_end, 9)[1:]])
    res = integrate(lambda s: 2.0 * s ** (2 * order) * expm1i(-B * np.exp(-s * s)), edges, atol=1e-12)
    # |exp(-i B e^{-s²}) - 1| <= B e^{-s²} past s_end
    tail = 2.0 * B * np.exp(-s_end * s_end) * s_end ** (2 * order)
    return complex(res.value), res.error + tail


def _spike_moment_asymptotic(B: float, order: int) -> Tuple[complex, float]:
    m = order - 0.5
    W = ASYMPTOTIC_WINDOW

    def h(w):
        return np.log(B / w) ** m / w

    head_edges = np.concatenate([[0.0], np.exp2(np.arange(-48, 1))])
    head = integrate(lambda w: expm1i(-w) * h(w), head_edges, atol=1e-13)
    body = integrate(lambda w: np.exp(-1j * w) * h(w), np.linspace(1.0, W, int(W)), atol=1e-12)

    # lower end of the tail [W, B]: integration by parts, the fourth term bounds the rest
    L = np.log(B / W)
    dh = [W ** -n * sum(c * L ** e for e, c in poly.items()) for n, poly in _log_power_derivatives(m, 3)]
    lower = np.exp(-1j * W) * sum(d / 1j ** (j + 1) for j, d in enumerate(dh[:3]))

    # upper end w = B: h(B - t) = Σ c_j B^{-ν_j} t^{ν_j - 1},  ν_j = m + 1 + j
    nu = m + 1.0 + np.arange(4)
    terms = _endpoint_coefficients(m, 4) * B ** -nu * gamma(nu) * np.exp(0.5j * np.pi * nu)
    upper = np.exp(-1j * B) * terms[:3].sum()

    value = -np.log(B) ** (m + 1) / (m + 1) + head.value + body.value + lower + upper
    return complex(value), head.error + body.error + abs(dh[3]) + abs(terms[3])


@cache
def spike_moment(peak_phase: float, order: int = 0) -> Tuple[complex, float]:
    """M(B) = ∫ s^{2 order} (exp(-i B e^{-s²}) - 1) ds over the real line, for B > 4

    Returns the value and an absolute error bound. Up to ASYMPTOTIC_SPIKE_PHASE the
    integral is done directly with one segment per half oscillation. Above, w = B e^{-s²}
    turns it into ∫_0^B (e^{-iw} - 1) ln(B/w)^{order - 1/2} / w dw: [0, 1] on geometric
    panels, [1, W] on unit panels and [W, B] by the expansions at both of its ends.
    """
    B = float(peak_phase)
    if not B > 4:
        raise InvalidParameterError(f"spike_moment needs B > 4, got {B}")
    if order < 0:
        raise InvalidParameterError(f"spike_moment order must be non-negative, got {order}")
    if B <= ASYMPTOTIC_SPIKE_PHASE:
        return _spike_moment_direct(B, order)
    return _spike_moment_asymptotic(B, order)


def local_spike_integral(peak_phase: float) -> complex:
    """K(B) = ∫ (exp(-i B e^{-s²}) - 1) ds over the real line, for B > 4"""
    return spike_moment(peak_phase, 0)[0]


def spike_abs_moment(peak_phase: float, dimension: int, power: int) -> float:
    """upper bound of ∫ |s|^power |exp(-i B e^{-|s|²}) - 1| d^dimension s

    Uses |exp(-i B e^{-r²}) - 1| <= min(2, |B| e^{-r²}). Only (dimension, power) of
    (1, 4) and (2, 2) are needed.
    """
    B = abs(float(peak_phase))
    a = np.sqrt(np.log(B / 2.0)) if B > 2 else 0.0
    ea = B * np.exp(-a * a)
    if (dimension, power) == (1, 4):
        return 2.0 * (0.4 * a ** 5 + ea * (a ** 3 / 2 + 0.75 * a) + B * 3 * np.sqrt(np.pi) / 8 * erfc(a))
    if (dimension, power) == (2, 2):
        return 2.0 * np.pi * (a ** 4 / 2 + ea * (a * a + 1) / 2)
    raise UnsupportedOperationError(f"no spike bound for dimension {dimension}, power {power}")


def transverse_spike_integral(peak_phase: float) -> complex:
    """K2(B) = ∫ d²s (exp(-i B e^{-|s|²}) - 1) = -π (Cin(B) + i Si(B))"""
    B = float(peak_phase)
    if B == 0:
        return 0j
    si, ci = sici(B)
    cin = np.euler_gamma + np.log(B) - ci
    return complex(-np.pi * (cin + 1j * si))


class OverlapEngine(abc.ABC):
    """evaluates the overlap for one pair of pulses and one phase field at any θ

    Subclasses provide the J table (_inner) and the outer geometry. Tables are
    cached per outer node layout.
    """

    def __init__(self, params: QuadratureParams = None, debug_logs: bool = False):
        self.params = params or QuadratureParams()
        self.debug_logs = debug_logs
        self.flags: Tuple[str, ...] = ()
        self.offset = 0.0
        self._tables = {}

    @property
    @abc.abstractmethod
    def nbar(self) -> float:
        """mean photon number of the coherent pulse"""

    @abc.abstractmethod
    def _inner(self, *y) -> Tuple[np.ndarray, float]:
        """J on the outer nodes y, with its error bound"""

    @abc.abstractmethod
    def _outer_integral(self, transform: Callable) -> Tuple[complex, float]:
        """∫ |f|² transform(J) over the photon coordinates, with its error bound"""

    def _table(self, *y):
        key = tuple(a.shape for a in y)
        if key not in self._tables:
            J, err = self._inner(*y)
            self._tables[key] = (J, err)
            if self.debug_logs:
                log_info(f"[INFO]: {type(self).__name__} J table {key}, inner error {err:.2e}")
        return self._tables[key]

    def _chunked(self, func, *rows):
        """applies func to ROW_CHUNK rows at a time, returns (values, max error)"""
        n = len(rows[0])
        out, err = [], 0.0
        for start in range(0, n, ROW_CHUNK):
            vals, e = func(*(r[start : start + ROW_CHUNK] for r in rows))
            out.append(vals)
            err = max(err, e)
        if not out:
            return np.zeros(0, dtype=complex), 0.0
        return np.concatenate(out), err

    def exponent_transform(self, theta: float) -> Callable:
        """J -> exp(E(θ)) with the sign guard on Re E"""
        th = theta - self.offset
        shift = self.nbar * expm1i(th)
        rot = np.exp(1j * th)
        guard = 1e-10 * max(1.0, self.nbar)

        def transform(J):
            E = shift + rot * J
            if E.size and np.max(E.real) > guard:
                raise InvariantViolationError(
                    f"Re of the overlap exponent is positive ({np.max(E.real):.3e})"
                )
            return np.exp(E)

        return transform

    def overlap(self, theta: float) -> OverlapResult:
        value, err = self._outer_integral(self.exponent_transform(theta))
        return OverlapResult(complex(value), float(err), self.flags)

    def compact_fidelity(self, theta: float) -> float:
        """(∫|f|² exp(Re E))², the fidelity with the sine part of the exponent dropped"""
        transform = self.exponent_transform(theta)
        value, _ = self._outer_integral(lambda J: np.abs(transform(J)))
        return float(value.real ** 2)

    def fidelity(self, theta: float) -> float:
        return self.overlap(theta).fidelity


class _LongitudinalEngine(OverlapEngine):
    """1-D outer integral over the photon coordinate"""

    def __init__(self, photon: PulseProfile, params: QuadratureParams = None, debug_logs: bool = False):
        super().__init__(params, debug_logs)
        if photon.dimension != 1:
            raise InvalidParameterError("longitudinal engines need 1-D profiles")
        self.photon = photon

    def _outer_edges(self):
        lo, hi = self.photon.support()
        return [lo, self.photon.center[0], hi]

    def _outer_integral(self, transform):
        inner_err = [0.0]

        def integrand(y):
            J, err = self._table(y)
            inner_err[0] = max(inner_err[0], err)
            return self.photon.density(y) * transform(J)

        res = integrate(integrand, self._outer_edges(), self.params)
        return complex(res.value), res.error + inner_err[0]


class CoherentPhotonEngine(_LongitudinalEngine):
    """nested quadrature of the overlap, x inner and y outer"""

    def __init__(
        self,
        alpha: PulseProfile,
        f: PulseProfile,
        field: PhaseField,
        params: QuadratureParams = None,
        debug_logs: bool = False,
    ):
        super().__init__(f, params, debug_logs)
        if alpha.dimension != 1:
            raise InvalidParameterError("longitudinal engines need 1-D profiles")
        if field.geometry != Geometry.LONGITUDINAL:
            raise InvalidParameterError("use TransverseEngine for the transverse geometry")
        if field.v == 0 and field.kernel.is_exact_contact:
            raise UnsupportedOperationError(
                "co-propagating exact contact: use copropagating_overlap or a regularized kernel"
            )
        self.alpha = alpha
        self.offset = field.offset
        self.field = field.with_offset(0.0)
        self._nbar = mean_photon_number(alpha)

        if field.v != 0:
            frac = pass_through_fraction(field, alpha, f)
            if frac < 1.0 - LOW_PASS_THROUGH:
                self.flags = (FLAG_LOW_PASS_THROUGH,)
                if self.debug_logs:
                    log_info(f"[WARN]: pass-through fraction {frac:.6f}")

    @property
    def nbar(self) -> float:
        return self._nbar

    def _inner(self, y):
        return self._chunked(self._inner_rows, y)

    def _inner_rows(self, y):
        lo, hi = self.alpha.support()
        offsets = np.asarray(x_breakpoints(self.field, 0.0))
        cols = [np.full(y.shape + (1,), lo), y[:, None] + offsets[None, :], np.full(y.shape + (1,), hi)]
        edges = np.sort(np.clip(np.concatenate(cols, axis=1), lo, hi), axis=1)

        def integrand(x):
            return self.alpha.density(x) * expm1i(-phi(self.field, x, y[:, None]))

        res = integrate(integrand, edges, self.params, atol=inner_tolerance(self._nbar))
        return res.value, res.error


class PhotonPhotonEngine(CoherentPhotonEngine):
    """bi-photon gate; overlap(θ) = e^{iθ} <Φ_in|Φ_out> so F does not depend on θ"""

    def __init__(
        self,
        f1: PulseProfile,
        f2: PulseProfile,
        field: PhaseField,
        params: QuadratureParams = None,
        debug_logs: bool = False,
    ):
        super().__init__(f1, f2, field, params, debug_logs)
        self._gate = None

    def gate_overlap(self) -> Tuple[complex, float]:
        """<Φ_in|Φ_out> and its error bound"""
        if self._gate is None:
            norm = self._nbar
            value, err = self._outer_integral(lambda J: norm + J)
            self._gate = (np.exp(-1j * self.offset) * value, err)
        return self._gate

    def overlap(self, theta: float) -> OverlapResult:
        value, err = self.gate_overlap()
        return OverlapResult(complex(np.exp(1j * theta) * value), float(err), self.flags)


class CopropagatingEngine(_LongitudinalEngine):
    """equal velocities, φ(x, y) = χt g_ε(x - y) with a narrow gaussian g_ε

    J is computed in the spike coordinate s = (x - y) / (2 sqrt(ε)):
        J(y) = 2 sqrt(ε) ∫ |α(y + 2 sqrt(ε) s)|² (exp(-i B e^{-s²}) - 1) ds,  B = χt / (2 sqrt(πε))
    Above `frozen_spike_phase` a gaussian envelope is expanded around s = 0,
        J ≈ 2 sqrt(ε) (ρ M0(B) + 2ε ρ'' M1(B)),   ρ = |α(y)|²,  M_k = spike_moment(B, k)
    as long as the fourth-order remainder stays under the inner tolerance. Otherwise the
    spike is integrated directly for every row.
    """

    def __init__(
        self,
        alpha: PulseProfile,
        f: PulseProfile,
        chi_t: float,
        eps: float,
        params: QuadratureParams = None,
        debug_logs: bool = False,
        frozen_spike_phase: float = FROZEN_SPIKE_PHASE,
    ):
        super().__init__(f, params, debug_logs)
        if not eps > 0:
            raise InvalidParameterError(f"eps must be positive, got {eps}")
        if not np.isfinite(chi_t):
            raise InvalidParameterError(f"chi_t must be finite, got {chi_t}")
        if alpha.dimension != 1:
            raise InvalidParameterError("longitudinal engines need 1-D profiles")
        self.alpha = alpha
        self.chi_t = chi_t
        self.eps = eps
        self.width = 2.0 * np.sqrt(eps)
        self.peak_phase = chi_t / (2.0 * np.sqrt(np.pi * eps))
        self._nbar = mean_photon_number(alpha)
        self.frozen = (
            abs(self.peak_phase) > frozen_spike_phase
            and self.freezing_bound() <= inner_tolerance(self._nbar)
        )
        if self.frozen and debug_logs:
            log_info(f"[INFO]: spike frozen at B = {self.peak_phase:.6g}, bound {self.freezing_bound():.2e}")

    @property
    def nbar(self) -> float:
        return self._nbar

    def freezing_bound(self) -> float:
        """bound of |J - frozen J| from the fourth-order Taylor remainder of |α|²

        inf for envelopes without closed-form derivatives.
        """
        if self.alpha.kind != ProfileKind.GAUSSIAN or abs(self.peak_phase) <= 4:
            return np.inf
        sigma = self.alpha.sigma[0]
        # max |d⁴/dy⁴ |α|²| of a gaussian is 3 n̄ / (sqrt(2π) σ⁵), at the center
        sup4 = 3.0 * self._nbar / (np.sqrt(2 * np.pi) * sigma ** 5)
        return self.width ** 5 / 24.0 * sup4 * spike_abs_moment(self.peak_phase, 1, 4)

    def _inner(self, y):
        if self.peak_phase == 0:
            return np.zeros(y.shape, dtype=complex), 0.0
        if self.frozen:
            return self._frozen_rows(y)
        return self._chunked(self._inner_rows, y)

    def _frozen_rows(self, y):
        (M0, err0), (M1, err1) = spike_moment(abs(self.peak_phase), 0), spike_moment(abs(self.peak_phase), 1)
        if self.peak_phase < 0:
            M0, M1 = np.conj(M0), np.conj(M1)
        sigma, z0 = self.alpha.sigma[0], self.alpha.center[0]
        rho = self.alpha.density(y)
        u = (y - z0) / sigma
        curvature = rho * (u * u - 1) / sigma ** 2
        half_w2 = 0.5 * self.width ** 2
        J = self.width * (rho * M0 + half_w2 * curvature * M1)
        moment_err = self.width * (np.max(rho) * err0 + half_w2 * np.max(np.abs(curvature)) * err1)
        return J, float(moment_err) + self.freezing_bound()

    def _inner_rows(self, y):
        edges = np.linspace(-SPIKE_WINDOW, SPIKE_WINDOW, 25)
        edges = np.broadcast_to(edges, y.shape + edges.shape)

        def integrand(s):
            dens = self.alpha.density(y[:, None] + self.width * s)
            return self.width * dens * expm1i(-self.peak_phase * np.exp(-s * s))

        res = integrate(integrand, edges, self.params, atol=inner_tolerance(self._nbar))
        return res.value, res.error


class TransverseEngine(OverlapEngine):
    """pass-through with φ(x_T, y_T) = A g(|x_T - y_T|), g the 2-D regularized delta

    The coherent envelope must be an isotropic 2-D gaussian; then the angular part of
    the inner integral is a Bessel function and J only depends on r = |y - center(α)|:

        J(r) = (n̄/σ²) 4ε ∫_0^∞ s exp(-(r - 2√ε s)²/(2σ²)) ive(0, 2√ε s r/σ²) (e^{-iB e^{-s²}} - 1) ds

    with B = A / (4πε). Above FROZEN_SPIKE_PHASE the envelope is frozen,
    J = |α(y)|² 4ε K2(B), when the second-order remainder stays under the inner tolerance.
    """

    def __init__(
        self,
        alpha: PulseProfile,
        f: PulseProfile,
        field: PhaseField,
        params: QuadratureParams = None,
        debug_logs: bool = False,
    ):
        super().__init__(params, debug_logs)
        if field.geometry != Geometry.TRANSVERSE:
            raise InvalidParameterError("TransverseEngine needs the transverse geometry")
        if alpha.dimension != 2 or f.dimension != 2:
            raise InvalidParameterError("transverse overlaps need 2-D profiles")
        if alpha.kind != ProfileKind.GAUSSIAN or alpha.sigma[0] != alpha.sigma[1]:
            raise InvalidParameterError("transverse coherent envelope must be an isotropic gaussian")
        self.alpha = alpha
        self.photon = f
        self.offset = field.offset
        self.eps = field.kernel.eps
        self.peak_phase = field.kernel.chi / abs(field.v) / (4.0 * np.pi * self.eps)
        self._nbar = mean_photon_number(alpha)
        self.frozen = (
            abs(self.peak_phase) > FROZEN_SPIKE_PHASE
            and self.freezing_bound() <= inner_tolerance(self._nbar)
        )

    @property
    def nbar(self) -> float:
        return self._nbar

    def freezing_bound(self) -> float:
        """bound of |J - frozen J|; the linear Taylor term cancels against the radial spike"""
        if self.peak_phase == 0:
            return 0.0
        w2 = 4.0 * self.eps
        # largest Hessian eigenvalue of |α|², at the center
        sup2 = self._nbar / (2 * np.pi * self.alpha.sigma[0] ** 4)
        return w2 * w2 / 2.0 * sup2 * spike_abs_moment(self.peak_phase, 2, 2)

    def _radius(self, y1, y2):
        return np.hypot(y1 - self.alpha.center[0], y2 - self.alpha.center[1])

    def _inner(self, y1, y2):
        if self.peak_phase == 0:
            return np.zeros(y2.shape, dtype=complex), 0.0
        if self.frozen:
            K2 = transverse_spike_integral(abs(self.peak_phase))
            if self.peak_phase < 0:
                K2 = np.conj(K2)
            return 4.0 * self.eps * self.alpha.density(y1, y2) * K2, self.freezing_bound()

        r = np.round(self._radius(np.broadcast_to(y1, y2.shape), y2).ravel(), 13)
        radii, inverse = np.unique(r, return_inverse=True)
        J, err = self._chunked(self._radial_rows, radii)
        return J[inverse].reshape(y2.shape), err

    def _radial_rows(self, r):
        s2 = self.alpha.sigma[0] ** 2
        w = 2.0 * np.sqrt(self.eps)
        pref = self._nbar / s2 * w * w
        edges = np.broadcast_to(np.linspace(0.0, SPIKE_WINDOW, 7), r.shape + (7,))
        rr = r[:, None]

        def integrand(s):
            envelope = np.exp(-((rr - w * s) ** 2) / (2 * s2)) * ive(0, w * s * rr / s2)
            return pref * s * envelope * expm1i(-self.peak_phase * np.exp(-s * s))

        res = integrate(integrand, edges, self.params, atol=inner_tolerance(self._nbar))
        return res.value, res.error

    def _outer_integral(self, transform):
        f = self.photon
        (a_lo, a_hi), (b_lo, b_hi) = f.support(0), f.support(1)
        edges_a = [a_lo, f.center[0], a_hi]
        edges_b = [b_lo, f.center[1], b_hi]
        err = [0.0]

        def row(y1):
            def cell(y2):
                Y1 = np.broadcast_to(y1[:, None], y2.shape)
                J, e = self._table(y1[:, None], y2)
                err[0] = max(err[0], e)
                return f.density(Y1, y2) * transform(J)

            res = integrate(cell, np.broadcast_to(edges_b, y1.shape + (3,)), self.params)
            err[0] = max(err[0], res.error)
            return res.value

        res = integrate(row, edges_a, self.params)
        return complex(res.value), res.error + err[0]


def coherent_photon_engine(
    alpha: PulseProfile, f: PulseProfile, field: PhaseField, params: QuadratureParams = None, debug_logs: bool = False
) -> OverlapEngine:
    if field.geometry == Geometry.TRANSVERSE:
        return TransverseEngine(alpha, f, field, params, debug_logs)
    return CoherentPhotonEngine(alpha, f, field, params, debug_logs)


def coherent_photon_overlap(alpha: PulseProfile, f: PulseProfile, field: PhaseField, theta: float) -> OverlapResult:
    return coherent_photon_engine(alpha, f, field).overlap(theta)


def copropagating_overlap(alpha: PulseProfile, f: PulseProfile, chi_t: float, eps: float, theta: float) -> OverlapResult:
    return CopropagatingEngine(alpha, f, chi_t, eps).overlap(theta)


def photon_photon_overlap(f1: PulseProfile, f2: PulseProfile, field: PhaseField) -> OverlapResult:
    """<Φ_in|Φ_out>; F = |value|² and θ_c = -arg(value)"""
    return PhotonPhotonEngine(f1, f2, field).overlap(0.0)


def fidelity_curve(engine: OverlapEngine, theta_grid) -> List[Tuple[float, OverlapResult]]:
    """engine.overlap on every θ of the grid, in grid order

    A point that fails is returned with a nan value and the "failed" flag; the
    remaining points are still evaluated.
    """
    theta_grid = [float(t) for t in theta_grid]
    if not theta_grid:
        raise InvalidParameterError("theta grid is empty")
    curve = []
    for theta in theta_grid:
        try:
            res = engine.overlap(theta)
        except XpmError as e:
            log_info(f"[WARN]: overlap failed at theta={theta!r}: {e}")
            res = OverlapResult(complex(np.nan, np.nan), float("nan"), engine.flags + (FLAG_FAILED,))
        curve.append((theta, res))
    return curve


################################### TESTS ######################################


def _pair(nbar=1.0, separation=5.0):
    alpha = coherent_profile(gaussian_profile(0.0, 1.0), nbar)
    return alpha, gaussian_profile(separation, 1.0)


def _counter_field(chi_over_v=0.01, vt=10.0):
    return PhaseField(contact_kernel(chi_over_v), v1=1.0, v2=0.0, t=vt)


def _constant_field(phi0):
    # a wide top hat with v = 0 makes φ exactly constant on the supports
    return PhaseField(top_hat_kernel(200.0 * phi0, 100.0), v1=1.0, v2=1.0, t=1.0)


def test_no_interaction_identity():
    for nbar in (0.0, 1.0, 1000.0):
        alpha, f = _pair(nbar)
        res = coherent_photon_overlap(alpha, f, _counter_field(chi_over_v=0.0), 0.0)
        assert abs(res.value - 1.0) < 1e-9
        assert res.fidelity <= 1.0 + res.error_estimate


def test_constant_phase_closed_form():
    phi0 = 0.3
    thetas = np.linspace(-np.pi, np.pi, 64, endpoint=False)
    for nbar in (1.0, 100.0):
        alpha, f = _pair(nbar, separation=1.0)
        engine = CoherentPhotonEngine(alpha, f, _constant_field(phi0))
        for theta in thetas:
            expected = np.exp(nbar * (np.exp(1j * (theta - phi0)) - 1))
            res = engine.overlap(theta)
            assert abs(res.value - expected) < 1e-9
            assert abs(res.value) <= 1 + res.error_estimate
        np.testing.assert_allclose(engine.overlap(phi0).value, 1.0, atol=1e-9)
        np.testing.assert_allclose(
            engine.fidelity(0.1), single_mode_fidelity(nbar, 0.1, phi0), rtol=1e-9
        )


def test_compact_fidelity_matches_constant_plateau():
    alpha, f = _pair(3.0, separation=1.0)
    engine = CoherentPhotonEngine(alpha, f, _constant_field(0.2))
    for theta in (-0.5, 0.0, 0.1, 0.7):
        np.testing.assert_allclose(engine.compact_fidelity(theta), engine.fidelity(theta), rtol=1e-10)


def test_fig1_overlap():
    alpha, f = _pair(1000.0, separation=5.0)
    engine = CoherentPhotonEngine(alpha, f, _counter_field())
    assert FLAG_LOW_PASS_THROUGH not in engine.flags
    peak = engine.overlap(0.01)
    assert peak.fidelity >= 0.998
    assert peak.fidelity > engine.fidelity(0.0)
    assert peak.fidelity > engine.fidelity(0.02)


def test_offset_field_matches_discrete_modes():
    from utils.test_utils import oracle_agreement_test
    from xpm.oracle import DiscreteModeOracle

    alpha, f = _pair(2.0, separation=3.0)
    field = PhaseField(gaussian_kernel(0.05, 0.1), v1=1.0, v2=0.0, t=6.0).with_offset(0.3)
    engine = CoherentPhotonEngine(alpha, f, field)
    oracle = DiscreteModeOracle(alpha, f, field, 4096)
    thetas = np.linspace(0.2, 0.45, 11)
    oracle_agreement_test(lambda t: engine.overlap(t).value, oracle.overlap, thetas, 1e-6)


def test_offset_moves_conditional_phase():
    from utils.misc_utils import wrap_phase
    from xpm.condphase import conditional_phase

    alpha, f = _pair(2.0, separation=3.0)
    field = PhaseField(gaussian_kernel(0.05, 0.1), v1=1.0, v2=0.0, t=6.0)
    plain = conditional_phase(CoherentPhotonEngine(alpha, f, field).fidelity)
    shifted = conditional_phase(CoherentPhotonEngine(alpha, f, field.with_offset(0.3)).fidelity)
    assert abs(wrap_phase(shifted.theta_c - plain.theta_c - 0.3)) <= 2e-6
    assert abs(shifted.f_max - plain.f_max) < 1e-9


def test_fidelity_curve_periodic_and_ordered():
    alpha, f = _pair(10.0, separation=3.0)
    engine = CoherentPhotonEngine(alpha, f, _counter_field(chi_over_v=0.05, vt=6.0))
    thetas = [0.3, -0.2, 0.05]
    curve = fidelity_curve(engine, thetas)
    assert [t for t, _ in curve] == thetas
    wrapped = fidelity_curve(engine, [t + 2 * np.pi for t in thetas])
    for (_, a), (_, b) in zip(curve, wrapped):
        assert abs(a.value - b.value) < 1e-12

    trivial = fidelity_curve(CoherentPhotonEngine(alpha, f, _counter_field(chi_over_v=0.0)), [0.0])
    assert trivial[0][0] == 0.0
    assert abs(trivial[0][1].value - 1.0) < 1e-12


def test_fidelity_curve_flags_failed_points():
    class _Flaky(CoherentPhotonEngine):
        def overlap(self, theta):
            if theta > 0:
                raise QuadratureError("forced", partial=0.0, residual=1.0)
            return super().overlap(theta)

    alpha, f = _pair(1.0)
    curve = fidelity_curve(_Flaky(alpha, f, _counter_field()), [-0.1, 0.1, 0.0])
    assert [r.failed for _, r in curve] == [False, True, False]
    assert np.isnan(curve[1][1].value.real)


def test_photon_photon_constant_phase():
    f1, f2 = gaussian_profile(0.0, 1.0), gaussian_profile(1.0, 1.0)
    assert abs(photon_photon_overlap(f1, f2, PhaseField(contact_kernel(0.0), t=1.0)).value - 1.0) < 1e-12

    res = photon_photon_overlap(f1, f2, _constant_field(0.4))
    np.testing.assert_allclose(res.value, np.exp(-0.4j), atol=1e-12)
    np.testing.assert_allclose(res.fidelity, 1.0, atol=1e-12)


def test_photon_photon_plateau():
    f1, f2 = gaussian_profile(0.0, 1.0), gaussian_profile(10.0, 1.0)
    engine = PhotonPhotonEngine(f1, f2, _counter_field(vt=20.0))
    res = engine.overlap(0.0)
    assert abs(res.fidelity - 1.0) < 1e-9
    assert abs(res.phase - 0.01) < 1e-9
    # F does not depend on θ
    np.testing.assert_allclose(engine.fidelity(0.7), res.fidelity, rtol=1e-14)


def test_photon_photon_brute_force():
    from utils.test_utils import midpoint_photon_photon_overlap

    f1, f2 = gaussian_profile(0.0, 1.0), gaussian_profile(0.0, 1.0)
    field = PhaseField(gaussian_kernel(0.01, 0.01), v1=1.0, v2=1.0, t=1.0)
    res = photon_photon_overlap(f1, f2, field)
    assert res.fidelity < 1.0
    brute = midpoint_photon_photon_overlap(f1, f2, field, bins=256)
    assert abs(res.value - brute) < 1e-6


def test_local_spike_integral():
    for B in (300.0, 1000.0):
        direct = integrate(
            lambda s: expm1i(-B * np.exp(-s * s)), np.linspace(-SPIKE_WINDOW, SPIKE_WINDOW, 481), atol=1e-12
        ).value
        np.testing.assert_allclose(local_spike_integral(B), direct, rtol=1e-10)
        assert spike_moment(B, 0)[1] < 1e-11


def test_spike_moment_expansions():
    B = 3e4
    for order in (0, 1):
        direct, direct_err = _spike_moment_direct(B, order)
        expanded, expanded_err = _spike_moment_asymptotic(B, order)
        assert abs(expanded - direct) <= 1e-10 * abs(direct)
        assert abs(expanded - direct) <= direct_err + expanded_err + 1e-12
        assert expanded_err < 1e-11

    # second moment against the s-quadrature
    direct = integrate(
        lambda s: s * s * expm1i(-300.0 * np.exp(-s * s)), np.linspace(-SPIKE_WINDOW, SPIKE_WINDOW, 481), atol=1e-12
    ).value
    np.testing.assert_allclose(spike_moment(300.0, 1)[0], direct, rtol=1e-10)

    # the bounds used for frozen envelopes dominate the signed moments
    fourth = _spike_moment_direct(300.0, 2)[0]
    assert abs(fourth) <= spike_abs_moment(300.0, 1, 4)
    planar = integrate(
        lambda s: 2 * np.pi * s ** 3 * expm1i(-300.0 * np.exp(-s * s)), np.linspace(0.0, SPIKE_WINDOW, 241), atol=1e-12
    ).value
    assert abs(planar) <= spike_abs_moment(300.0, 2, 2)


def test_endpoint_coefficients():
    np.testing.assert_allclose(_endpoint_coefficients(-0.5, 3), [1.0, 0.75, 65.0 / 96.0], rtol=1e-14)
    np.testing.assert_allclose(_endpoint_coefficients(0.5, 2), [1.0, 1.25], rtol=1e-14)


def test_frozen_spike_matches_direct():
    alpha, f = _pair(1000.0, separation=0.0)
    eps = (1.0 / (2 * np.sqrt(np.pi) * 300.0)) ** 2
    frozen = CopropagatingEngine(alpha, f, 1.0, eps)
    direct = CopropagatingEngine(alpha, f, 1.0, eps, frozen_spike_phase=np.inf)
    np.testing.assert_allclose(frozen.peak_phase, 300.0, rtol=1e-12)
    assert frozen.frozen and not direct.frozen
    assert 0 < frozen.freezing_bound() <= inner_tolerance(1000.0)
    for theta in (0.0, 0.5):
        a, b = frozen.overlap(theta), direct.overlap(theta)
        assert 0 < a.error_estimate < 1e-9
        assert abs(a.value - b.value) <= a.error_estimate + b.error_estimate
        assert abs(a.value - b.value) < 1e-9


def test_wide_spike_is_not_frozen():
    from core.pulse_profile import tabulated_profile

    # a spike as wide as the envelope must not be frozen, whatever its peak phase
    alpha, f = _pair(1.0, separation=0.0)
    engine = CopropagatingEngine(alpha, f, 2 * np.sqrt(np.pi) * 300.0 * 0.05, 0.0025)
    np.testing.assert_allclose(engine.peak_phase, 300.0, rtol=1e-12)
    assert engine.freezing_bound() > inner_tolerance(1.0)
    assert not engine.frozen
    samples = np.exp(-np.linspace(-8.0, 8.0, 161) ** 2 / 4)
    tabulated = CopropagatingEngine(tabulated_profile(samples, -8.0, 0.1), f, 0.01, 1e-20)
    assert tabulated.freezing_bound() == np.inf
    assert not tabulated.frozen


def test_transverse_spike_integral():
    B = 300.0
    direct = integrate(
        lambda s: 2 * np.pi * s * expm1i(-B * np.exp(-s * s)), np.linspace(0.0, SPIKE_WINDOW, 241), atol=1e-12
    ).value
    np.testing.assert_allclose(transverse_spike_integral(B), direct, rtol=1e-9)


def test_copropagating_matches_generic():
    alpha, f = _pair(1.0, separation=0.5)
    chi_t, eps = 0.8, 0.25
    generic = CoherentPhotonEngine(alpha, f, PhaseField(gaussian_kernel(chi_t, eps), v1=1.0, v2=1.0, t=1.0))
    spike = CopropagatingEngine(alpha, f, chi_t, eps)
    assert not spike.frozen
    for theta in (-0.3, 0.0, 0.2):
        assert abs(spike.overlap(theta).value - generic.overlap(theta).value) < 1e-8


def test_copropagating_no_interaction():
    alpha, f = _pair(5.0, separation=0.0)
    for theta in (0.0, 0.4):
        res = copropagating_overlap(alpha, f, 0.0, 1e-20, theta)
        np.testing.assert_allclose(res.value, np.exp(5.0 * (np.exp(1j * theta) - 1)), atol=1e-12)


def test_fig2_overlap():
    alpha, f = _pair(1000.0, separation=0.0)
    engine = CopropagatingEngine(alpha, f, 0.01, 1e-20)
    assert engine.frozen
    f0 = engine.fidelity(0.0)
    assert 1 - 1e-5 <= f0 <= 1.0
    assert f0 > engine.fidelity(1e-3) and f0 > engine.fidelity(-1e-3)


def test_transverse_engine_limits():
    import pytest

    alpha = coherent_profile(gaussian_profile((0.0, 0.0), 0.2, dimension=2), 1.0)
    f = gaussian_profile((0.0, 0.0), 0.2, dimension=2)
    from core.interaction_kernel import transverse_contact_kernel

    none = PhaseField(transverse_contact_kernel(0.0, 0.004), t=1.0, geometry=Geometry.TRANSVERSE)
    assert abs(TransverseEngine(alpha, f, none).overlap(0.0).value - 1.0) < 1e-9

    weak = PhaseField(transverse_contact_kernel(0.01, 0.004), t=1.0, geometry=Geometry.TRANSVERSE)
    res = coherent_photon_overlap(alpha, f, weak, 0.0)
    assert 0.99 < res.fidelity < 1.0
    assert abs(res.value) <= 1 + res.error_estimate

    with pytest.raises(InvalidParameterError):
        TransverseEngine(coherent_profile(gaussian_profile((0.0, 0.0), (0.2, 0.3), 2), 1.0), f, weak)
