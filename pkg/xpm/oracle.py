"""Brute-force references for the overlap engines

Both oracles discretize the pulses on one uniform midpoint grid covering the union
of the supports and share no quadrature code with xpm/overlap.py.

Discrete modes: bin i carries the single-mode coherent amplitude β_i = α(z_i) sqrt(dz)
and the photon sits in bin j with probability w_j = |f(z_j)|² dz. Single-mode
coherent-state algebra then gives the overlap exactly at finite M:

    value = Σ_j w_j exp(Σ_i |β_i|² (e^{i(θ - φ_ij)} - 1))

Truncated series: the photon-number expansion of exp(I) cut after N terms,

    value_N = e^{-n̄} Σ_j w_j Σ_{n<=N} I_j^n / n!,   I_j = Σ_i |β_i|² e^{i(θ - φ_ij)}

whose tail is bounded by n̄^(N+1)/(N+1)!.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import gammaln

from core.errors import OracleUsageError
from core.interaction_kernel import KernelKind, contact_kernel, gaussian_kernel
from core.phase_field import Geometry, PhaseField, boundary_degenerate, phi
from core.pulse_profile import PulseProfile, coherent_profile, gaussian_profile, mean_photon_number
from utils.misc_utils import expm1i

# the series is only trusted up to this mean photon number
SERIES_MAX_NBAR = 30.0

# tail bounds above this raise the "tail_bound_exceeded" flag
SERIES_TAIL_TOL = 1e-8

FLAG_TAIL = "tail_bound_exceeded"
FLAG_BOUNDARY_DEGENERATE = "boundary_degenerate"

# columns of the phase matrix held in memory at once
COLUMN_CHUNK = 256


@dataclass(frozen=True, eq=False)
class DiscreteModeGrid:
    bin_count: int
    bin_width: float
    centers: np.ndarray
    # coherent amplitude per bin
    beta: np.ndarray
    # photon probability per bin
    weights: np.ndarray

    @classmethod
    def from_profiles(cls, alpha: PulseProfile, f: PulseProfile, bin_count: int = 4096):
        if alpha.dimension != 1 or f.dimension != 1:
            raise OracleUsageError("discrete-mode oracles are 1-D only")
        if int(bin_count) != bin_count or bin_count < 2:
            raise OracleUsageError(f"bin_count must be an integer >= 2, got {bin_count}")
        bin_count = int(bin_count)
        (a_lo, a_hi), (f_lo, f_hi) = alpha.support(), f.support()
        lo, hi = min(a_lo, f_lo), max(a_hi, f_hi)
        dz = (hi - lo) / bin_count
        centers = lo + dz * (np.arange(bin_count) + 0.5)
        beta = alpha.evaluate(centers) * np.sqrt(dz)
        weights = f.density(centers) * dz
        return cls(bin_count, dz, centers, np.asarray(beta, dtype=complex), weights)

    @property
    def nbar(self) -> float:
        return float(np.sum(np.abs(self.beta) ** 2))


@dataclass(frozen=True)
class SeriesOverlap:
    value: complex
    tail_bound: float
    flags: Tuple[str, ...] = ()


def build_phase_matrix(grid: DiscreteModeGrid, field: PhaseField) -> np.ndarray:
    """φ_ij = φ(z_i, z_j), i the coherent bin and j the photon bin"""
    if field.geometry != Geometry.LONGITUDINAL:
        raise OracleUsageError("discrete-mode oracles are 1-D only")
    return np.asarray(phi(field, grid.centers[:, None], grid.centers[None, :]), dtype=float)


def _exponent(nbar, S, theta):
    return nbar * expm1i(theta) + np.exp(1j * theta) * S


def discrete_mode_overlap(grid: DiscreteModeGrid, phi_matrix: np.ndarray, theta: float) -> complex:
    """exact overlap of the discretized states for the given M x M phase matrix"""
    phi_matrix = np.asarray(phi_matrix, dtype=float)
    M = grid.bin_count
    if phi_matrix.shape != (M, M):
        raise OracleUsageError(f"phase matrix must be {M}x{M}, got {phi_matrix.shape}")
    occ = np.abs(grid.beta) ** 2
    S = np.concatenate(
        [occ @ expm1i(-phi_matrix[:, j : j + COLUMN_CHUNK]) for j in range(0, M, COLUMN_CHUNK)]
    )
    return complex(np.sum(grid.weights * np.exp(_exponent(grid.nbar, S, theta))))


def series_tail_bound(nbar: float, N: int) -> float:
    """n̄^(N+1) / (N+1)!"""
    if nbar == 0:
        return 0.0
    return float(np.exp((N + 1) * np.log(nbar) - gammaln(N + 2)))


class DiscreteModeOracle:
    """both oracles for one (α, f, field) triple

    The θ-independent part S_j = Σ_i |β_i|² (e^{-iφ_ij} - 1) is built column by column
    on first use, so the M x M matrix never has to be held at once.
    """

    def __init__(self, alpha: PulseProfile, f: PulseProfile, field: PhaseField, bin_count: int = 4096):
        if field.geometry != Geometry.LONGITUDINAL:
            raise OracleUsageError("discrete-mode oracles are 1-D only")
        self.grid = DiscreteModeGrid.from_profiles(alpha, f, bin_count)
        self.field = field
        k = field.kernel
        if field.v == 0 and k.kind == KernelKind.GAUSSIAN and np.sqrt(2 * k.eps) < 2 * self.grid.bin_width:
            raise OracleUsageError(
                f"kernel width {np.sqrt(2 * k.eps):.2e} is not resolved by bins of {self.grid.bin_width:.2e}"
            )
        self.nbar_profile = mean_photon_number(alpha)
        self._S = None
        self.boundary_degenerate = False

    @property
    def S(self) -> np.ndarray:
        if self._S is None:
            z = self.grid.centers
            occ = np.abs(self.grid.beta) ** 2
            cols = []
            for j in range(0, self.grid.bin_count, COLUMN_CHUNK):
                zj = z[None, j : j + COLUMN_CHUNK]
                cols.append(occ @ expm1i(-phi(self.field, z[:, None], zj)))
                mask = boundary_degenerate(self.field, z[:, None], zj)
                if np.any(mask & (occ[:, None] > 0) & (self.grid.weights[None, j : j + COLUMN_CHUNK] > 0)):
                    self.boundary_degenerate = True
            self._S = np.concatenate(cols)
        return self._S

    @property
    def flags(self) -> Tuple[str, ...]:
        _ = self.S
        return (FLAG_BOUNDARY_DEGENERATE,) if self.boundary_degenerate else ()

    def overlap(self, theta: float) -> complex:
        E = _exponent(self.grid.nbar, self.S, theta)
        return complex(np.sum(self.grid.weights * np.exp(E)))

    def series_overlap(self, theta: float, N: int) -> SeriesOverlap:
        if int(N) != N or N < 0:
            raise OracleUsageError(f"series order must be a non-negative integer, got {N}")
        if self.nbar_profile > SERIES_MAX_NBAR:
            raise OracleUsageError(
                f"series oracle supports nbar <= {SERIES_MAX_NBAR:g}, got {self.nbar_profile:g}"
            )
        nbar = self.grid.nbar
        I = np.exp(1j * theta) * (nbar + self.S)
        term = np.ones_like(I)
        total = np.ones_like(I)
        for n in range(1, int(N) + 1):
            term = term * I / n
            total = total + term
        value = np.exp(-nbar) * np.sum(self.grid.weights * total)

        tail = series_tail_bound(nbar, int(N))
        flags = self.flags + ((FLAG_TAIL,) if tail > SERIES_TAIL_TOL else ())
        return SeriesOverlap(complex(value), tail, flags)


def truncated_series_overlap(
    alpha: PulseProfile, f: PulseProfile, field: PhaseField, theta: float, N: int, bin_count: int = 4096
) -> SeriesOverlap:
    return DiscreteModeOracle(alpha, f, field, bin_count).series_overlap(theta, N)


################################### TESTS ######################################


def _pair(nbar, separation=5.0):
    return coherent_profile(gaussian_profile(0.0, 1.0), nbar), gaussian_profile(separation, 1.0)


def _smooth_field():
    return PhaseField(gaussian_kernel(0.05, 0.01), v1=1.0, v2=0.0, t=10.0)


def test_grid_invariants():
    alpha, f = _pair(3.0)
    grid = DiscreteModeGrid.from_profiles(alpha, f, 4096)
    np.testing.assert_allclose(grid.nbar, 3.0, rtol=1e-6)
    np.testing.assert_allclose(np.sum(grid.weights), 1.0, rtol=1e-6)
    assert grid.centers[0] > -8.0 and grid.centers[-1] < 13.0


def test_discrete_trivial_phases():
    alpha, f = _pair(2.0, separation=1.0)
    grid = DiscreteModeGrid.from_profiles(alpha, f, 512)
    zeros = np.zeros((512, 512))
    np.testing.assert_allclose(discrete_mode_overlap(grid, zeros, 0.0), 1.0, atol=1e-13)
    np.testing.assert_allclose(discrete_mode_overlap(grid, zeros + 0.4, 0.4), 1.0, atol=1e-13)

    # the explicit matrix and the column-wise oracle agree
    field = _smooth_field()
    oracle = DiscreteModeOracle(alpha, f, field, 512)
    full = discrete_mode_overlap(grid, build_phase_matrix(grid, field), 0.03)
    np.testing.assert_allclose(oracle.overlap(0.03), full, rtol=1e-13)


def test_discrete_matches_engine_fig1_geometry():
    from core.interaction_kernel import contact_kernel as _contact
    from utils.test_utils import oracle_agreement_test
    from xpm.overlap import CoherentPhotonEngine

    alpha, f = _pair(2.0)
    field = PhaseField(_contact(0.01), v1=1.0, v2=0.0, t=10.0)
    engine = CoherentPhotonEngine(alpha, f, field)
    oracle = DiscreteModeOracle(alpha, f, field, 4096)
    assert oracle.flags == (FLAG_BOUNDARY_DEGENERATE,)
    thetas = np.linspace(-0.05, 0.05, 33)
    oracle_agreement_test(lambda t: engine.overlap(t).value, oracle.overlap, thetas, 1e-6)


def test_grid_refinement():
    from xpm.overlap import CoherentPhotonEngine

    alpha, f = _pair(2.0)
    field = _smooth_field()
    exact = CoherentPhotonEngine(alpha, f, field).overlap(0.02).value
    errors = [abs(DiscreteModeOracle(alpha, f, field, M).overlap(0.02) - exact) for M in (256, 1024, 4096)]
    assert errors[1] <= errors[0] + 1e-9
    assert errors[2] <= errors[1] + 1e-9


def test_series_matches_engine():
    from utils.test_utils import oracle_agreement_test
    from xpm.overlap import CoherentPhotonEngine

    thetas = np.linspace(-0.05, 0.1, 33)
    for nbar in (1.0, 5.0):
        alpha, f = _pair(nbar)
        field = _smooth_field()
        engine = CoherentPhotonEngine(alpha, f, field)
        oracle = DiscreteModeOracle(alpha, f, field, 4096)
        assert series_tail_bound(nbar, 40) < 1e-20
        oracle_agreement_test(
            lambda t: engine.overlap(t).value,
            lambda t: oracle.series_overlap(t, 40).value,
            thetas,
            1e-10,
            relative=True,
        )


def test_series_small_orders():
    alpha, f = _pair(0.0)
    res = truncated_series_overlap(alpha, f, _smooth_field(), 0.3, 3)
    np.testing.assert_allclose(res.value, 1.0, atol=1e-12)
    assert res.tail_bound == 0.0

    alpha, f = _pair(3.0)
    oracle = DiscreteModeOracle(alpha, f, _smooth_field(), 1024)
    theta = 0.05
    nbar = oracle.grid.nbar
    I = np.exp(1j * theta) * (nbar + oracle.S)
    one_photon = np.exp(-nbar) * (np.sum(oracle.grid.weights) + np.sum(oracle.grid.weights * I))
    np.testing.assert_allclose(oracle.series_overlap(theta, 1).value, one_photon, rtol=1e-13)

    for N in (5, 10, 20):
        a = oracle.series_overlap(theta, N)
        b = oracle.series_overlap(theta, N + 5)
        assert abs(a.value - b.value) <= a.tail_bound
    assert FLAG_TAIL in oracle.series_overlap(theta, 10).flags
    assert FLAG_TAIL not in oracle.series_overlap(theta, 40).flags


def test_series_usage_errors():
    import pytest

    alpha, f = _pair(1000.0)
    with pytest.raises(OracleUsageError):
        truncated_series_overlap(alpha, f, _smooth_field(), 0.0, 40, bin_count=256)

    narrow = PhaseField(gaussian_kernel(0.01, 1e-20), v1=1.0, v2=1.0, t=1.0)
    with pytest.raises(OracleUsageError):
        DiscreteModeOracle(*_pair(1.0, 0.0), narrow, 4096)


def test_boundary_half_count_on_shared_grid():
    # with one grid for both pulses the contact delta sits on the diagonal z_i = z_j
    alpha, f = _pair(1.0, separation=0.0)
    oracle = DiscreteModeOracle(alpha, f, PhaseField(contact_kernel(0.1), v1=1.0, v2=0.0, t=3.0), 256)
    assert oracle.flags == (FLAG_BOUNDARY_DEGENERATE,)
    smooth = DiscreteModeOracle(alpha, f, _smooth_field(), 256)
    assert smooth.flags == ()
