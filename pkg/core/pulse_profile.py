"""Pulse envelopes f(x) (single photon) and α(x) (coherent state)

Lengths are measured in units of the single-photon width, so the default pulse has
σ = 1. A gaussian profile uses the L2 convention

    f(z) = (2πσ²)^(-1/4) exp(-(z - z0)² / (4σ²))

per axis, so that ∫|f|² = 1 exactly and |f|² is a normal density of variance σ².
A coherent envelope is a unit profile scaled by sqrt(n̄).

Tabulated profiles are 1-D samples on a uniform grid; they are linearly interpolated
between samples and vanish outside the grid.
"""

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import erf

from core.errors import InvalidParameterError, QuadratureError, UnsupportedOperationError

# gaussian integrals are truncated at this many σ (tail mass below 1e-14)
SUPPORT_WIDTH = 8.0

# normalization tolerance of a unit profile
NORM_TOL = 1e-8


class ProfileKind(Enum):
    GAUSSIAN = "gaussian"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class PulseProfile:
    """immutable pulse envelope

    Use gaussian_profile / tabulated_profile / coherent_profile to construct one.
    """

    kind: ProfileKind
    center: Tuple[float, ...]
    sigma: Tuple[float, ...]
    dimension: int = 1
    amplitude_scale: complex = 1.0
    samples: np.ndarray = None
    grid_start: float = 0.0
    grid_step: float = 1.0
    # gaussian truncation, in units of sigma
    support_width: float = SUPPORT_WIDTH

    @property
    def grid_end(self) -> float:
        return self.grid_start + self.grid_step * (len(self.samples) - 1)

    def evaluate(self, *coords):
        """envelope value at the given coordinates (one array per axis)"""
        if len(coords) != self.dimension:
            raise InvalidParameterError(
                f"profile has dimension {self.dimension}, got {len(coords)} coordinate(s)"
            )
        if self.kind == ProfileKind.GAUSSIAN:
            val = self.amplitude_scale
            for z, z0, s in zip(coords, self.center, self.sigma):
                z = np.asarray(z, dtype=float)
                val = val * (2 * np.pi * s * s) ** -0.25 * np.exp(-((z - z0) ** 2) / (4 * s * s))
            return val

        z = np.asarray(coords[0], dtype=float)
        grid = self.grid_start + self.grid_step * np.arange(len(self.samples))
        re = np.interp(z, grid, self.samples.real, left=0.0, right=0.0)
        im = np.interp(z, grid, self.samples.imag, left=0.0, right=0.0)
        return self.amplitude_scale * (re + 1j * im)

    def density(self, *coords):
        """|p(x)|²"""
        return np.abs(self.evaluate(*coords)) ** 2

    def support(self, axis: int = 0, width: float = None) -> Tuple[float, float]:
        """interval outside of which the profile is treated as zero"""
        if self.kind == ProfileKind.GAUSSIAN:
            width = self.support_width if width is None else width
            return (
                self.center[axis] - width * self.sigma[axis],
                self.center[axis] + width * self.sigma[axis],
            )
        return (self.grid_start, self.grid_end)

    def mass_between(self, lo, hi, axis: int = 0):
        """∫_lo^hi of the marginal density along `axis` (vectorized, zero when hi <= lo)"""
        lo = np.asarray(lo, dtype=float)
        hi = np.maximum(np.asarray(hi, dtype=float), lo)
        scale2 = abs(self.amplitude_scale) ** 2
        if self.kind == ProfileKind.GAUSSIAN:
            z0, s = self.center[axis], self.sigma[axis]
            w = np.sqrt(2.0) * s
            return scale2 * 0.5 * (erf((hi - z0) / w) - erf((lo - z0) / w))
        return scale2 * (self._tabulated_cumulative(hi) - self._tabulated_cumulative(lo))

    def _tabulated_cumulative(self, x):
        """∫_{grid_start}^{x} |interpolant|² dz, exact for the piecewise-linear interpolant"""
        s = self.samples
        h = self.grid_step
        d = np.diff(s)
        seg_mass = h * (np.abs(s[:-1]) ** 2 + np.real(np.conj(s[:-1]) * d) + np.abs(d) ** 2 / 3)
        cum = np.concatenate([[0.0], np.cumsum(seg_mass)])

        pos = np.clip((np.asarray(x, dtype=float) - self.grid_start) / h, 0.0, len(s) - 1)
        k = np.minimum(np.floor(pos).astype(int), len(s) - 2)
        t = pos - k
        a, dk = s[k], d[k]
        partial = h * (np.abs(a) ** 2 * t + np.real(np.conj(a) * dk) * t ** 2 + np.abs(dk) ** 2 * t ** 3 / 3)
        return cum[k] + partial


def _as_axis_tuple(value, dimension: int, name: str) -> Tuple[float, ...]:
    vals = tuple(float(v) for v in np.atleast_1d(value))
    if len(vals) == 1:
        vals = vals * dimension
    if len(vals) != dimension:
        raise InvalidParameterError(f"{name} needs {dimension} entries, got {len(vals)}")
    return vals


def gaussian_profile(center=0.0, sigma=1.0, dimension: int = 1, support_width: float = SUPPORT_WIDTH) -> PulseProfile:
    """unit-normalized gaussian single-photon profile, truncated at support_width sigmas"""
    if dimension not in (1, 2):
        raise InvalidParameterError(f"dimension must be 1 or 2, got {dimension}")
    center = _as_axis_tuple(center, dimension, "center")
    sigma = _as_axis_tuple(sigma, dimension, "sigma")
    if not all(np.isfinite(center)):
        raise InvalidParameterError(f"center must be finite, got {center}")
    if not all(np.isfinite(s) and s > 0 for s in sigma):
        raise InvalidParameterError(f"sigma must be positive on every axis, got {sigma}")
    if not (np.isfinite(support_width) and support_width > 0):
        raise InvalidParameterError(f"support_width must be positive, got {support_width}")
    return PulseProfile(ProfileKind.GAUSSIAN, center, sigma, dimension, support_width=float(support_width))


def tabulated_profile(samples, grid_start: float, grid_step: float) -> PulseProfile:
    """profile given by samples on the uniform grid grid_start + k * grid_step

    The density must decay below 1e-12 of its peak at both grid edges.
    """
    samples = np.array(samples, dtype=complex)
    if samples.ndim != 1:
        raise InvalidParameterError("tabulated profiles are 1-D, samples must be a flat array")
    if len(samples) < 3:
        raise InvalidParameterError("tabulated profile needs at least 3 samples")
    if not grid_step > 0 or not np.isfinite(grid_start):
        raise InvalidParameterError(f"invalid grid: start={grid_start}, step={grid_step}")
    if not np.all(np.isfinite(samples)):
        raise InvalidParameterError("tabulated samples must be finite")

    dens = np.abs(samples) ** 2
    peak = dens.max()
    if peak == 0:
        raise InvalidParameterError("tabulated samples are identically zero")
    if max(dens[0], dens[-1]) >= 1e-12 * peak:
        raise InvalidParameterError("tabulated samples do not decay at the grid edges")
    samples.setflags(write=False)

    z = grid_start + grid_step * np.arange(len(samples))
    mass = trapezoid(dens, z)
    mean = trapezoid(z * dens, z) / mass
    rms = np.sqrt(trapezoid((z - mean) ** 2 * dens, z) / mass)
    return PulseProfile(
        ProfileKind.TABULATED,
        (float(mean),),
        (float(rms),),
        1,
        samples=samples,
        grid_start=float(grid_start),
        grid_step=float(grid_step),
    )


def mean_photon_number(p: PulseProfile) -> float:
    """∫|p|² over all axes

    Raises:
        QuadratureError: if the tabulated samples are too coarse for the sum to be trusted
    """
    scale2 = abs(p.amplitude_scale) ** 2
    if p.kind == ProfileKind.GAUSSIAN:
        return float(scale2)

    dens = np.abs(p.samples) ** 2
    full = trapezoid(dens, dx=p.grid_step)
    # the same rule on every other sample
    half = trapezoid(dens[::2], dx=2 * p.grid_step)
    residual = abs(full - half)
    if residual > NORM_TOL * full:
        raise QuadratureError(
            f"tabulated profile too coarse: residual {residual:.3e}",
            partial=scale2 * full,
            residual=scale2 * residual,
        )
    return float(scale2 * full)


def coherent_profile(base: PulseProfile, nbar: float) -> PulseProfile:
    """coherent envelope α = sqrt(nbar) * base"""
    if not (np.isfinite(nbar) and nbar >= 0):
        raise InvalidParameterError(f"nbar must be finite and non-negative, got {nbar}")
    norm = mean_photon_number(base)
    if abs(norm - 1.0) > NORM_TOL:
        raise InvalidParameterError(f"base profile is not unit-normalized (norm {norm})")
    return dataclasses.replace(base, amplitude_scale=base.amplitude_scale * np.sqrt(nbar))


def mode_spectrum(p: PulseProfile, k_grid) -> np.ndarray:
    """α_k = (2π)^(-d/2) ∫ p(x) exp(-i k.x) dx on every k of k_grid

    For 2-D profiles every entry of k_grid is a (kx, ky) pair.
    """
    k_grid = np.asarray(k_grid, dtype=float)
    if k_grid.size == 0:
        return np.zeros(0, dtype=complex)
    if p.dimension == 2:
        k_grid = k_grid.reshape(-1, 2)
    else:
        k_grid = k_grid.reshape(-1, 1)

    if p.kind == ProfileKind.GAUSSIAN:
        spec = np.full(len(k_grid), p.amplitude_scale, dtype=complex)
        for axis, (z0, s) in enumerate(zip(p.center, p.sigma)):
            k = k_grid[:, axis]
            amp = (2 * np.pi * s * s) ** -0.25 * 2 * s * np.sqrt(np.pi) / np.sqrt(2 * np.pi)
            spec *= amp * np.exp(-(k * s) ** 2) * np.exp(-1j * k * z0)
        return spec

    z = p.grid_start + p.grid_step * np.arange(len(p.samples))
    phase = np.exp(-1j * np.outer(k_grid[:, 0], z))
    return p.amplitude_scale * trapezoid(phase * p.samples, z, axis=-1) / np.sqrt(2 * np.pi)


def parseval_residual(p: PulseProfile, k_grid) -> float:
    """|Σ|α_k|²Δk - n̄| / n̄ on a uniform 1-D k grid"""
    if p.dimension != 1:
        raise UnsupportedOperationError("parseval_residual is implemented for 1-D profiles")
    k_grid = np.asarray(k_grid, dtype=float)
    spec = mode_spectrum(p, k_grid)
    nbar = mean_photon_number(p)
    diff = abs(trapezoid(np.abs(spec) ** 2, k_grid) - nbar)
    return diff / nbar if nbar > 0 else diff


################################### TESTS ######################################


def _unit_gaussian_samples(n=4096, width=SUPPORT_WIDTH):
    z = np.linspace(-width, width, n)
    return z, gaussian_profile(0.0, 1.0).evaluate(z)


def test_gaussian_profile_normalization():
    from utils.quadrature import integrate

    for center in (0.0, 5.0):
        p = gaussian_profile(center, 1.0, 1)
        res = integrate(p.density, [p.support()[0], center, p.support()[1]])
        np.testing.assert_allclose(res.value, 1.0, atol=NORM_TOL)
        assert mean_photon_number(p) == 1.0

    p = gaussian_profile(0.0, 1.0)
    np.testing.assert_allclose(p.evaluate(0.0), (2 * np.pi) ** -0.25, rtol=1e-15)
    np.testing.assert_allclose(p.evaluate(0.0), 0.6316187777460647, rtol=1e-12)
    assert gaussian_profile(1.0, 0.5, support_width=6.0).support() == (-2.0, 4.0)
    assert p.support(width=3.0) == (-3.0, 3.0)


def test_gaussian_profile_2d():
    from utils.quadrature import tensor_rule

    p = gaussian_profile((0.0, 1.0), (0.5, 2.0), dimension=2)
    X, Y, W = tensor_rule([-4.0, 4.0], [-15.0, 17.0], panels=8)
    np.testing.assert_allclose(np.sum(W * p.density(X, Y)), 1.0, rtol=1e-10)


def test_gaussian_profile_invalid():
    import pytest

    for args in ((0.0, 0.0, 1), (0.0, -1.0, 1), (0.0, 1.0, 3)):
        with pytest.raises(InvalidParameterError):
            gaussian_profile(*args)


def test_coherent_profile():
    import pytest

    base = gaussian_profile(0.0, 1.0)
    assert mean_photon_number(coherent_profile(base, 1000.0)) == 1000.0
    vac = coherent_profile(base, 0.0)
    assert mean_photon_number(vac) == 0.0
    assert np.all(vac.evaluate(np.linspace(-3, 3, 7)) == 0)

    from utils.quadrature import integrate

    alpha = coherent_profile(base, 2.0)
    res = integrate(alpha.density, [-8.0, 0.0, 8.0])
    np.testing.assert_allclose(res.value, 2.0, rtol=1e-12)

    with pytest.raises(InvalidParameterError):
        coherent_profile(base, -1.0)


def test_tabulated_profile():
    import pytest

    z, samples = _unit_gaussian_samples()
    p = tabulated_profile(samples, z[0], z[1] - z[0])
    np.testing.assert_allclose(mean_photon_number(p), 1.0, atol=1e-8)
    np.testing.assert_allclose(p.center[0], 0.0, atol=1e-12)
    np.testing.assert_allclose(p.sigma[0], 1.0, rtol=1e-8)

    # interpolation reproduces the samples and vanishes outside the grid
    np.testing.assert_allclose(p.evaluate(z[100]), samples[100])
    assert p.evaluate(9.0) == 0

    # exact interpolant masses agree with the gaussian marginal to interpolation accuracy
    g = gaussian_profile(0.0, 1.0)
    np.testing.assert_allclose(p.mass_between(-1.0, 2.0), g.mass_between(-1.0, 2.0), atol=2e-6)
    np.testing.assert_allclose(p.mass_between(-20.0, 20.0), p.mass_between(z[0], z[-1]))

    # a truncated grid violates the decay requirement
    with pytest.raises(InvalidParameterError):
        tabulated_profile(samples[1000:-1000], z[1000], z[1] - z[0])


def test_coarse_tabulated_norm():
    import pytest

    # a unit gaussian sampled every 2σ: the edges decay but the sum cannot be trusted
    z = np.arange(-8.0, 8.5, 2.0)
    p = tabulated_profile(np.exp(-z * z / 4), z[0], 2.0)
    with pytest.raises(QuadratureError) as info:
        mean_photon_number(p)
    full = 2.0 * np.sum(np.exp(-z * z / 2))
    np.testing.assert_allclose(info.value.partial, full, rtol=1e-12)
    assert info.value.residual > NORM_TOL * full

    # the amplitude scale carries into partial and residual
    with pytest.raises(QuadratureError) as scaled:
        mean_photon_number(dataclasses.replace(p, amplitude_scale=2.0))
    np.testing.assert_allclose(scaled.value.partial, 4.0 * full, rtol=1e-12)
    np.testing.assert_allclose(scaled.value.residual, 4.0 * info.value.residual, rtol=1e-12)


def test_mass_between():
    p = gaussian_profile(1.0, 2.0)
    np.testing.assert_allclose(p.mass_between(*p.support()), 1.0, atol=1e-14)
    np.testing.assert_allclose(p.mass_between(1.0, 100.0), 0.5, rtol=1e-15)
    assert p.mass_between(3.0, 2.0) == 0.0


def test_mode_spectrum():
    from utils.quadrature import integrate

    p = gaussian_profile(0.0, 1.0)
    direct = integrate(p.evaluate, [-12.0, 0.0, 12.0]).value / np.sqrt(2 * np.pi)
    np.testing.assert_allclose(mode_spectrum(p, [0.0])[0], direct, rtol=1e-12)

    assert len(mode_spectrum(p, [])) == 0

    k = np.linspace(-3, 3, 61)
    shifted = gaussian_profile(5.0, 1.0)
    np.testing.assert_allclose(np.abs(mode_spectrum(p, k)), np.abs(mode_spectrum(shifted, k)))

    # the tabulated copy has the same spectrum up to sampling error
    z, samples = _unit_gaussian_samples(width=12.0)
    tab = tabulated_profile(samples, z[0], z[1] - z[0])
    np.testing.assert_allclose(mode_spectrum(tab, k), mode_spectrum(p, k), atol=1e-10)


def test_parseval():
    k = np.linspace(-8, 8, 1601)
    for p in (gaussian_profile(0.0, 1.0), coherent_profile(gaussian_profile(2.0, 0.7), 30.0)):
        assert parseval_residual(p, k) < 1e-4


def test_mode_spectrum_2d():
    from utils.quadrature import tensor_rule

    p = gaussian_profile((0.5, -1.0), (0.7, 1.3), dimension=2)
    k = np.array([[0.0, 0.0], [1.0, -0.5], [2.0, 0.3]])
    spec = mode_spectrum(p, k)
    assert spec.shape == (3,)

    # the separable gaussian factorizes into the 1-D spectra
    kx = mode_spectrum(gaussian_profile(0.5, 0.7), k[:, 0])
    ky = mode_spectrum(gaussian_profile(-1.0, 1.3), k[:, 1])
    np.testing.assert_allclose(spec, kx * ky, rtol=1e-14)

    # pairs may also come flattened
    np.testing.assert_allclose(mode_spectrum(p, k.ravel()), spec, rtol=1e-15)

    # amplitudes decay slower than densities, so integrate further out
    (xa, xb), (ya, yb) = p.support(0, width=12.0), p.support(1, width=12.0)
    X, Y, W = tensor_rule([xa, 0.5, xb], [ya, -1.0, yb], panels=16)
    for (k1, k2), value in zip(k, spec):
        direct = np.sum(W * p.evaluate(X, Y) * np.exp(-1j * (k1 * X + k2 * Y))) / (2 * np.pi)
        np.testing.assert_allclose(value, direct, rtol=1e-10)
