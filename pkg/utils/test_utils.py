"""
Utility functions useful for testing
"""

import filecmp
import os
import tempfile
from typing import Callable, Sequence

import numpy as np

from core.phase_field import PhaseField, phi
from core.pulse_profile import PulseProfile


def midpoint_photon_photon_overlap(f1: PulseProfile, f2: PulseProfile, field: PhaseField, bins: int = 256) -> complex:
    """brute-force <Φ_in|Φ_out> of the bi-photon gate on a bins x bins midpoint grid

    Args:
        f1 (PulseProfile): photon 1 (x coordinate)
        f2 (PulseProfile): photon 2 (y coordinate)
        field (PhaseField): interaction phase
        bins (int): midpoint cells per axis, each axis covers the profile support
    """
    def _midpoints(p):
        lo, hi = p.support()
        dz = (hi - lo) / bins
        return lo + dz * (np.arange(bins) + 0.5), dz

    x, dx = _midpoints(f1)
    y, dy = _midpoints(f2)
    wx = f1.density(x) * dx
    wy = f2.density(y) * dy
    phase = phi(field, x[:, None], y[None, :])
    return complex(np.sum(wx[:, None] * wy[None, :] * np.exp(-1j * phase)))


def fidelity_peak_test(
    evaluate_F: Callable[[float], float],
    theta_grid: Sequence[float],
    expected_theta: float,
    theta_precision: float,
    min_fidelity: float = None,
):
    """Checks that F sampled on theta_grid peaks at expected_theta

    Args:
        evaluate_F (Callable): θ -> F(θ)
        theta_grid (Sequence[float]): grid to sample on
        expected_theta (float): where the maximum should be
        theta_precision (float): allowed distance of the sampled argmax from expected_theta
        min_fidelity (float, optional): lower bound on the sampled maximum. Defaults to None.
    """
    values = np.array([evaluate_F(t) for t in theta_grid])
    k = int(np.argmax(values))
    theta_peak, f_max = theta_grid[k], values[k]
    print(f" theta_peak={theta_peak:.6f}, f_max: {f_max:.9f}")

    err_msg = f"theta_peak={theta_peak} is not {theta_precision} close to {expected_theta}"
    assert abs(theta_peak - expected_theta) <= theta_precision, err_msg
    if min_fidelity is not None:
        assert f_max >= min_fidelity, f"f_max={f_max} below {min_fidelity}"


def oracle_agreement_test(
    engine_value: Callable[[float], complex],
    oracle_value: Callable[[float], complex],
    theta_grid: Sequence[float],
    tolerance: float,
    relative: bool = False,
) -> float:
    """Compares two overlap implementations on every θ of theta_grid

    Returns:
        float: the max (absolute or relative) deviation
    """
    deviations = []
    for theta in theta_grid:
        a, b = engine_value(theta), oracle_value(theta)
        dev = abs(a - b)
        if relative:
            dev /= max(abs(b), np.finfo(float).tiny)
        deviations.append(dev)
    max_dev = float(max(deviations))
    print(f" max_deviation={max_dev:.3e}, tolerance: {tolerance:.1e}")
    assert max_dev <= tolerance, f"deviation {max_dev} exceeds {tolerance}"
    return max_dev


def try_file_curve_determinism(config_path: str, extra_args: Sequence[str] = ()):
    """runs the `curve` command twice on the same scenario and checks the CSVs are identical

    Args:
        config_path (str): scenario file
        extra_args (Sequence[str]): more command line flags
    """
    from analysis.xpm_cli import main

    with tempfile.TemporaryDirectory() as tmpdirname:
        out_1 = os.path.join(tmpdirname, "curve_1.csv")
        out_2 = os.path.join(tmpdirname, "curve_2.csv")

        assert main(["curve", "--config", config_path, "--out", out_1, *extra_args]) == 0
        assert main(["curve", "--config", config_path, "--out", out_2, *extra_args]) == 0

        return filecmp.cmp(out_1, out_2, shallow=False)
