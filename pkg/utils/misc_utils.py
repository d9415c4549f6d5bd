import functools
import sys
from datetime import datetime

import numpy as np

# define the cache decorator
cache = functools.lru_cache(maxsize=None)


def log_info(msg: str, file=sys.stderr):
    """prints a timestamped progress line, e.g. `[2022-11-30 10:00:00.000]: msg`"""
    print("[%s]: %s" % (str(datetime.now()), msg), file=file)


def expm1i(phase):
    """returns exp(i*phase) - 1 without cancellation for small phases

    exp(i p) - 1 = -2 sin^2(p/2) + i sin(p)
    """
    phase = np.asarray(phase, dtype=float)
    return -2.0 * np.sin(0.5 * phase) ** 2 + 1j * np.sin(phase)


def wrap_phase(theta: float) -> float:
    """maps theta into [-pi, pi)"""
    return float((theta + np.pi) % (2 * np.pi) - np.pi)


def test_expm1i_small_phase():
    p = 1e-9
    val = expm1i(p)
    # naive exp(1j*p) - 1 loses the real part entirely
    np.testing.assert_allclose(val.real, -0.5 * p * p, rtol=1e-12)
    np.testing.assert_allclose(val.imag, p, rtol=1e-12)


def test_wrap_phase():
    assert wrap_phase(np.pi) == -np.pi
    assert abs(wrap_phase(2 * np.pi + 0.3) - 0.3) < 1e-12
    assert abs(wrap_phase(-0.3) + 0.3) < 1e-15
