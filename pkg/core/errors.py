"""exception types raised by the XPM simulator

Every class also derives from the builtin exception that would otherwise be raised
(ValueError, NotImplementedError, ...), so callers catching builtins keep working.
"""


class XpmError(Exception):
    """root of all simulator errors"""


class InvalidParameterError(XpmError, ValueError):
    """a constructor or operation received a parameter outside its domain"""


class UnsupportedOperationError(XpmError, NotImplementedError):
    """the operation has no meaning for the given kernel/geometry combination"""


class QuadratureError(XpmError, ArithmeticError):
    """quadrature refinement did not reach the requested tolerance

    Attributes:
        partial: the last (finest) estimate of the integral
        residual: difference between the last two refinement levels
    """

    def __init__(self, message: str, partial=None, residual: float = float("nan")):
        super().__init__(message)
        self.partial = partial
        self.residual = residual


class InvariantViolationError(XpmError, AssertionError):
    """a quantity that is analytically impossible showed up in a computation"""


class ScenarioParseError(InvalidParameterError):
    """scenario document could not be parsed

    Attributes:
        key: offending key (None if the error is not tied to a key)
        line: 1-based line number in the document (None for missing keys)
    """

    def __init__(self, message: str, key: str = None, line: int = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.key = key
        self.line = line


class OracleUsageError(InvalidParameterError):
    """a brute-force oracle was requested outside its applicability range"""


def test_error_hierarchy():
    assert issubclass(InvalidParameterError, ValueError)
    assert issubclass(UnsupportedOperationError, NotImplementedError)
    assert issubclass(ScenarioParseError, XpmError)

    err = ScenarioParseError("extraneous key: vt", key="vt", line=3)
    assert str(err) == "extraneous key: vt (line 3)"
    assert err.key == "vt"

    q = QuadratureError("no convergence", partial=1.0, residual=1e-3)
    assert q.partial == 1.0 and q.residual == 1e-3
