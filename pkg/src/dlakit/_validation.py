"""Small argument checkers shared by the public functions and estimators."""

import math
import numbers

from .errors import DomainError


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise DomainError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise DomainError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_real(value, name, low=None, high=None, low_open=False, high_open=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise DomainError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if math.isnan(value):
        raise DomainError(f"{name} is NaN")
    if low is not None and (value < low or (low_open and value == low)):
        raise DomainError(f"{name}={value} below allowed range")
    if high is not None and (value > high or (high_open and value == high)):
        raise DomainError(f"{name}={value} above allowed range")
    return value


def check_probability(value, name="p"):
    return check_real(value, name, 0.0, 1.0)
