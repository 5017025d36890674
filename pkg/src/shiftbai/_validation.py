import numbers

import numpy as np

from .errors import ConfigError


def check_int(value, name, *, min_value=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"expected an integer, got {value!r}", key=name)
    value = int(value)
    if min_value is not None and value < min_value:
        raise ConfigError(f"must be >= {min_value}, got {value}", key=name)
    return value


def check_real(value, name, *, positive=False, allow_zero=True):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"expected a real number, got {value!r}", key=name)
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"must be finite, got {value}", key=name)
    if positive and (value < 0 or (value == 0 and not allow_zero)):
        raise ConfigError(f"must be positive, got {value}", key=name)
    return value


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigError(f"must be one of {sorted(choices)}, got {value!r}", key=name)
    return value


def check_arm(arm, n_arms):
    if isinstance(arm, bool) or not isinstance(arm, numbers.Integral):
        raise IndexError(f"arm index must be an integer, got {arm!r}")
    if not 0 <= arm < n_arms:
        raise IndexError(f"arm index {arm} out of range for {n_arms} arms")
    return int(arm)


def argmax_random(values, rng):
    """Index of the maximum of ``values``; exact ties broken uniformly with ``rng``."""
    values = np.asarray(values)
    top = values.argmax()
    best = np.flatnonzero(values == values[top])
    if best.size == 1:
        return int(top)
    return int(best[rng.integers(best.size)])
