import math

import numpy as np
from scipy.special import gammaln, iv, ive, logsumexp

from gyver.ualk.exceptions import ArgumentError, BesselRangeError

_SERIES_TERMS = 500


def _check_domain(order: float, x: float) -> None:
    if order < 0 or not math.isfinite(order):
        raise ArgumentError(f'Bessel order must be a finite non-negative number, got {order}')
    if x < 0 or not math.isfinite(x):
        raise ArgumentError(f'Bessel argument must be a finite non-negative number, got {x}')


def bessel_i(order: float, x: float) -> float:
    """Modified Bessel function of the first kind, I_order(x).

    :raises BesselRangeError: when the value overflows a float64; use
    `log_bessel_i` for large arguments."""
    _check_domain(order, x)
    value = float(iv(order, x))
    if not math.isfinite(value):
        raise BesselRangeError(
            f'I_{order}({x}) overflows float64, use log_bessel_i instead'
        )
    return value


def _log_bessel_series(order: float, x: float) -> float:
    # log of sum_m (x/2)^(2m+v) / (m! Γ(m+v+1)), summed in the log domain
    m = np.arange(_SERIES_TERMS, dtype=np.float64)
    terms = (2 * m + order) * math.log(x / 2) - gammaln(m + 1) - gammaln(m + order + 1)
    return float(logsumexp(terms))


def log_bessel_i(order: float, x: float) -> float:
    """log I_order(x), stable for x up to 1e4 and beyond.

    Uses the exponentially scaled evaluation log(ive) + x and falls back to the
    log-domain power series where the scaled value underflows (large orders at
    small arguments)."""
    _check_domain(order, x)
    if x == 0:
        return 0.0 if order == 0 else -math.inf
    scaled = float(ive(order, x))
    if scaled > 0 and math.isfinite(scaled):
        return math.log(scaled) + x
    return _log_bessel_series(order, x)


def bessel_ratio(order: float, x: float) -> float:
    """I_{order+1}(x) / I_order(x), the mean resultant length A_d(κ) for
    order = d/2 − 1."""
    _check_domain(order, x)
    if x == 0:
        return 0.0
    return math.exp(log_bessel_i(order + 1, x) - log_bessel_i(order, x))
