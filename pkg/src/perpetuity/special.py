"""Special functions evaluated in log space.

``log_gammaincc`` is the logarithm of the regularized upper incomplete
gamma function Q(a, x) = Gamma(a, x) / Gamma(a). It stays accurate where
Q itself underflows, which is where the deep tail sums live.
"""

import math

import numpy as np
from scipy import special

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000


def _log_prefactor(a, x):
    # log(x^a e^-x / Gamma(a))
    return a * math.log(x) - x - math.lgamma(a)


def _log_p_series(a, x):
    """log P(a, x) by the power series; converges for any x, fast for x < a + 1."""
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return _log_prefactor(a, x) + math.log(total)


def _log_q_contfrac(a, x):
    """log Q(a, x) by the modified Lentz continued fraction; for x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    frac = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        frac *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")
    return _log_prefactor(a, x) + math.log(frac)


def log_gammaincc_scalar(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        log_p = _log_p_series(a, x)
        return math.log1p(-math.exp(log_p)) if log_p < -1e-300 else -math.inf
    return _log_q_contfrac(a, x)


def log_gammaincc(a, x):
    """Vectorised log Q(a, x)."""
    a_arr, x_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    out = np.array([log_gammaincc_scalar(ai, xi) for ai, xi in zip(a_arr.ravel(), x_arr.ravel())])
    out = out.reshape(a_arr.shape)
    return float(out) if out.ndim == 0 else out


def norm_cdf(z):
    """Standard normal distribution function (erfc based)."""
    return special.ndtr(z)


def norm_logsf(z):
    return special.log_ndtr(-np.asarray(z, dtype=float))
