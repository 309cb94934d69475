"""
Special functions used by the analytic models: incomplete gamma functions,
the two Gauss hypergeometric specializations C_alpha and B_alpha, and a
checked wrapper around adaptive quadrature.
"""

import math
import logging
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import ConvergenceError, DomainError
from .schemas import DEFAULT_TOLERANCE, Tolerance

# Configure logging
logger = logging.getLogger(__name__)

FPMIN = 1e-300


def lower_incomplete_gamma(s: float, x: float) -> float:
    """gamma(s, x) = integral of t^(s-1) e^(-t) over [0, x]"""
    if s <= 0:
        raise DomainError(f"lower_incomplete_gamma needs s > 0, got s={s}")
    if x < 0:
        raise DomainError(f"lower_incomplete_gamma needs x >= 0, got x={x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return float(special.gamma(s))
    return float(special.gammainc(s, x) * special.gamma(s))


def _upper_gamma_continued_fraction(s: float, x: float, tol: Tolerance) -> float:
    """Legendre continued fraction by the modified Lentz method, valid for any real s and x > 0"""
    b = x + 1.0 - s
    c = 1.0 / FPMIN
    d = 1.0 / b if b != 0 else 1.0 / FPMIN
    h = d
    for i in range(1, tol.max_terms + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol.rel:
            # Prefactor in log space so large x underflows cleanly to zero
            return math.exp(-x + s * math.log(x)) * h
    raise ConvergenceError("Continued fraction for upper incomplete gamma did not converge",
                           s=s, x=x, max_terms=tol.max_terms)


def upper_incomplete_gamma(s: float, x: float, tol: Tolerance = DEFAULT_TOLERANCE) -> float:
    """Gamma(s, x) = integral of t^(s-1) e^(-t) over [x, inf), for any real s and x > 0"""
    if x <= 0:
        raise DomainError(f"upper_incomplete_gamma needs x > 0, got x={x}")
    if math.isinf(x):
        return 0.0
    if s > 0:
        return float(special.gammaincc(s, x) * special.gamma(s))
    if x > 1.0:
        return _upper_gamma_continued_fraction(s, x, tol)

    # Downward recurrence Gamma(a, x) = (Gamma(a+1, x) - x^a e^-x) / a from a base in [0, 1)
    steps = math.ceil(-s) if s != math.floor(s) else int(-s)
    base = s + steps
    if base == 0:
        value = float(special.exp1(x))
    else:
        value = float(special.gammaincc(base, x) * special.gamma(base))
    a = base
    for _ in range(steps):
        a -= 1.0
        value = (value - x ** a * math.exp(-x)) / a
    return value


def _hyp_unit_scalar(b: float, z: float, tol: Tolerance) -> float:
    """2F1(1, b; b+1; -z) for 0 < b < 1 and z >= 0"""
    if z == 0.0:
        return 1.0
    if math.isinf(z):
        return 0.0

    if z <= 0.5:
        # Direct series: sum b/(b+n) (-z)^n
        total, power = 0.0, 1.0
        for n in range(tol.max_terms):
            term = b / (b + n) * power
            total += term
            if abs(term) <= tol.rel * abs(total):
                return total
            power *= -z
    elif z < 2.0:
        # Pfaff transform: (1+z)^-1 2F1(1, 1; b+1; w) with w = z/(1+z) <= 2/3
        w = z / (1.0 + z)
        total, term = 1.0, 1.0
        for n in range(tol.max_terms):
            term *= (n + 1.0) / (b + 1.0 + n) * w
            total += term
            if term <= tol.rel * total:
                return total / (1.0 + z)
    else:
        # Inversion z -> 1/z of the Euler integral b * int_0^1 t^(b-1)/(1+zt) dt
        head = math.pi * z ** (-b) / math.sin(math.pi * b)
        total, power = 0.0, 1.0 / z
        for n in range(tol.max_terms):
            term = power / (n + 1.0 - b)
            total += term
            if abs(term) <= tol.rel * abs(head - total):
                return b * (head - total)
            power *= -1.0 / z
    raise ConvergenceError("Hypergeometric series did not converge", b=b, z=z, max_terms=tol.max_terms)


def _hyp_unit(b: float, z, tol: Tolerance):
    if np.ndim(z) == 0:
        return _hyp_unit_scalar(b, float(z), tol)
    values = np.asarray(z, dtype=float)
    out = np.empty_like(values)
    for index, value in np.ndenumerate(values):
        out[index] = _hyp_unit_scalar(b, float(value), tol)
    return out


def c_alpha(alpha: float, t, tol: Tolerance = DEFAULT_TOLERANCE):
    """C_alpha(t) = 2F1(1, 1-2/alpha; 2-2/alpha; -t), accepts scalars or arrays"""
    if alpha <= 2:
        raise DomainError(f"c_alpha needs alpha > 2, got alpha={alpha}")
    if np.any(np.asarray(t) < 0):
        raise DomainError("c_alpha needs t >= 0")
    return _hyp_unit(1.0 - 2.0 / alpha, t, tol)


def b_alpha(alpha: float, s, tol: Tolerance = DEFAULT_TOLERANCE):
    """B_alpha(s) = 2F1(1, 2/alpha; 1+2/alpha; -1/s), accepts scalars or arrays"""
    if alpha <= 2:
        raise DomainError(f"b_alpha needs alpha > 2, got alpha={alpha}")
    s_values = np.asarray(s, dtype=float)
    if np.any(s_values <= 0):
        raise DomainError("b_alpha needs s > 0")
    with np.errstate(divide="ignore"):
        z = 1.0 / s_values
    if np.ndim(s) == 0:
        return _hyp_unit_scalar(2.0 / alpha, float(z), tol)
    return _hyp_unit(2.0 / alpha, z, tol)


def quadrature(func: Callable[[float], float], a: float, b: float, what: str,
               limit: int = 200, epsabs: float = 1e-10, epsrel: float = 1e-9) -> float:
    """Adaptive quadrature that raises with diagnostics instead of returning a poor value"""
    result = integrate.quad(func, a, b, limit=limit, epsabs=epsabs, epsrel=epsrel, full_output=1)
    value, abserr = result[0], result[1]
    if len(result) > 3:
        logger.debug(f"Quadrature for {what} reported: {result[3]}")
    if not math.isfinite(value) or abserr > max(1e-6, 1e-6 * abs(value)):
        raise ConvergenceError(f"Quadrature failed for {what}", value=value, abserr=abserr,
                               evaluations=result[2].get('neval'))
    return value
