"""Scalar special functions: Gamma, Beta and the two-parameter Mittag-Leffler function.

Only real, non-negative arguments are supported for the Mittag-Leffler
function; this is the regime in which every kernel of the solver lives
(the coefficient ``M`` is never negative).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.special as sc

from .errors import AccuracyLossError, DomainError

ML_REL_TOL = 1e-16
ML_MAX_TERMS = 10_000


@dataclass(frozen=True)
class MLParams:
    """Parameters ``(n1, n2)`` of ``E_{n1,n2}(z) = sum_k z^k / Gamma(n1 k + n2)``."""

    n1: float
    n2: float

    def __post_init__(self):
        if not (self.n1 > 0 and self.n2 > 0):
            raise DomainError(f"Mittag-Leffler parameters must be positive, got {self}")


def gamma(x: float) -> float:
    if not x > 0:
        raise DomainError(f"gamma is only defined here for x > 0, got {x!r}")
    return math.gamma(x)


def beta(a: float, b: float) -> float:
    if not (a > 0 and b > 0):
        raise DomainError(f"beta requires positive arguments, got ({a!r}, {b!r})")
    return float(sc.beta(a, b))


def _ml_series(n1: float, n2: float, z: np.ndarray) -> np.ndarray:
    # Terms are evaluated in log space so that z**k / Gamma(.) never overflows early.
    out = np.zeros_like(z)
    pos = z > 0
    out[~pos] = 1.0 / math.gamma(n2)
    if not pos.any():
        return out
    zp = z[pos]
    logz = np.log(zp)
    total = np.zeros_like(zp)
    prev = np.full_like(zp, np.inf)
    done = np.zeros(zp.shape, dtype=bool)
    for k in range(ML_MAX_TERMS):
        term = np.exp(k * logz - math.lgamma(n1 * k + n2))
        if not np.all(np.isfinite(term)):
            raise AccuracyLossError(
                f"Mittag-Leffler series overflowed for E_{{{n1},{n2}}} at z={zp.max():.6g}"
            )
        total = np.where(done, total, total + term)
        done |= (term < ML_REL_TOL * total) & (term <= prev)
        prev = term
        if done.all():
            out[pos] = total
            return out
    raise AccuracyLossError(
        f"Mittag-Leffler series for E_{{{n1},{n2}}} did not converge in {ML_MAX_TERMS} terms"
    )


def mittag_leffler(p: MLParams, z):
    """Two-parameter Mittag-Leffler function for real ``z >= 0``.

    Summed directly from the power series; stops once a term is below
    ``1e-16`` of the partial sum and the terms have started to decrease.
    Accepts a scalar or an array of arguments.
    """
    arr = np.asarray(z, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("mittag_leffler is only supported for real z >= 0")
    with np.errstate(over="ignore"):
        res = _ml_series(p.n1, p.n2, np.atleast_1d(arr).ravel()).reshape(arr.shape)
    if res.ndim == 0:
        return float(res)
    return res


def ml(n1: float, n2: float, z):
    """Shorthand for ``mittag_leffler(MLParams(n1, n2), z)``."""
    return mittag_leffler(MLParams(n1, n2), z)
