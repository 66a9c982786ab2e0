"""Special functions and log-normal fitting.

``erf``/``erfc`` come from the platform libm through :mod:`math`; the
extreme upper tail goes through :func:`ln_erfc`, which stays finite long
after ``erfc`` underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammainc

from . import kernels


class StatsError(ValueError):
    """Base class for numeric domain and data-sufficiency errors."""


class DomainError(StatsError):
    pass


class InsufficientDataError(StatsError):
    pass


class DegenerateFitError(StatsError):
    pass


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def erf(x: float) -> float:
    return math.erf(x)


def erfc(x: float) -> float:
    return math.erfc(x)


def ln_erfc(x: float) -> float:
    """``log(erfc(x))``, finite for all finite x."""
    return kernels.ln_erfc(x)


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_sf(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def ln_norm_sf(x: float) -> float:
    """Log of the upper normal tail, ``log(Q(x))``."""
    return kernels.ln_erfc(x / _SQRT2) - math.log(2.0)


def qnorm(p: float) -> float:
    """Standard normal quantile.

    AS241 gives the starting point; one Newton step against the erfc-based
    CDF brings it onto this module's own CDF. The step is taken on whichever
    tail is smaller, so ``p`` near 1 does not lose precision.

    Raises:
        DomainError: if ``p`` is not strictly inside (0, 1).
    """
    if not (0.0 < p < 1.0):
        raise DomainError(f"qnorm needs 0 < p < 1, got {p!r}")
    if p > 0.5:
        # 1 - p is exact for p in (0.5, 1)
        return -_qnorm_lower(1.0 - p)
    return _qnorm_lower(p)


def _qnorm_lower(p: float) -> float:
    x = kernels.ppnd(p)
    dens = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
    if dens == 0.0:
        return x
    return x - (norm_cdf(x) - p) / dens


def chi2_cdf(x: float, df: int) -> float:
    if x <= 0.0:
        return 0.0
    return float(gammainc(0.5 * df, 0.5 * x))


def chi2_quantile(p: float, df: int) -> float:
    """Chi-square quantile: Wilson-Hilferty start, Newton on the incomplete gamma."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"chi2_quantile needs 0 < p < 1, got {p!r}")
    if df < 1 or int(df) != df:
        raise DomainError(f"df must be a positive integer, got {df!r}")
    k = 0.5 * df
    h = 2.0 / (9.0 * df)
    x = df * (1.0 - h + qnorm(p) * math.sqrt(h)) ** 3
    if x <= 0.0:
        # Wilson-Hilferty breaks down deep in the lower tail of small df;
        # invert the leading series term of P(k, x/2) instead.
        x = 2.0 * math.exp((math.log(p) + math.lgamma(k + 1.0)) / k)
    log_norm = math.lgamma(k) + k * math.log(2.0)
    for _ in range(100):
        dens = math.exp((k - 1.0) * math.log(x) - 0.5 * x - log_norm)
        step = (chi2_cdf(x, df) - p) / dens
        new = x - step
        if new <= 0.0:
            new = 0.5 * x
        if abs(new - x) <= 1e-15 * x:
            return new
        x = new
    return x


@dataclass(frozen=True)
class LogNormalFit:
    """Log-normal location/scale for one chip-state population (natural-log ohms)."""

    mu: float
    sigma: float
    n: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0.0):
            raise DomainError(f"sigma must be >= 0, got {self.sigma!r}")

    @property
    def median(self) -> float:
        return math.exp(self.mu)


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float


@dataclass(frozen=True)
class QQDiagnostics:
    points: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r_squared: float

    @property
    def n(self) -> int:
        return len(self.points)


def _log_values(values: Sequence[float], minimum: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < minimum:
        raise InsufficientDataError(f"need at least {minimum} values, got {arr.size}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("all values must be positive and finite")
    return np.log(arr)


def mle_fit(values: Sequence[float]) -> LogNormalFit:
    """Maximum-likelihood log-normal fit (variance divisor n)."""
    logs = _log_values(values, 2)
    mu = float(np.mean(logs))
    sigma = float(np.sqrt(np.mean((logs - mu) ** 2)))
    if sigma == 0.0:
        raise DegenerateFitError("zero spread in log values; sigma = 0")
    return LogNormalFit(mu, sigma, int(logs.size))


def sigma_ci_factors(n: int, level: float = 0.95) -> tuple[float, float]:
    """Multipliers on sigma-hat giving the exact chi-square pivotal interval.

    With the MLE divisor, ``n * sigma_hat**2 / sigma**2 ~ chi2(n - 1)``.
    """
    if n < 2:
        raise InsufficientDataError("sigma interval needs n >= 2")
    if not (0.0 < level < 1.0):
        raise DomainError(f"level must be in (0, 1), got {level!r}")
    upper_q = chi2_quantile(0.5 * (1.0 + level), n - 1)
    lower_q = chi2_quantile(0.5 * (1.0 - level), n - 1)
    return math.sqrt(n / upper_q), math.sqrt(n / lower_q)


def sigma_ci(fit: LogNormalFit, level: float = 0.95) -> ConfidenceInterval:
    if fit.sigma <= 0.0:
        raise DegenerateFitError("sigma interval undefined for sigma = 0")
    lo, hi = sigma_ci_factors(fit.n, level)
    return ConfidenceInterval(fit.sigma * lo, fit.sigma * hi, level)


def qq_diagnostics(values: Sequence[float]) -> QQDiagnostics:
    """Normal Q-Q of log values with plotting positions (i - 0.5)/n and an OLS line."""
    logs = np.sort(_log_values(values, 3))
    n = logs.size
    theo = kernels.ppnd_array((np.arange(1, n + 1) - 0.5) / n)
    tc = theo - theo.mean()
    yc = logs - logs.mean()
    sxx = float(np.dot(tc, tc))
    sxy = float(np.dot(tc, yc))
    syy = float(np.dot(yc, yc))
    slope = sxy / sxx
    intercept = float(logs.mean() - slope * theo.mean())
    r2 = 1.0 if syy == 0.0 else min(1.0, sxy * sxy / (sxx * syy))
    points = tuple(zip(theo.tolist(), logs.tolist()))
    return QQDiagnostics(points, slope, intercept, r2)
