"""Bit-error rate versus design margin for a pair of log-normal state fits.

The design margin is ``delta_r = (R_H,min - R_L,max) / R_L,max``. The read
threshold pair is placed where the two failure probabilities are equal,
``P(R_H <= R_H,min) = P(R_L >= R_L,max)``, which for log-normal states gives

    ln R_L,max = (s_H mu_L + s_L mu_H - s_L ln(1 + delta_r)) / (s_H + s_L)

and ``BER = erfc((ln R_L,max - mu_L) / (s_L sqrt 2)) / 2``.

BER is carried as ``log10_ber``; the linear ``ber`` field flushes to 0 once
it underflows a double.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .stats_core import (
    DegenerateFitError,
    DomainError,
    LogNormalFit,
    ln_erfc,
    qnorm,
)

_SQRT2 = math.sqrt(2.0)
_LN2 = math.log(2.0)
_LN10 = math.log(10.0)


@dataclass(frozen=True)
class BerPoint:
    delta_r: float
    ln_r_l_max: float
    ln_r_h_min: float
    log10_ber: float
    ber: float


@dataclass(frozen=True)
class BerCurve:
    chip: Hashable
    fit_h: LogNormalFit
    fit_l: LogNormalFit
    points: tuple[BerPoint, ...]

    def at(self, delta_r: float) -> BerPoint:
        for p in self.points:
            if p.delta_r == delta_r:
                return p
        raise KeyError(f"margin {delta_r!r} not on curve")

    @property
    def margins(self) -> list[float]:
        return [p.delta_r for p in self.points]

    @property
    def log10_bers(self) -> list[float]:
        return [p.log10_ber for p in self.points]


def _check(fit_h: LogNormalFit, fit_l: LogNormalFit, delta_r: float) -> None:
    if not (fit_h.sigma > 0.0 and fit_l.sigma > 0.0):
        raise DegenerateFitError("BER needs sigma > 0 for both states")
    if not (delta_r > -1.0) or not math.isfinite(delta_r):
        raise DomainError(f"design margin must be finite and > -1, got {delta_r!r}")


def optimal_threshold(fit_h: LogNormalFit, fit_l: LogNormalFit, delta_r: float) -> float:
    """ln R_L,max that equalizes the HRS and LRS failure probabilities."""
    _check(fit_h, fit_l, delta_r)
    sh, sl = fit_h.sigma, fit_l.sigma
    return (sh * fit_l.mu + sl * fit_h.mu - sl * math.log1p(delta_r)) / (sh + sl)


def ber_at_margin(fit_h: LogNormalFit, fit_l: LogNormalFit, delta_r: float) -> BerPoint:
    ln_rl_max = optimal_threshold(fit_h, fit_l, delta_r)
    z = (ln_rl_max - fit_l.mu) / fit_l.sigma
    ln_ber = ln_erfc(z / _SQRT2) - _LN2
    return BerPoint(
        delta_r=delta_r,
        ln_r_l_max=ln_rl_max,
        ln_r_h_min=ln_rl_max + math.log1p(delta_r),
        log10_ber=ln_ber / _LN10,
        ber=math.exp(ln_ber),
    )


def tail_log_probs(fit_h: LogNormalFit, fit_l: LogNormalFit, point: BerPoint) -> tuple[float, float]:
    """Natural-log failure probabilities (HRS side, LRS side) at a BerPoint."""
    z_h = (fit_h.mu - point.ln_r_h_min) / fit_h.sigma
    z_l = (point.ln_r_l_max - fit_l.mu) / fit_l.sigma
    return ln_erfc(z_h / _SQRT2) - _LN2, ln_erfc(z_l / _SQRT2) - _LN2


def ber_curve(fit_h: LogNormalFit, fit_l: LogNormalFit, margins: Sequence[float],
              chip: Hashable = None) -> BerCurve:
    margins = [float(m) for m in margins]
    if any(b <= a for a, b in zip(margins, margins[1:])):
        raise DomainError("margins must be strictly increasing")
    points = tuple(ber_at_margin(fit_h, fit_l, m) for m in margins)
    return BerCurve(chip, fit_h, fit_l, points)


def margin_grid(lo: float = 0.1, hi: float = 10.0, points: int = 50) -> list[float]:
    """Logarithmically spaced design margins, endpoints included exactly."""
    if points < 1:
        raise DomainError("grid needs at least one point")
    if points == 1:
        return [float(lo)]
    if lo <= 0.0:
        return [float(v) for v in np.linspace(lo, hi, points)]
    grid = [float(v) for v in np.geomspace(lo, hi, points)]
    grid[0], grid[-1] = float(lo), float(hi)
    return grid


def margin_for_ber(fit_h: LogNormalFit, fit_l: LogNormalFit, target_ber: float) -> float:
    """Design margin at which the BER equals ``target_ber``.

    Closed form: ``ln(1 + delta_r) = (mu_H - mu_L) + (s_H + s_L) * qnorm(target)``.
    """
    if not (0.0 < target_ber < 0.5):
        raise DomainError(f"target BER must be in (0, 0.5), got {target_ber!r}")
    _check(fit_h, fit_l, 0.0)
    ln_ratio = (fit_h.mu - fit_l.mu) + (fit_h.sigma + fit_l.sigma) * qnorm(target_ber)
    return math.expm1(ln_ratio)


def _nearest_rank(p: float, n: int) -> int:
    return max(1, math.ceil(p * n - 1e-12))


def chip_percentiles(chips: Sequence[tuple[Hashable, BerCurve]],
                     reference_margin: float = 1.0) -> tuple[Hashable, Hashable, Hashable]:
    """(p25, median, p75) chips by log10 BER at the reference margin.

    Nearest-rank percentiles on a 1-based ascending ranking; equal BERs are
    ordered by chip key.
    """
    if not chips:
        raise DomainError("no chips to rank")
    ranked = sorted(((curve.at(reference_margin).log10_ber, key) for key, curve in chips))
    n = len(ranked)
    return tuple(ranked[_nearest_rank(p, n) - 1][1] for p in (0.25, 0.5, 0.75))


@dataclass(frozen=True)
class HistogramBin:
    lower: float
    upper: float
    count: int
    cumulative_pct: float


def ber_histogram(values: Sequence[tuple[Hashable, float]], bin_width: float) -> list[HistogramBin]:
    """Histogram of log10 BERs on bins ``[k*w, (k+1)*w)`` with cumulative percent.

    Empty bins between the lowest and highest occupied bin are kept so the
    cumulative column is a proper step function.
    """
    if not (bin_width > 0.0) or not math.isfinite(bin_width):
        raise DomainError(f"bin width must be positive, got {bin_width!r}")
    if not values:
        raise DomainError("no chips to histogram")
    idx = [math.floor(v / bin_width) for _, v in values]
    lo, hi = min(idx), max(idx)
    counts = [0] * (hi - lo + 1)
    for k in idx:
        counts[k - lo] += 1
    n = len(idx)
    out = []
    running = 0
    for j, c in enumerate(counts):
        running += c
        k = lo + j
        out.append(HistogramBin(k * bin_width, (k + 1) * bin_width, c, 100.0 * running / n))
    return out
