"""Lot / wafer / chip variance components by nested ANOVA moments.

Model: ``y_ijk = m + lot_i + wafer_ij + chip_ijk`` with independent normal
effects. Chips are the lowest level; replicate measurements on one chip are
averaged first. The expected-mean-square coefficients are the usual
unbalanced ones (Searle, Casella & McCulloch 1992, ch. 3):

    E[MS_chip]  = s_c^2
    E[MS_wafer] = s_c^2 + k1 s_w^2
    E[MS_lot]   = s_c^2 + k2 s_w^2 + k3 s_l^2

Negative solutions are clipped to zero after solving and reported in
``clipped``. A level with no degrees of freedom is not estimable and is
reported as ``None``; its variance then stays in the level above it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .stats_core import DomainError, InsufficientDataError


@dataclass(frozen=True)
class VarianceComponents:
    group_label: str
    mean: float
    sd_ctc: float | None
    sd_w2w: float | None
    sd_l2l: float | None
    sd_total: float
    counts: tuple[int, int, int]
    clipped: tuple[str, ...] = ()
    replicates_averaged: int = 0
    mean_squares: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_components(cls, mean: float, sd_ctc: float, sd_w2w: float, sd_l2l: float,
                        group_label: str = "", counts: tuple[int, int, int] = (0, 0, 0)):
        """Build from known component SDs; the total is their root sum of squares."""
        total = math.sqrt(sum(s * s for s in (sd_ctc, sd_w2w, sd_l2l) if s is not None))
        return cls(group_label, mean, sd_ctc, sd_w2w, sd_l2l, total, counts)

    def as_row(self) -> dict:
        return {
            "group": self.group_label,
            "mean": self.mean,
            "sd_ctc": self.sd_ctc,
            "sd_w2w": self.sd_w2w,
            "sd_l2l": self.sd_l2l,
            "sd_total": self.sd_total,
            "cov": coefficient_of_variation(self) if self.mean != 0.0 else None,
            "lots": self.counts[0],
            "wafers": self.counts[1],
            "chips": self.counts[2],
            "clipped": list(self.clipped),
        }


def coefficient_of_variation(vc: VarianceComponents) -> float:
    if vc.mean == 0.0:
        raise DomainError("coefficient of variation undefined for zero mean")
    return vc.sd_total / vc.mean


def ems_coefficients(sizes: list[list[int]]) -> tuple[float, float, float]:
    """(k1, k2, k3) for chip counts ``sizes[lot][wafer]``; NaN where a level has no df."""
    a = len(sizes)
    b = sum(len(ws) for ws in sizes)
    n = sum(sum(ws) for ws in sizes)
    n_i = [sum(ws) for ws in sizes]
    s_ij2_over_ni = sum(nij * nij / ni for ws, ni in zip(sizes, n_i) for nij in ws)
    s_ij2 = sum(nij * nij for ws in sizes for nij in ws)
    k1 = (n - s_ij2_over_ni) / (b - a) if b > a else math.nan
    k2 = (s_ij2_over_ni - s_ij2 / n) / (a - 1) if a > 1 else math.nan
    k3 = (n - sum(x * x for x in n_i) / n) / (a - 1) if a > 1 else math.nan
    return k1, k2, k3


def variance_components(observations: Iterable[tuple[Hashable, Hashable, Hashable, float]],
                        group_label: str = "") -> VarianceComponents:
    """Estimate SD_ctc, SD_w2w and SD_l2l from (lot, wafer, chip, value) rows."""
    chips: dict[tuple, list[float]] = {}
    for lot, wafer, chip, value in observations:
        value = float(value)
        if not math.isfinite(value):
            raise DomainError(f"non-finite observation {value!r}")
        chips.setdefault((lot, wafer, chip), []).append(value)
    if not chips:
        raise InsufficientDataError("no observations")
    replicates = sum(len(v) - 1 for v in chips.values())

    # lot -> wafer -> chip means, in sorted order for deterministic summation
    tree: dict[Hashable, dict[Hashable, list[float]]] = {}
    for (lot, wafer, _), vals in sorted(chips.items(), key=lambda kv: repr(kv[0])):
        tree.setdefault(lot, {}).setdefault(wafer, []).append(math.fsum(vals) / len(vals))

    lots = [[np.asarray(w, dtype=np.float64) for w in wafers.values()] for wafers in tree.values()]
    a = len(lots)
    b = sum(len(ws) for ws in lots)
    n_total = sum(w.size for ws in lots for w in ws)
    y_all = np.concatenate([w for ws in lots for w in ws])
    grand = float(y_all.mean())

    n_i = np.array([sum(w.size for w in ws) for ws in lots], dtype=np.float64)
    lot_means = np.array([np.concatenate(ws).mean() for ws in lots])
    ss_lot = float(np.sum(n_i * (lot_means - grand) ** 2))
    ss_wafer = 0.0
    ss_chip = 0.0
    for ws, m_i in zip(lots, lot_means):
        for w in ws:
            wm = w.mean()
            ss_wafer += w.size * (wm - m_i) ** 2
            ss_chip += float(np.sum((w - wm) ** 2))
    k1, k2, k3 = ems_coefficients([[w.size for w in ws] for ws in lots])

    df_lot, df_wafer, df_chip = a - 1, b - a, n_total - b
    ms = {}
    clipped = []

    var_c = None
    if df_chip > 0:
        ms["chip"] = ss_chip / df_chip
        var_c = ms["chip"]
    var_w = None
    raw_w = 0.0
    if df_wafer > 0:
        ms["wafer"] = ss_wafer / df_wafer
        raw_w = (ms["wafer"] - (var_c or 0.0)) / k1
        var_w = raw_w
    var_l = None
    if df_lot > 0:
        ms["lot"] = ss_lot / df_lot
        var_l = (ms["lot"] - (var_c or 0.0) - (k2 * raw_w if var_w is not None else 0.0)) / k3

    def clip(name, v):
        if v is None:
            return None
        if v < 0.0:
            clipped.append(name)
            return 0.0
        return v

    var_c = clip("ctc", var_c)
    var_w = clip("w2w", var_w)
    var_l = clip("l2l", var_l)
    parts = [v for v in (var_c, var_w, var_l) if v is not None]
    sd = lambda v: None if v is None else math.sqrt(v)  # noqa: E731
    return VarianceComponents(
        group_label=group_label,
        mean=grand,
        sd_ctc=sd(var_c),
        sd_w2w=sd(var_w),
        sd_l2l=sd(var_l),
        sd_total=math.sqrt(sum(parts)),
        counts=(a, b, n_total),
        clipped=tuple(clipped),
        replicates_averaged=replicates,
        mean_squares=ms,
    )
