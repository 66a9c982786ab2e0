"""Seeded synthetic fleets and the independent BER oracles.

All randomness comes from the SplitMix64 counter stream in :mod:`.kernels`.
Every random quantity owns a stream whose seed is derived from the fleet
seed and the quantity's position in the hierarchy (see :func:`derive_seed`),
so output never depends on generation order or worker scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import kernels
from .ber import optimal_threshold
from .data_model import ChipKey, CycleRecord, Dataset, FormingRecord
from .stats_core import DegenerateFitError, DomainError, LogNormalFit

# stream tags
_LOT, _WAFER, _CHIP, _PARAMS, _CYCLES, _MC = 1, 2, 3, 4, 5, 6


def derive_seed(seed: int, *path: int) -> int:
    """Child seed: fold each path element through one SplitMix64 step."""
    s = seed & kernels.MASK64
    for k in path:
        s = kernels.mix64((s + (int(k) + 1) * kernels.GAMMA) & kernels.MASK64)
    return s


def gen_lognormal_cycles(fit: LogNormalFit, n: int, seed: int) -> np.ndarray:
    """``exp(mu + sigma * z)`` with z from the seeded normal stream."""
    if n < 1:
        raise DomainError("n must be >= 1")
    z = kernels.normals(seed, 0, n)
    return np.exp(fit.mu + fit.sigma * z)


@dataclass(frozen=True)
class FleetConfig:
    """Synthetic fleet description; every field has a JSON counterpart.

    Resistance parameter ranges are natural-log ohms (``mu``) and log-scale
    SDs (``sigma``); chip fits are drawn uniformly inside them.
    ``defective_chips`` lists ``[lot, wafer, chip]`` indices whose forming
    voltage is overwritten with ``defective_vform``.
    """

    lots: int = 1
    wafers_per_lot: int = 1
    chips_per_wafer: int = 24
    grid_columns: int = 6
    device_size_nm: int = 100
    vform_mean: float = 2.54
    sd_l2l: float = 0.04
    sd_w2w: float = 0.04
    sd_ctc: float = 0.13
    cycles_per_chip: int = 20
    mu_h_range: tuple[float, float] = (12.6, 13.6)
    sigma_h_range: tuple[float, float] = (0.35, 0.6)
    mu_l_range: tuple[float, float] = (8.8, 9.6)
    sigma_l_range: tuple[float, float] = (0.08, 0.2)
    defective_chips: tuple[tuple[int, int, int], ...] = ()
    defective_vform: float = 4.5
    read_voltage_v: float = 0.1
    set_voltage_v: float | None = 1.8
    reset_voltage_v: float | None = -1.5
    compliance_current_ua: float | None = 100.0
    pulse_width_us: float | None = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lots", "wafers_per_lot", "chips_per_wafer", "grid_columns"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cycles_per_chip < 0:
            raise ValueError("cycles_per_chip must be >= 0")
        for name in ("sd_l2l", "sd_w2w", "sd_ctc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("mu_h_range", "sigma_h_range", "mu_l_range", "sigma_l_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} must be (low, high)")
        for lo_s, _ in (self.sigma_h_range, self.sigma_l_range):
            if lo_s < 0:
                raise ValueError("sigma ranges must be >= 0")
        for triple in self.defective_chips:
            lot, wafer, chip = triple
            if not (0 <= lot < self.lots and 0 <= wafer < self.wafers_per_lot
                    and 0 <= chip < self.chips_per_wafer):
                raise ValueError(f"defective chip index {list(triple)} out of range")
        if not (0 <= self.seed <= kernels.MASK64):
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, obj: dict) -> "FleetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        kw = dict(obj)
        for name in ("mu_h_range", "sigma_h_range", "mu_l_range", "sigma_l_range"):
            if name in kw:
                kw[name] = tuple(float(v) for v in kw[name])
        if "defective_chips" in kw:
            kw["defective_chips"] = tuple(tuple(int(v) for v in t) for t in kw["defective_chips"])
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "FleetConfig":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise ValueError("fleet config must be a JSON object")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(t) if isinstance(t, tuple) else t for t in v]
        return d

    def chip_key(self, lot: int, wafer: int, chip: int) -> ChipKey:
        return ChipKey(f"L{lot + 1:02d}", f"W{wafer + 1:02d}",
                       chip % self.grid_columns, chip // self.grid_columns)


def _normal(seed: int, *path: int) -> float:
    return float(kernels.normals(derive_seed(seed, *path), 0, 1)[0])


def _uniform_in(u: float, rng: tuple[float, float]) -> float:
    lo, hi = rng
    return lo + (hi - lo) * u


def chip_fits(cfg: FleetConfig, lot: int, wafer: int, chip: int) -> tuple[LogNormalFit, LogNormalFit]:
    """True (HRS, LRS) fit parameters the generator uses for one chip."""
    u = kernels.uniforms(derive_seed(cfg.seed, _PARAMS, lot, wafer, chip), 0, 4)
    fit_h = LogNormalFit(_uniform_in(u[0], cfg.mu_h_range), _uniform_in(u[1], cfg.sigma_h_range))
    fit_l = LogNormalFit(_uniform_in(u[2], cfg.mu_l_range), _uniform_in(u[3], cfg.sigma_l_range))
    return fit_h, fit_l


def gen_nested_dataset(cfg: FleetConfig) -> Dataset:
    """Forming voltages with nested lot/wafer/chip effects plus per-chip cycles."""
    defective = set(cfg.defective_chips)
    forming = []
    cycles = []
    for lot in range(cfg.lots):
        lot_eff = cfg.sd_l2l * _normal(cfg.seed, _LOT, lot)
        for wafer in range(cfg.wafers_per_lot):
            wafer_eff = cfg.sd_w2w * _normal(cfg.seed, _WAFER, lot, wafer)
            for chip in range(cfg.chips_per_wafer):
                key = cfg.chip_key(lot, wafer, chip)
                base = dict(lot_id=key.lot_id, wafer_id=key.wafer_id, chip_x=key.chip_x,
                            chip_y=key.chip_y, device_id="D0", device_size_nm=cfg.device_size_nm)
                chip_eff = cfg.sd_ctc * _normal(cfg.seed, _CHIP, lot, wafer, chip)
                vform = cfg.vform_mean + lot_eff + wafer_eff + chip_eff
                if (lot, wafer, chip) in defective:
                    vform = cfg.defective_vform
                forming.append(FormingRecord(**base, vform_volt=vform))
                if cfg.cycles_per_chip == 0:
                    continue
                fit_h, fit_l = chip_fits(cfg, lot, wafer, chip)
                r_h = gen_lognormal_cycles(fit_h, cfg.cycles_per_chip,
                                           derive_seed(cfg.seed, _CYCLES, lot, wafer, chip, 0))
                r_l = gen_lognormal_cycles(fit_l, cfg.cycles_per_chip,
                                           derive_seed(cfg.seed, _CYCLES, lot, wafer, chip, 1))
                cond = dict(read_voltage_v=cfg.read_voltage_v)
                for k in range(cfg.cycles_per_chip):
                    # reset -> HRS read, then set -> LRS read, per cycle
                    cycles.append(CycleRecord(**base, cycle_index=k, target_state="HRS",
                                              resistance_ohm=float(r_h[k]),
                                              reset_voltage_v=cfg.reset_voltage_v,
                                              pulse_width_us=cfg.pulse_width_us, **cond))
                    cycles.append(CycleRecord(**base, cycle_index=k, target_state="LRS",
                                              resistance_ohm=float(r_l[k]),
                                              set_voltage_v=cfg.set_voltage_v,
                                              compliance_current_ua=cfg.compliance_current_ua,
                                              pulse_width_us=cfg.pulse_width_us, **cond))
    return Dataset(tuple(forming), tuple(cycles))


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo BER estimate; ``p_hat`` averages the two sides.

    ``std_err`` is ``sqrt(p_hat (1 - p_hat) / n_samples)``; each side also
    carries its own count-based estimate and binomial error.
    """

    p_hat: float
    n_samples: int
    std_err: float
    tail_counts: tuple[int, int]
    seed: int = 0
    threshold: dict = field(default_factory=dict, compare=False)

    @property
    def p_hat_hrs(self) -> float:
        return self.tail_counts[0] / self.n_samples

    @property
    def p_hat_lrs(self) -> float:
        return self.tail_counts[1] / self.n_samples

    def side_std_err(self, p: float) -> float:
        return math.sqrt(p * (1.0 - p) / self.n_samples)

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "p_hat_hrs": self.p_hat_hrs,
            "p_hat_lrs": self.p_hat_lrs,
            "n_samples": self.n_samples,
            "std_err": self.std_err,
            "tail_counts": {"hrs": self.tail_counts[0], "lrs": self.tail_counts[1]},
            "seed": self.seed,
            **self.threshold,
        }


def mc_ber_estimate(fit_h: LogNormalFit, fit_l: LogNormalFit, delta_r: float,
                    n_samples: int, seed: int) -> McEstimate:
    """Count sampled HRS reads below R_H,min and LRS reads above R_L,max."""
    if not (fit_h.sigma > 0.0 and fit_l.sigma > 0.0):
        raise DegenerateFitError("Monte Carlo BER needs sigma > 0 for both states")
    if n_samples < 10_000:
        raise DomainError("n_samples must be >= 1e4")
    ln_rl_max = optimal_threshold(fit_h, fit_l, delta_r)
    ln_rh_min = ln_rl_max + math.log1p(delta_r)
    counts = kernels.tail_counts(
        derive_seed(seed, _MC, 0), derive_seed(seed, _MC, 1), int(n_samples),
        fit_h.mu, fit_h.sigma, ln_rh_min, fit_l.mu, fit_l.sigma, ln_rl_max,
    )
    p_hat = 0.5 * (counts[0] + counts[1]) / n_samples
    return McEstimate(
        p_hat=p_hat,
        n_samples=int(n_samples),
        std_err=math.sqrt(p_hat * (1.0 - p_hat) / n_samples),
        tail_counts=(int(counts[0]), int(counts[1])),
        seed=seed,
        threshold={"delta_r": delta_r, "ln_r_l_max": ln_rl_max, "ln_r_h_min": ln_rh_min},
    )


def quad_normal_tail(z: float) -> float:
    """Upper standard-normal tail by adaptive Simpson quadrature of the density."""
    if not math.isfinite(z):
        raise DomainError("z must be finite")
    return kernels.normal_tail_quad(z)


def fleet_fits(cfg: FleetConfig) -> dict[ChipKey, tuple[LogNormalFit, LogNormalFit]]:
    """True per-chip fits of a configured fleet, keyed by chip."""
    out = {}
    for lot in range(cfg.lots):
        for wafer in range(cfg.wafers_per_lot):
            for chip in range(cfg.chips_per_wafer):
                out[cfg.chip_key(lot, wafer, chip)] = chip_fits(cfg, lot, wafer, chip)
    return out


def random_fit_pairs(n: int, seed: int,
                     mu_l: Sequence[float] = (7.0, 11.0),
                     gap: Sequence[float] = (0.5, 5.0),
                     sigma: Sequence[float] = (0.05, 1.0)) -> list[tuple[LogNormalFit, LogNormalFit]]:
    """Random nondegenerate (HRS, LRS) fit pairs with mu_H above mu_L."""
    u = kernels.uniforms(derive_seed(seed, 7), 0, 4 * n).reshape(n, 4)
    pairs = []
    for a, b, c, d in u.tolist():
        m_l = _uniform_in(a, tuple(mu_l))
        fit_l = LogNormalFit(m_l, _uniform_in(c, tuple(sigma)))
        fit_h = LogNormalFit(m_l + _uniform_in(b, tuple(gap)), _uniform_in(d, tuple(sigma)))
        pairs.append((fit_h, fit_l))
    return pairs
