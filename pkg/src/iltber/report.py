"""Pipeline stages and report emitters (JSON, CSV, text and SVG wafer maps).

Numbers in JSON and CSV are written with 17 significant digits so they
round-trip exactly; SVG labels use 4. Every emitter orders its output by
chip key, so the bytes do not depend on how per-chip work was scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence
from xml.sax.saxutils import escape

from . import __version__, kernels
from .ber import (
    BerCurve,
    HistogramBin,
    ber_at_margin,
    ber_curve,
    ber_histogram,
    chip_percentiles,
)
from .data_model import ChipKey, Dataset, Rejections, split_states
from .stats_core import (
    ConfidenceInterval,
    LogNormalFit,
    QQDiagnostics,
    StatsError,
    mle_fit,
    qq_diagnostics,
    sigma_ci,
)

NOT_ESTIMABLE = "n/e"


class InsufficientData(Exception):
    """Nothing left to analyse (CLI exit code 3)."""


# --- number formatting -----------------------------------------------------

def fmt_num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if x == 0.0:
        return "0"
    return format(x, ".17g")


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with 17-significant-digit floats and stable key order as given."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt_num(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {to_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt_num(v) for v in row])
    return buf.getvalue()


# --- fitting ---------------------------------------------------------------

@dataclass(frozen=True)
class ChipFit:
    chip: ChipKey
    fit_h: LogNormalFit
    fit_l: LogNormalFit
    ci_h: ConfidenceInterval
    ci_l: ConfidenceInterval
    qq_h: QQDiagnostics | None
    qq_l: QQDiagnostics | None


def _fit_one(d: Dataset, chip: ChipKey, min_cycles: int, level: float):
    series = split_states(d, chip)
    short = [f"{state}: {len(vals)} cycles < {min_cycles}"
             for state, vals in (("HRS", series.r_h), ("LRS", series.r_l))
             if len(vals) < max(min_cycles, 2)]
    if short:
        return chip, "; ".join(short)
    try:
        fit_h = mle_fit(series.r_h)
        fit_l = mle_fit(series.r_l)
        qq_h = qq_diagnostics(series.r_h) if len(series.r_h) >= 3 else None
        qq_l = qq_diagnostics(series.r_l) if len(series.r_l) >= 3 else None
        return ChipFit(chip, fit_h, fit_l, sigma_ci(fit_h, level), sigma_ci(fit_l, level), qq_h, qq_l)
    except StatsError as exc:
        return chip, str(exc)


def fit_chips(d: Dataset, min_cycles: int = 10, level: float = 0.95,
              jobs: int = 1) -> tuple[list[ChipFit], list[tuple[ChipKey, str]]]:
    """Fit every chip with cycle data; chips below ``min_cycles`` per state are skipped."""
    chips = d.cycle_chips()
    work: Callable = lambda c: _fit_one(d, c, min_cycles, level)  # noqa: E731
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, chips))
    else:
        results = [work(c) for c in chips]
    fits = [r for r in results if isinstance(r, ChipFit)]
    skipped = [r for r in results if not isinstance(r, ChipFit)]
    return fits, skipped


def fit_report(fits: Sequence[ChipFit], skipped, rejected: Rejections | None = None) -> dict:
    entries = []
    for f in fits:
        for state, fit, ci, qq in (("HRS", f.fit_h, f.ci_h, f.qq_h), ("LRS", f.fit_l, f.ci_l, f.qq_l)):
            entries.append({
                "chip": f.chip.label(),
                "state": state,
                "mu": fit.mu,
                "sigma": fit.sigma,
                "n": fit.n,
                "sigma_ci": [ci.lower, ci.upper],
                "ci_level": ci.level,
                "qq_r_squared": qq.r_squared if qq else None,
                "qq_slope": qq.slope if qq else None,
                "qq_intercept": qq.intercept if qq else None,
            })
    out = {"fits": entries, "skipped": [{"chip": c.label(), "reason": r} for c, r in skipped]}
    if rejected is not None:
        out["rejected"] = [{"chip": c.label(), "reason": f"vform {fmt_num(rejected.max_vform[c])} V > "
                                                          f"{fmt_num(rejected.threshold)} V"}
                           for c in rejected.chips]
        out["unscreened"] = [c.label() for c in rejected.unscreened]
    return out


def fit_csv(fits: Sequence[ChipFit]) -> str:
    rows = []
    for f in fits:
        for state, fit, ci, qq in (("HRS", f.fit_h, f.ci_h, f.qq_h), ("LRS", f.fit_l, f.ci_l, f.qq_l)):
            rows.append([f.chip.label(), state, fit.mu, fit.sigma, fit.n, ci.lower, ci.upper,
                         qq.r_squared if qq else None])
    return to_csv(["chip", "state", "mu", "sigma", "n", "sigma_ci_lower", "sigma_ci_upper",
                   "qq_r_squared"], rows)


def qq_report(fits: Sequence[ChipFit]) -> dict:
    out = {}
    for f in fits:
        for state, qq in (("HRS", f.qq_h), ("LRS", f.qq_l)):
            if qq is None:
                continue
            out[f"{f.chip.label()}|{state}"] = {
                "slope": qq.slope, "intercept": qq.intercept, "r_squared": qq.r_squared,
                "theoretical": [p[0] for p in qq.points],
                "ln_resistance": [p[1] for p in qq.points],
            }
    return out


# --- BER -------------------------------------------------------------------

@dataclass(frozen=True)
class BerAnalysis:
    reference_margin: float
    margins: tuple[float, ...]
    curves: tuple[BerCurve, ...]
    reference: tuple[tuple[ChipKey, float], ...]
    histogram: tuple[HistogramBin, ...]
    percentiles: tuple[ChipKey, ChipKey, ChipKey]


def analyze_ber(fits: Sequence[ChipFit], margins: Sequence[float], reference_margin: float = 1.0,
                bin_width: float = 1.0, jobs: int = 1) -> BerAnalysis:
    if not fits:
        raise InsufficientData("no fitted chips")
    margins = tuple(float(m) for m in margins)
    work = lambda f: (ber_curve(f.fit_h, f.fit_l, margins, chip=f.chip),  # noqa: E731
                      ber_at_margin(f.fit_h, f.fit_l, reference_margin))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, fits))
    else:
        results = [work(f) for f in fits]
    curves = tuple(r[0] for r in results)
    reference = tuple((f.chip, r[1].log10_ber) for f, r in zip(fits, results))
    ref_curves = [(f.chip, ber_curve(f.fit_h, f.fit_l, [reference_margin], chip=f.chip)) for f in fits]
    pct = chip_percentiles(ref_curves, reference_margin)
    hist = tuple(ber_histogram(list(reference), bin_width))
    return BerAnalysis(reference_margin, margins, curves, reference, hist, pct)


PERCENTILE_LABELS = ("p25", "median", "p75")


def ber_report(a: BerAnalysis, include_percentiles: bool = True) -> dict:
    by_chip = {c.chip: c for c in a.curves}
    out = {
        "reference_margin": a.reference_margin,
        "margins": list(a.margins),
        "chips": [{"chip": c.chip.label(),
                   "log10_ber_at_reference": ref,
                   "log10_ber": by_chip[c.chip].log10_bers}
                  for c, ref in zip(a.curves, (r for _, r in a.reference))],
        "histogram": [{"lower": b.lower, "upper": b.upper, "count": b.count,
                       "cumulative_pct": b.cumulative_pct} for b in a.histogram],
    }
    if include_percentiles:
        out["percentiles"] = [{"label": label, "chip": chip.label(),
                               "log10_ber": by_chip[chip].log10_bers}
                              for label, chip in zip(PERCENTILE_LABELS, a.percentiles)]
    return out


def ber_curves_csv(a: BerAnalysis) -> str:
    rows = []
    labels = {chip: label for label, chip in zip(PERCENTILE_LABELS, a.percentiles)}
    for c in a.curves:
        tag = labels.get(c.chip, "")
        for p in c.points:
            rows.append([c.chip.label(), tag, p.delta_r, p.log10_ber, p.ber, p.ln_r_l_max, p.ln_r_h_min])
    return to_csv(["chip", "percentile", "delta_r", "log10_ber", "ber", "ln_r_l_max", "ln_r_h_min"], rows)


def percentile_curves_csv(a: BerAnalysis) -> str:
    by_chip = {c.chip: c for c in a.curves}
    rows = []
    for label, chip in zip(PERCENTILE_LABELS, a.percentiles):
        for p in by_chip[chip].points:
            rows.append([label, chip.label(), p.delta_r, p.log10_ber])
    return to_csv(["percentile", "chip", "delta_r", "log10_ber"], rows)


def histogram_csv(bins: Sequence[HistogramBin]) -> str:
    return to_csv(["log10_ber_lower", "log10_ber_upper", "count", "cumulative_pct"],
                  [[b.lower, b.upper, b.count, b.cumulative_pct] for b in bins])


# --- variance components ---------------------------------------------------

VARCOMP_COLUMNS = ("group", "mean", "sd_ctc", "sd_w2w", "sd_l2l", "sd_total", "cov",
                   "lots", "wafers", "chips")


def varcomp_rows(vcs) -> list[dict]:
    rows = []
    for vc in vcs:
        row = vc.as_row()
        rows.append({k: (NOT_ESTIMABLE if row[k] is None and k.startswith("sd_") else row[k])
                     for k in VARCOMP_COLUMNS} | {"clipped": row["clipped"]})
    return rows


def varcomp_csv(vcs) -> str:
    return to_csv(VARCOMP_COLUMNS, [[r[k] for k in VARCOMP_COLUMNS] for r in varcomp_rows(vcs)])


# --- wafer maps ------------------------------------------------------------

@dataclass(frozen=True)
class WaferCell:
    chip_x: int
    chip_y: int
    value: float | None
    status: str = "ok"          # ok | defective | absent
    reason: str = ""


@dataclass(frozen=True)
class WaferMap:
    metric: str
    lot_id: str
    wafer_id: str
    cells: tuple[WaferCell, ...]

    def __post_init__(self):
        seen = set()
        for c in self.cells:
            if (c.chip_x, c.chip_y) in seen:
                raise ValueError(f"two cells at ({c.chip_x},{c.chip_y})")
            seen.add((c.chip_x, c.chip_y))

    @property
    def value_range(self) -> tuple[float, float] | None:
        vals = [c.value for c in self.cells if c.status == "ok" and c.value is not None]
        return (min(vals), max(vals)) if vals else None

    def cell_at(self, x: int, y: int) -> WaferCell | None:
        for c in self.cells:
            if (c.chip_x, c.chip_y) == (x, y):
                return c
        return None


def vform_map(d: Dataset, rejected: Rejections, lot_id: str, wafer_id: str) -> WaferMap:
    cells = []
    for chip, recs in sorted(d.forming_by_chip().items()):
        if (chip.lot_id, chip.wafer_id) != (lot_id, wafer_id):
            continue
        v = max(r.vform_volt for r in recs)
        if chip in rejected:
            cells.append(WaferCell(chip.chip_x, chip.chip_y, v, "defective",
                                   f"vform > {fmt_num(rejected.threshold)} V"))
        else:
            cells.append(WaferCell(chip.chip_x, chip.chip_y, v))
    return WaferMap("vform", lot_id, wafer_id, tuple(cells))


def ber_map(chips: Iterable[ChipKey], reference: Sequence[tuple[ChipKey, float]],
            rejected: Rejections, skipped, lot_id: str, wafer_id: str, margin: float) -> WaferMap:
    values = dict(reference)
    why = dict(skipped)
    cells = []
    for chip in sorted(set(chips) | set(rejected.chips)):
        if (chip.lot_id, chip.wafer_id) != (lot_id, wafer_id):
            continue
        if chip in rejected:
            cells.append(WaferCell(chip.chip_x, chip.chip_y, None, "defective",
                                   f"vform > {fmt_num(rejected.threshold)} V"))
        elif chip in values:
            cells.append(WaferCell(chip.chip_x, chip.chip_y, values[chip]))
        else:
            cells.append(WaferCell(chip.chip_x, chip.chip_y, None, "absent", why.get(chip, "no data")))
    return WaferMap(f"log10_ber@{fmt_num(margin)}", lot_id, wafer_id, tuple(cells))


def _label(v: float) -> str:
    return format(v, ".4g")


def _extent(m: WaferMap):
    xs = [c.chip_x for c in m.cells]
    ys = [c.chip_y for c in m.cells]
    return min(xs), max(xs), min(ys), max(ys)


def wafermap_text(m: WaferMap, width: int = 10) -> str:
    """Fixed-width grid, x to the right and y upward (top row is the largest y)."""
    if not m.cells:
        raise InsufficientData("empty wafer map")
    x0, x1, y0, y1 = _extent(m)
    lines = [f"# {m.metric} {m.lot_id}/{m.wafer_id}  (x right, y up; X defective, . no data)"]
    lines.append("y\\x".rjust(5) + "".join(str(x).rjust(width) for x in range(x0, x1 + 1)))
    for y in range(y1, y0 - 1, -1):
        row = [str(y).rjust(5)]
        for x in range(x0, x1 + 1):
            c = m.cell_at(x, y)
            if c is None or c.status == "absent":
                tok = "."
            elif c.status == "defective":
                tok = "X"
            else:
                tok = _label(c.value)
            row.append(tok.rjust(width))
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def wafermap_csv(m: WaferMap) -> str:
    return to_csv(["chip_x", "chip_y", "value", "status", "reason"],
                  [[c.chip_x, c.chip_y, c.value, c.status, c.reason]
                   for c in sorted(m.cells, key=lambda c: (c.chip_y, c.chip_x))])


# blue -> pale yellow -> red, interpolated linearly in sRGB
RAMP = ((0.0, (44, 123, 182)), (0.5, (255, 255, 191)), (1.0, (215, 25, 28)))
DEFECT_FILL = "#9e9e9e"
ABSENT_FILL = "#ffffff"


def ramp_color(t: float) -> str:
    t = min(1.0, max(0.0, t))
    for (t0, c0), (t1, c1) in zip(RAMP, RAMP[1:]):
        if t <= t1:
            f = (t - t0) / (t1 - t0)
            rgb = [round(a + (b - a) * f) for a, b in zip(c0, c1)]
            return "#{:02x}{:02x}{:02x}".format(*rgb)
    return "#{:02x}{:02x}{:02x}".format(*RAMP[-1][1])


def wafermap_svg(m: WaferMap, cell: int = 56) -> str:
    """SVG wafer map with a linear color ramp, legend, and crossed defective cells."""
    if not m.cells:
        raise InsufficientData("empty wafer map")
    x0, x1, y0, y1 = _extent(m)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    margin = 40
    legend_w = 90
    w = margin + nx * cell + legend_w
    h = margin + ny * cell + 30
    rng = m.value_range
    lo, hi = rng if rng else (0.0, 0.0)
    span = hi - lo
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(m.metric)} {escape(m.lot_id)}/{escape(m.wafer_id)}</title>',
        f'<text x="{margin}" y="16" font-size="13">{escape(m.metric)} '
        f'{escape(m.lot_id)}/{escape(m.wafer_id)}</text>',
    ]
    for x in range(x0, x1 + 1):
        out.append(f'<text x="{margin + (x - x0) * cell + cell // 2}" y="{margin - 6}" '
                   f'text-anchor="middle">{x}</text>')
    for y in range(y0, y1 + 1):
        out.append(f'<text x="{margin - 6}" y="{margin + (y1 - y) * cell + cell // 2 + 4}" '
                   f'text-anchor="end">{y}</text>')
    for c in sorted(m.cells, key=lambda c: (-c.chip_y, c.chip_x)):
        px = margin + (c.chip_x - x0) * cell
        py = margin + (y1 - c.chip_y) * cell
        attrs = (f'data-x="{c.chip_x}" data-y="{c.chip_y}" data-status="{c.status}" '
                 f'data-value="{fmt_num(c.value)}"')
        if c.status == "ok":
            fill = ramp_color(0.5 if span == 0 else (c.value - lo) / span)
            label = _label(c.value)
        elif c.status == "defective":
            fill = DEFECT_FILL
            label = "X"
        else:
            fill = ABSENT_FILL
            label = "."
        out.append(f'<g class="cell" {attrs}>')
        tip = escape(c.reason) if c.reason else label
        out.append(f'<rect x="{px}" y="{py}" width="{cell}" height="{cell}" fill="{fill}" '
                   f'stroke="#333333" stroke-width="1"><title>{tip}</title></rect>')
        if c.status == "defective":
            out.append(f'<path d="M{px + 6},{py + 6}L{px + cell - 6},{py + cell - 6}'
                       f'M{px + cell - 6},{py + 6}L{px + 6},{py + cell - 6}" '
                       f'stroke="#000000" stroke-width="2"/>')
        out.append(f'<text class="label" x="{px + cell // 2}" y="{py + cell // 2 + 4}" '
                   f'text-anchor="middle">{label}</text>')
        out.append("</g>")
    # legend: vertical gradient, high value on top
    lx = margin + nx * cell + 24
    ly = margin
    lh = ny * cell
    out.append('<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">')
    for t, _ in RAMP:
        out.append(f'<stop offset="{t:g}" stop-color="{ramp_color(t)}"/>')
    out.append("</linearGradient></defs>")
    out.append(f'<rect x="{lx}" y="{ly}" width="16" height="{lh}" fill="url(#ramp)" stroke="#333333"/>')
    out.append(f'<text class="legend-max" x="{lx + 20}" y="{ly + 10}">{_label(hi)}</text>')
    out.append(f'<text class="legend-min" x="{lx + 20}" y="{ly + lh}">{_label(lo)}</text>')
    out.append(f'<rect x="{lx}" y="{ly + lh + 8}" width="16" height="12" fill="{DEFECT_FILL}" stroke="#333333"/>')
    out.append(f'<text x="{lx + 20}" y="{ly + lh + 18}">defective</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_wafermap(m: WaferMap, fmt: str) -> str:
    if fmt == "text":
        return wafermap_text(m)
    if fmt == "csv":
        return wafermap_csv(m)
    if fmt == "svg":
        return wafermap_svg(m)
    raise ValueError(f"unknown wafer map format {fmt!r}")


# --- manifest --------------------------------------------------------------

def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def run_manifest(inputs: Sequence[str], parameters: dict, outputs: dict[str, bytes] | None = None,
                 seeds: Sequence[int] = ()) -> dict:
    """Run manifest. ``timestamp`` comes from SOURCE_DATE_EPOCH when set, else null,
    so reruns stay byte-identical."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    return {
        "tool": "iltber",
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "inputs": [{"name": os.path.basename(p), "sha256": sha256_file(p)} for p in inputs],
        "seeds": list(seeds),
        "parameters": parameters,
        "timestamp": int(epoch) if epoch and epoch.isdigit() else None,
        "outputs": {name: sha256_bytes(data) for name, data in sorted((outputs or {}).items())},
    }
