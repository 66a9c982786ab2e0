"""``iltber`` command line.

Exit codes: 0 success, 1 usage, 2 parse error, 3 insufficient data.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import shutil
import sys
import tempfile

from . import __version__, report
from .ber import ber_at_margin, margin_grid
from .data_model import (
    Dataset,
    ParseError,
    filter_defective,
    forming_observations,
    read_dataset,
    write_dataset,
)
from .report import InsufficientData, to_json
from .stats_core import InsufficientDataError, LogNormalFit, StatsError
from .synth import FleetConfig, gen_nested_dataset, mc_ber_estimate, quad_normal_tail
from .varcomp import variance_components

log = logging.getLogger("iltber")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _margin(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > -1.0) or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"design margin must be > -1, got {text}")
    return v


def _grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected min:max:points")
    lo, hi = _margin(parts[0]), _margin(parts[1])
    try:
        n = int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"points must be an integer, got {parts[2]!r}") from None
    if n < 1 or (n > 1 and hi <= lo):
        raise argparse.ArgumentTypeError("need points >= 1 and max > min")
    return margin_grid(lo, hi, n)


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load(path: str) -> Dataset:
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")
    return read_dataset(path)


def _screen(d: Dataset, vform_max: float):
    kept, rejected = filter_defective(d, vform_max)
    for chip in rejected:
        log.info("rejected %s (vform %.4g V)", chip.label(), rejected.max_vform[chip])
    return kept, rejected


def _fits(args, d):
    kept, rejected = _screen(d, args.vform_max)
    fits, skipped = report.fit_chips(kept, args.min_cycles, args.level, args.jobs)
    if not fits:
        raise InsufficientData("no chip has enough cycles in both states to fit")
    return kept, rejected, fits, skipped


# --- commands --------------------------------------------------------------

def cmd_fit(args) -> int:
    d = _load(args.input)
    _, rejected, fits, skipped = _fits(args, d)
    if args.format == "csv":
        _emit(report.fit_csv(fits), args.out)
    else:
        _emit(to_json(report.fit_report(fits, skipped, rejected)) + "\n", args.out)
    return EXIT_OK


def cmd_ber(args) -> int:
    d = _load(args.input)
    _, rejected, fits, skipped = _fits(args, d)
    margins = args.margins or margin_grid()
    a = report.analyze_ber(fits, margins, args.margin, args.bin_width, args.jobs)
    if args.format == "csv":
        _emit(report.ber_curves_csv(a), args.out)
    else:
        body = report.ber_report(a, include_percentiles=args.percentiles)
        body["skipped"] = [{"chip": c.label(), "reason": r} for c, r in skipped]
        body["rejected"] = [c.label() for c in rejected]
        _emit(to_json(body) + "\n", args.out)
    return EXIT_OK


def cmd_varcomp(args) -> int:
    if args.param != "vform":
        raise UsageError(f"unsupported parameter {args.param!r}; only 'vform' is recorded")
    d = _load(args.input)
    if args.vform_max is not None:
        d, _ = _screen(d, args.vform_max)
    if not d.forming:
        raise InsufficientData("no forming records")
    if args.group_by == "device_size":
        groups = [(f"{s}nm", forming_observations(d, s)) for s in sorted({r.device_size_nm for r in d.forming})]
    else:
        groups = [("all", forming_observations(d))]
    vcs = [variance_components(obs, label) for label, obs in groups]
    if args.format == "csv":
        _emit(report.varcomp_csv(vcs), args.out)
    else:
        _emit(to_json({"param": args.param, "rows": report.varcomp_rows(vcs)}) + "\n", args.out)
    return EXIT_OK


def _pick_wafer(d: Dataset, wafer: str | None) -> tuple[str, str]:
    pairs = [(lot, w) for lot, wafers in d.index.items() for w in wafers]
    if not pairs:
        raise InsufficientData("empty wafer")
    if wafer is None:
        if len(pairs) > 1:
            log.warning("%d wafers present; mapping %s/%s (use --wafer)", len(pairs), *pairs[0])
        return pairs[0]
    try:
        lot, w = wafer.split("/")
    except ValueError:
        raise UsageError("--wafer expects LOT/WAFER") from None
    if (lot, w) not in pairs:
        raise InsufficientData(f"wafer {wafer} not in input")
    return lot, w


def build_wafermap(d: Dataset, metric: str, margin: float, vform_max: float, min_cycles: int,
                   wafer: str | None = None, jobs: int = 1) -> report.WaferMap:
    lot, w = _pick_wafer(d, wafer)
    kept, rejected = _screen(d, vform_max)
    if metric == "vform":
        m = report.vform_map(d, rejected, lot, w)
    else:
        fits, skipped = report.fit_chips(kept, min_cycles, jobs=jobs)
        ref = [(f.chip, ber_at_margin(f.fit_h, f.fit_l, margin).log10_ber) for f in fits]
        m = report.ber_map(kept.cycle_chips(), ref, rejected, skipped, lot, w, margin)
    if m.value_range is None:
        raise InsufficientData(f"no chip on {lot}/{w} has a {metric} value")
    return m


def cmd_wafermap(args) -> int:
    d = _load(args.input)
    m = build_wafermap(d, args.metric, args.margin, args.vform_max, args.min_cycles, args.wafer, args.jobs)
    _emit(report.render_wafermap(m, args.format), args.out)
    return EXIT_OK


def run_report(input_path: str, out_dir: str, margins=None, margin: float = 1.0,
               bin_width: float = 1.0, vform_max: float = 4.0, min_cycles: int = 10,
               level: float = 0.95, jobs: int = 1) -> dict[str, bytes]:
    """Full pipeline into ``out_dir``; returns the bundle contents.

    The bundle is assembled in a sibling temporary directory and moved into
    place only when every stage succeeded.
    """
    d = _load(input_path)
    kept, rejected = _screen(d, vform_max)
    fits, skipped = report.fit_chips(kept, min_cycles, level, jobs)
    if not fits:
        raise InsufficientData("no analysable chips after screening")
    margins = list(margins or margin_grid())
    a = report.analyze_ber(fits, margins, margin, bin_width, jobs)
    bundle: dict[str, bytes] = {}
    put = lambda name, text: bundle.__setitem__(name, text.encode("utf-8"))  # noqa: E731
    put("fits.json", to_json(report.fit_report(fits, skipped, rejected)) + "\n")
    put("qq.json", to_json(report.qq_report(fits)) + "\n")
    put("ber_curves.csv", report.ber_curves_csv(a))
    put("percentile_curves.csv", report.percentile_curves_csv(a))
    put("histogram.csv", report.histogram_csv(a.histogram))
    put("ber_summary.json", to_json(report.ber_report(a)) + "\n")
    wafers = [(lot, w) for lot, ws in d.index.items() for w in ws]
    for lot, w in wafers:
        suffix = "" if len(wafers) == 1 else f"_{lot}_{w}"
        vm = report.vform_map(d, rejected, lot, w)
        bm = report.ber_map(kept.cycle_chips(), a.reference, rejected, skipped, lot, w, margin)
        if vm.cells:
            put(f"wafermap_vform{suffix}.svg", report.wafermap_svg(vm))
            put(f"wafermap_vform{suffix}.txt", report.wafermap_text(vm))
        if bm.cells and bm.value_range is not None:
            put(f"wafermap_ber{suffix}.svg", report.wafermap_svg(bm))
            put(f"wafermap_ber{suffix}.txt", report.wafermap_text(bm))
    params = {
        "vform_max_volt": vform_max, "min_cycles": min_cycles, "ci_level": level,
        "reference_margin": margin, "margins": margins, "bin_width": bin_width,
        "chips_analyzed": len(fits), "chips_rejected": len(rejected), "chips_skipped": len(skipped),
    }
    put("manifest.json", to_json(report.run_manifest([input_path], params, bundle)) + "\n")

    parent = os.path.dirname(os.path.abspath(out_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".iltber-", dir=parent)
    try:
        for name, data in bundle.items():
            with open(os.path.join(tmp, name), "wb") as fh:
                fh.write(data)
        if os.path.isdir(out_dir):
            shutil.rmtree(out_dir)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return bundle


def cmd_report(args) -> int:
    run_report(args.input, args.out, args.margins, args.margin, args.bin_width,
               args.vform_max, args.min_cycles, args.level, args.jobs)
    print(args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = FleetConfig.from_json(fh.read())
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid fleet config: {exc}") from None
    d = gen_nested_dataset(cfg)
    write_dataset(d, args.out)
    manifest = report.run_manifest([args.config], {"fleet": cfg.to_dict()},
                                   {os.path.basename(args.out): open(args.out, "rb").read()},
                                   seeds=[cfg.seed])
    _emit(to_json(manifest) + "\n", args.out + ".manifest.json")
    print(args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.quad:
        if args.z is None:
            raise UsageError("--quad needs --z")
        body = {"method": "adaptive_simpson", "z": args.z, "upper_tail": quad_normal_tail(args.z)}
    else:
        missing = [n for n in ("mu_h", "sigma_h", "mu_l", "sigma_l") if getattr(args, n) is None]
        if missing:
            raise UsageError(f"--mc needs {', '.join('--' + m.replace('_', '-') for m in missing)}")
        fit_h = LogNormalFit(args.mu_h, args.sigma_h)
        fit_l = LogNormalFit(args.mu_l, args.sigma_l)
        est = mc_ber_estimate(fit_h, fit_l, args.margin, args.n, args.seed)
        body = {"method": "monte_carlo", **est.to_dict(),
                "analytic_ber": ber_at_margin(fit_h, fit_l, args.margin).ber}
    _emit(to_json(body) + "\n", args.out)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _common(p, fits=True):
    p.add_argument("input", help="CSV or JSONL dataset (.jsonl/.ndjson for JSONL)")
    p.add_argument("--out", "-o", help="output file (default: stdout)")
    p.add_argument("--vform-max", type=float, default=4.0,
                   help="reject chips with forming voltage above this, V (default: %(default)s)")
    if fits:
        p.add_argument("--min-cycles", type=int, default=10,
                       help="minimum cycles per state to fit a chip (default: %(default)s)")
        p.add_argument("--level", type=float, default=0.95, help="sigma CI level (default: %(default)s)")
    p.add_argument("--jobs", "-j", type=int, default=1, help="per-chip worker threads")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iltber", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"iltber {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit", help="per-chip log-normal fits with sigma CI and Q-Q r^2")
    _common(s)
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("ber", help="per-chip BER vs design margin, histogram, percentile chips")
    _common(s)
    s.add_argument("--margin", type=_margin, default=1.0, help="reference margin (default: %(default)s)")
    s.add_argument("--margins", type=_grid, help="curve grid min:max:points (default 0.1:10:50, log)")
    s.add_argument("--percentiles", action="store_true", help="add p25/median/p75 chip curves")
    s.add_argument("--bin-width", type=_positive, default=1.0, help="histogram bin width in decades")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.set_defaults(func=cmd_ber)

    s = sub.add_parser("varcomp", help="lot/wafer/chip variance components")
    s.add_argument("input")
    s.add_argument("--out", "-o")
    s.add_argument("--param", default="vform")
    s.add_argument("--group-by", choices=("device_size", "none"), default="device_size")
    s.add_argument("--vform-max", type=float, default=None, help="optionally drop defective chips first")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.set_defaults(func=cmd_varcomp)

    s = sub.add_parser("wafermap", help="wafer map of forming voltage or log10 BER")
    _common(s)
    s.add_argument("--metric", choices=("vform", "ber"), default="vform")
    s.add_argument("--margin", type=_margin, default=1.0)
    s.add_argument("--wafer", help="LOT/WAFER to map (default: first wafer)")
    s.add_argument("--format", choices=("text", "csv", "svg"), default="text")
    s.set_defaults(func=cmd_wafermap)

    s = sub.add_parser("report", help="full pipeline into a bundle directory")
    _common(s)
    s.add_argument("--margin", type=_margin, default=1.0)
    s.add_argument("--margins", type=_grid)
    s.add_argument("--bin-width", type=_positive, default=1.0)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="generate a synthetic fleet from a JSON config")
    s.add_argument("config")
    s.add_argument("--out", "-o", required=True, help="dataset path (.csv or .jsonl)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("oracle", help="Monte Carlo or quadrature reference values")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--mc", action="store_true")
    g.add_argument("--quad", action="store_true")
    s.add_argument("--z", type=float)
    s.add_argument("--mu-h", type=float)
    s.add_argument("--sigma-h", type=float)
    s.add_argument("--mu-l", type=float)
    s.add_argument("--sigma-l", type=float)
    s.add_argument("--margin", type=_margin, default=1.0)
    s.add_argument("--n", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", "-o")
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help/--version exit 0, usage errors exit 1
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    if args.command == "report" and not args.out:
        print("iltber: report needs --out DIR", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"iltber: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InsufficientData, InsufficientDataError) as exc:
        print(f"iltber: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, StatsError) as exc:
        print(f"iltber: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
