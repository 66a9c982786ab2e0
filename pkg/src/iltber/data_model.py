"""Measurement records, CSV/JSONL ingestion and defective-chip screening."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Iterable, Iterator, NamedTuple, TextIO

log = logging.getLogger(__name__)

HRS = "HRS"
LRS = "LRS"
STATES = (HRS, LRS)

COLUMNS = (
    "lot_id", "wafer_id", "chip_x", "chip_y", "device_id", "device_size_nm",
    "record_type", "vform_volt", "cycle_index", "target_state", "resistance_ohm",
    "read_voltage_v", "set_voltage_v", "reset_voltage_v", "compliance_current_ua",
    "pulse_width_us",
)


class ParseError(ValueError):
    """Malformed input. ``line`` is 1-based; ``column`` may be None."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ChipNotFoundError(KeyError):
    pass


class ChipKey(NamedTuple):
    lot_id: str
    wafer_id: str
    chip_x: int
    chip_y: int

    def label(self) -> str:
        return f"{self.lot_id}/{self.wafer_id}/{self.chip_x},{self.chip_y}"

    @classmethod
    def parse(cls, text: str) -> "ChipKey":
        try:
            lot, wafer, xy = text.split("/")
            x, y = xy.split(",")
            return cls(lot, wafer, int(x), int(y))
        except ValueError:
            raise ValueError(f"bad chip label {text!r}; expected LOT/WAFER/X,Y") from None


@dataclass(frozen=True)
class FormingRecord:
    lot_id: str
    wafer_id: str
    chip_x: int
    chip_y: int
    device_id: str
    device_size_nm: int
    vform_volt: float

    def __post_init__(self):
        if not (math.isfinite(self.vform_volt) and self.vform_volt > 0.0):
            raise ValueError(f"vform_volt must be positive and finite, got {self.vform_volt!r}")

    @property
    def chip(self) -> ChipKey:
        return ChipKey(self.lot_id, self.wafer_id, self.chip_x, self.chip_y)

    @property
    def key(self) -> tuple:
        return (*self.chip, self.device_id)


@dataclass(frozen=True)
class CycleRecord:
    lot_id: str
    wafer_id: str
    chip_x: int
    chip_y: int
    device_id: str
    device_size_nm: int
    cycle_index: int
    target_state: str
    resistance_ohm: float
    read_voltage_v: float = 0.1
    set_voltage_v: float | None = None
    reset_voltage_v: float | None = None
    compliance_current_ua: float | None = None
    pulse_width_us: float | None = None

    def __post_init__(self):
        if self.target_state not in STATES:
            raise ValueError(f"target_state must be HRS or LRS, got {self.target_state!r}")
        if not (math.isfinite(self.resistance_ohm) and self.resistance_ohm > 0.0):
            raise ValueError(f"resistance_ohm must be positive and finite, got {self.resistance_ohm!r}")
        if self.cycle_index < 0:
            raise ValueError(f"cycle_index must be >= 0, got {self.cycle_index}")

    @property
    def chip(self) -> ChipKey:
        return ChipKey(self.lot_id, self.wafer_id, self.chip_x, self.chip_y)

    @property
    def key(self) -> tuple:
        return (*self.chip, self.device_id, self.cycle_index, self.target_state)


@dataclass(frozen=True)
class ChipCycleSeries:
    chip: ChipKey
    r_h: tuple[float, ...]
    r_l: tuple[float, ...]


@dataclass(frozen=True)
class Dataset:
    """Immutable set of forming and cycle records in file order.

    ``ignored_columns`` counts unknown input columns/keys seen while parsing;
    it does not take part in equality.
    """

    forming: tuple[FormingRecord, ...] = ()
    cycles: tuple[CycleRecord, ...] = ()
    ignored_columns: int = field(default=0, compare=False)

    def __post_init__(self):
        _check_unique(self.forming, "forming")
        _check_unique(self.cycles, "cycle")

    @cached_property
    def index(self) -> dict[str, dict[str, tuple[ChipKey, ...]]]:
        """lot -> wafer -> sorted chip keys, over forming and cycle records."""
        tree: dict[str, dict[str, set[ChipKey]]] = {}
        for rec in (*self.forming, *self.cycles):
            tree.setdefault(rec.lot_id, {}).setdefault(rec.wafer_id, set()).add(rec.chip)
        return {lot: {w: tuple(sorted(chips)) for w, chips in sorted(wafers.items())}
                for lot, wafers in sorted(tree.items())}

    def chips(self) -> list[ChipKey]:
        return sorted({rec.chip for rec in (*self.forming, *self.cycles)})

    def cycle_chips(self) -> list[ChipKey]:
        return sorted({rec.chip for rec in self.cycles})

    def forming_by_chip(self) -> dict[ChipKey, list[FormingRecord]]:
        out: dict[ChipKey, list[FormingRecord]] = {}
        for rec in self.forming:
            out.setdefault(rec.chip, []).append(rec)
        return out

    def select(self, chips: Iterable[ChipKey]) -> "Dataset":
        keep = set(chips)
        return Dataset(
            tuple(r for r in self.forming if r.chip in keep),
            tuple(r for r in self.cycles if r.chip in keep),
            self.ignored_columns,
        )

    def device_sizes(self) -> list[int]:
        return sorted({r.device_size_nm for r in (*self.forming, *self.cycles)})

    def __len__(self) -> int:
        return len(self.forming) + len(self.cycles)


def _check_unique(records, kind):
    seen = set()
    for rec in records:
        if rec.key in seen:
            raise ParseError(f"duplicate {kind} record {rec.key}")
        seen.add(rec.key)


# --- parsing ---------------------------------------------------------------

def _to_int(raw, column, line):
    if isinstance(raw, bool):
        raise ParseError(f"expected integer, got {raw!r}", line, column)
    if isinstance(raw, int):
        return raw
    try:
        text = str(raw).strip()
        value = int(text)
    except ValueError:
        try:
            f = float(text)
        except ValueError:
            raise ParseError(f"expected integer, got {raw!r}", line, column) from None
        if not f.is_integer():
            raise ParseError(f"expected integer, got {raw!r}", line, column) from None
        value = int(f)
    return value


def _to_float(raw, column, line):
    if isinstance(raw, bool):
        raise ParseError(f"expected number, got {raw!r}", line, column)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"expected number, got {raw!r}", line, column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {raw!r}", line, column)
    return value


def _blank(raw) -> bool:
    return raw is None or (isinstance(raw, str) and raw.strip() == "")


def _record_from_mapping(row: dict, line: int):
    def need(col):
        raw = row.get(col)
        if _blank(raw):
            raise ParseError("missing value", line, col)
        return raw

    def opt_float(col, default=None, positive=False):
        raw = row.get(col)
        if _blank(raw):
            return default
        value = _to_float(raw, col, line)
        if positive and value <= 0.0:
            raise ParseError(f"must be positive, got {raw!r}", line, col)
        return value

    rtype = row.get("record_type")
    rtype = "" if rtype is None else str(rtype).strip().upper()
    if rtype not in ("FORM", "CYCLE"):
        raise ParseError(f"record_type must be FORM or CYCLE, got {row.get('record_type')!r}",
                         line, "record_type")
    base = dict(
        lot_id=str(need("lot_id")).strip(),
        wafer_id=str(need("wafer_id")).strip(),
        chip_x=_to_int(need("chip_x"), "chip_x", line),
        chip_y=_to_int(need("chip_y"), "chip_y", line),
        device_id=str(need("device_id")).strip(),
        device_size_nm=_to_int(need("device_size_nm"), "device_size_nm", line),
    )
    if base["device_size_nm"] <= 0:
        raise ParseError("must be a positive integer", line, "device_size_nm")

    if rtype == "FORM":
        vform = _to_float(need("vform_volt"), "vform_volt", line)
        if vform <= 0.0:
            raise ParseError(f"must be positive, got {row.get('vform_volt')!r}", line, "vform_volt")
        return FormingRecord(**base, vform_volt=vform)

    cycle_index = _to_int(need("cycle_index"), "cycle_index", line)
    if cycle_index < 0:
        raise ParseError("must be non-negative", line, "cycle_index")
    state = str(need("target_state")).strip().upper()
    if state not in STATES:
        raise ParseError(f"must be HRS or LRS, got {row.get('target_state')!r}", line, "target_state")
    resistance = _to_float(need("resistance_ohm"), "resistance_ohm", line)
    if resistance <= 0.0:
        raise ParseError(f"must be positive, got {row.get('resistance_ohm')!r}", line, "resistance_ohm")
    return CycleRecord(
        **base,
        cycle_index=cycle_index,
        target_state=state,
        resistance_ohm=resistance,
        read_voltage_v=opt_float("read_voltage_v", 0.1),
        set_voltage_v=opt_float("set_voltage_v"),
        reset_voltage_v=opt_float("reset_voltage_v"),
        compliance_current_ua=opt_float("compliance_current_ua", positive=True),
        pulse_width_us=opt_float("pulse_width_us", positive=True),
    )


def _iter_csv(text: str) -> Iterator[tuple[int, dict, int]]:
    reader = csv.reader(io.StringIO(text))
    header = None
    unknown = 0
    for row in reader:
        line = reader.line_num
        if header is None:
            if not any(cell.strip() for cell in row):
                continue
            header = [c.strip() for c in row]
            missing = [c for c in ("lot_id", "record_type") if c not in header]
            if missing:
                raise ParseError(f"header lacks required column(s) {missing}", line)
            unknown = sum(1 for c in header if c not in COLUMNS)
            continue
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        yield line, dict(zip(header, row)), unknown
        unknown = 0


def _iter_jsonl(text: str) -> Iterator[tuple[int, dict, int]]:
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line)
        yield line, obj, sum(1 for k in obj if k not in COLUMNS)


def parse_cycles(data: str | bytes | TextIO, format: str = "csv") -> Dataset:
    """Parse a CSV or JSONL record stream into a :class:`Dataset`.

    Raises:
        ParseError: on malformed rows, nonpositive values, duplicate keys or
            an empty stream. The message names the 1-based line and column.
    """
    if hasattr(data, "read"):
        data = data.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8 ({exc.reason})") from None
    elif data.startswith("﻿"):
        data = data[1:]
    fmt = format.lower()
    if fmt == "csv":
        rows = _iter_csv(data)
    elif fmt == "jsonl":
        rows = _iter_jsonl(data)
    else:
        raise ValueError(f"unknown format {format!r}; expected csv or jsonl")

    forming: list[FormingRecord] = []
    cycles: list[CycleRecord] = []
    seen: dict[tuple, int] = {}
    ignored = 0
    for line, row, unknown in rows:
        ignored += unknown
        rec = _record_from_mapping(row, line)
        key = (type(rec).__name__, rec.key)
        if key in seen:
            raise ParseError(f"duplicate record (first seen on line {seen[key]})", line)
        seen[key] = line
        (forming if isinstance(rec, FormingRecord) else cycles).append(rec)
    if not forming and not cycles:
        raise ParseError("no records")
    if ignored:
        log.warning("ignored %d unknown column(s)", ignored)
    return Dataset(tuple(forming), tuple(cycles), ignored)


def read_dataset(path) -> Dataset:
    """Read a dataset file; ``.jsonl``/``.ndjson`` are JSONL, anything else CSV."""
    path = str(path)
    fmt = "jsonl" if path.lower().endswith((".jsonl", ".ndjson")) else "csv"
    with open(path, "rb") as fh:
        return parse_cycles(fh.read(), fmt)


# --- serialization ---------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _row(rec) -> dict:
    if isinstance(rec, FormingRecord):
        row = {f.name: getattr(rec, f.name) for f in fields(rec)}
        row["record_type"] = "FORM"
    else:
        row = {f.name: getattr(rec, f.name) for f in fields(rec)}
        row["record_type"] = "CYCLE"
    return row


def dump_csv(d: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for rec in (*d.forming, *d.cycles):
        row = _row(rec)
        writer.writerow([_cell(row.get(c)) for c in COLUMNS])
    return buf.getvalue()


def dump_jsonl(d: Dataset) -> str:
    lines = []
    for rec in (*d.forming, *d.cycles):
        row = _row(rec)
        lines.append(json.dumps({c: row[c] for c in COLUMNS if c in row and row[c] is not None}))
    return "\n".join(lines) + "\n"


def write_dataset(d: Dataset, path) -> None:
    path = str(path)
    text = dump_jsonl(d) if path.lower().endswith((".jsonl", ".ndjson")) else dump_csv(d)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --- screening -------------------------------------------------------------

@dataclass(frozen=True)
class Rejections:
    """Chips removed by :func:`filter_defective`, plus chips never screened."""

    chips: tuple[ChipKey, ...]
    max_vform: dict = field(default_factory=dict, compare=False)
    unscreened: tuple[ChipKey, ...] = ()
    threshold: float = 4.0

    def __iter__(self):
        return iter(self.chips)

    def __len__(self):
        return len(self.chips)

    def __contains__(self, chip):
        return chip in self.chips


def filter_defective(d: Dataset, vform_max_volt: float = 4.0) -> tuple[Dataset, Rejections]:
    """Drop chips with any forming voltage strictly above ``vform_max_volt``.

    Chips with no forming record are kept and listed in ``unscreened``.
    """
    by_chip = d.forming_by_chip()
    worst = {chip: max(r.vform_volt for r in recs) for chip, recs in by_chip.items()}
    rejected = tuple(sorted(c for c, v in worst.items() if v > vform_max_volt))
    unscreened = tuple(sorted(set(d.cycle_chips()) - set(by_chip)))
    if unscreened:
        log.info("%d chip(s) lack forming data and were not screened", len(unscreened))
    bad = set(rejected)
    kept = d.select(c for c in d.chips() if c not in bad) if bad else d
    return kept, Rejections(rejected, {c: worst[c] for c in rejected}, unscreened, vform_max_volt)


def split_states(d: Dataset, chip: ChipKey) -> ChipCycleSeries:
    """HRS and LRS resistances of one chip, ordered by cycle index."""
    recs = [r for r in d.cycles if r.chip == chip]
    if not recs and chip not in d.chips():
        raise ChipNotFoundError(chip)
    recs.sort(key=lambda r: (r.cycle_index, r.device_id))
    return ChipCycleSeries(
        chip,
        tuple(r.resistance_ohm for r in recs if r.target_state == HRS),
        tuple(r.resistance_ohm for r in recs if r.target_state == LRS),
    )


def forming_observations(d: Dataset, device_size_nm: int | None = None):
    """(lot, wafer, chip, vform) tuples, optionally for one device size."""
    return [(r.lot_id, r.wafer_id, r.chip, r.vform_volt) for r in d.forming
            if device_size_nm is None or r.device_size_nm == device_size_nm]


__all__ = [
    "HRS", "LRS", "COLUMNS", "ParseError", "ChipNotFoundError", "ChipKey",
    "FormingRecord", "CycleRecord", "ChipCycleSeries", "Dataset", "Rejections",
    "parse_cycles", "read_dataset", "dump_csv", "dump_jsonl", "write_dataset",
    "filter_defective", "split_states", "forming_observations",
]
