"""Trace ingestion (MSR-style and friends) and synthetic workloads.

Every supported text format is declared as a small column adapter; parsing
is one generic routine. Records normalize to byte offsets/sizes and
microsecond timestamps rebased to zero.
"""
from __future__ import annotations

import enum
import logging
import math
import random
from dataclasses import dataclass

logger = logging.getLogger(__name__)


class OpKind(enum.Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class TraceRecord:
    timestamp_us: float
    op: OpKind
    offset: int          # bytes
    size: int            # bytes
    line_no: int = 0


@dataclass(frozen=True)
class FormatSpec:
    """Column adapter for one delimited trace format."""

    name: str
    delimiter: str | None            # None = any whitespace
    ts_col: int
    op_col: int
    offset_col: int
    size_col: int
    ts_scale_us: float               # multiply raw timestamp into us
    offset_scale: int                # multiply raw offset into bytes
    size_scale: int
    read_values: frozenset
    write_values: frozenset


# Column layouts:
# msr:  Timestamp(100ns ticks),Hostname,DiskNumber,Type,Offset(B),Size(B),ResponseTime
# fiu:  timestamp(s) pid process lba(512B sectors) size(512B blocks) op ...
# oltp: ASU,LBA(512B blocks),Size(B),Opcode,Timestamp(s)
FORMATS: dict[str, FormatSpec] = {
    "msr": FormatSpec(
        name="msr", delimiter=",", ts_col=0, op_col=3, offset_col=4,
        size_col=5, ts_scale_us=0.1, offset_scale=1, size_scale=1,
        read_values=frozenset({"read", "r"}),
        write_values=frozenset({"write", "w"})),
    "fiu": FormatSpec(
        name="fiu", delimiter=None, ts_col=0, op_col=5, offset_col=3,
        size_col=4, ts_scale_us=1e6, offset_scale=512, size_scale=512,
        read_values=frozenset({"r", "read"}),
        write_values=frozenset({"w", "write"})),
    "oltp": FormatSpec(
        name="oltp", delimiter=",", ts_col=4, op_col=3, offset_col=1,
        size_col=2, ts_scale_us=1e6, offset_scale=512, size_scale=1,
        read_values=frozenset({"r", "read"}),
        write_values=frozenset({"w", "write"})),
}


def parse_trace_line(spec: FormatSpec, line: str,
                     line_no: int = 0) -> TraceRecord | None:
    """One record, or None for anything malformed."""
    parts = (line.split(spec.delimiter) if spec.delimiter
             else line.split())
    needed = max(spec.ts_col, spec.op_col, spec.offset_col, spec.size_col)
    if len(parts) <= needed:
        return None
    try:
        ts = float(parts[spec.ts_col]) * spec.ts_scale_us
        offset = int(float(parts[spec.offset_col])) * spec.offset_scale
        size = int(float(parts[spec.size_col])) * spec.size_scale
    except ValueError:
        return None
    op_text = parts[spec.op_col].strip().lower()
    if op_text in spec.read_values:
        op = OpKind.READ
    elif op_text in spec.write_values:
        op = OpKind.WRITE
    else:
        return None
    if ts < 0 or offset < 0 or size <= 0:
        return None
    return TraceRecord(ts, op, offset, size, line_no)


def load_trace(path, fmt: str) -> tuple[list[TraceRecord], int]:
    """Read a trace file; returns (records sorted+rebased, skipped count)."""
    spec = FORMATS.get(fmt)
    if spec is None:
        raise ValueError(f"unknown trace format {fmt!r}; "
                         f"have {sorted(FORMATS)}")
    records: list[TraceRecord] = []
    skipped = 0
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            rec = parse_trace_line(spec, line, line_no)
            if rec is None:
                skipped += 1
                if skipped <= 5:
                    logger.warning("%s:%d: skipping malformed line", path,
                                   line_no)
                continue
            records.append(rec)
    records.sort(key=lambda r: r.timestamp_us)
    if records:
        t0 = records[0].timestamp_us
        if t0 != 0:
            records = [TraceRecord(r.timestamp_us - t0, r.op, r.offset,
                                   r.size, r.line_no) for r in records]
    return records, skipped


def synth_trace(ops: int, logical_pages: int, page_size: int,
                hot_fraction: float = 0.9, hot_region_fraction: float = 0.1,
                write_ratio: float = 0.7, seed: int = 0,
                size_pages: int = 1,
                interval_us: float = 100.0) -> list[TraceRecord]:
    """Skewed synthetic workload: hot_fraction of accesses hit the first
    hot_region_fraction of the logical space. Deterministic per seed."""
    if not (0 <= hot_fraction <= 1 and 0 < hot_region_fraction <= 1):
        raise ValueError("fractions must sit in [0, 1]")
    if logical_pages < 2 or ops < 0:
        raise ValueError("need logical_pages >= 2 and ops >= 0")
    rng = random.Random(seed)
    hot_pages = min(max(1, int(logical_pages * hot_region_fraction)),
                    logical_pages - 1)
    records = []
    for i in range(ops):
        op = OpKind.WRITE if rng.random() < write_ratio else OpKind.READ
        if rng.random() < hot_fraction:
            lpn = rng.randrange(0, hot_pages)
        else:
            lpn = rng.randrange(hot_pages, logical_pages)
        n = min(size_pages, logical_pages - lpn)
        records.append(TraceRecord(i * interval_us, op, lpn * page_size,
                                   n * page_size, i + 1))
    return records


def page_span(record: TraceRecord, page_size: int,
              logical_pages: int) -> list[tuple[int, int]]:
    """Map a byte-addressed request onto whole-page runs.

    Offsets round down, ends round up; offsets beyond the device wrap
    modulo the logical capacity (a wrap yields two contiguous runs).
    """
    start = record.offset // page_size
    end = math.ceil((record.offset + record.size) / page_size)
    n = min(max(end - start, 1), logical_pages)
    start %= logical_pages
    if start + n <= logical_pages:
        return [(start, n)]
    head = logical_pages - start
    return [(start, head), (0, n - head)]
