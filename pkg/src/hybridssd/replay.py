"""Closed-loop trace replay over the full management stack, plus reports.

Execution time is the sum of simulated service latencies; trace timestamps
only order requests. One SimulatorStack owns the device, FTL, classifier,
monitor, and agent; the verification loop (tuned mode) drives config changes
between requests.
"""
from __future__ import annotations

import csv
import json
import os
import random
import tempfile
from collections import deque
from dataclasses import dataclass, field

from .config import ConfigProfile, default_param_bounds
from .errors import ConfigError, NoData
from .ftl import ACTION_ORDER, ActionKind, FtlEngine, SpaceAction
from .hotness import HotnessClassifier
from .monitor import SlidingWindow, WindowEntry
from .rl import SpaceAgent
from .ssd import FlashGeometry, LatencyModel, Mode, SsdState
from .trace import OpKind, TraceRecord, page_span
from .tuner import DEFAULT_MAX_TOKENS, DEFAULT_OVERLAP_TOKENS
from .verification import (EpochSchedule, Marker, VerificationLoop, accuracy,
                           measure)


class SimulatorStack:
    """Device plus the full management stack under one tunable config."""

    def __init__(self, geometry: FlashGeometry, config: ConfigProfile,
                 latency: LatencyModel | None = None, seed: int = 0,
                 initial_mode_split: float = 0.25, kmeans_tol: float = 1e-4,
                 record_ops: bool = False):
        self.geometry = geometry
        self.config = config
        self.seed = seed
        self.initial_mode_split = initial_mode_split
        self.ssd = SsdState(geometry, latency or LatencyModel(),
                            initial_mode_split)
        self.agent = SpaceAgent(random.Random(seed))
        self.ftl = FtlEngine(self.ssd, config, action_source=self._pick_action,
                             record_ops=record_ops)
        self.monitor = SlidingWindow(config.window_size)
        self.classifier = HotnessClassifier(config.slice_size,
                                            geometry.page_size,
                                            kmeans_tol=kmeans_tol)
        self.requests = 0
        self.writes = 0
        self.reads = 0
        self.total_latency_us = 0.0
        self.clock_us = 0.0
        self.classifications = 0
        self.config_applications = 0
        self.last_summary = None
        self.shift_pending = False
        self._hot_window: deque[int] = deque(maxlen=256)
        self._train_req_mark = 0
        self._train_lat_mark = 0.0
        self._erase_baseline = 0

    # --- agent wiring -----------------------------------------------------

    def hot_write_fraction(self) -> float:
        if not self._hot_window:
            return 0.0
        return sum(self._hot_window) / len(self._hot_window)

    def _agent_state(self):
        return self.agent.observe_state(self.ftl.summary(), self.last_summary,
                                        self.hot_write_fraction())

    def _pick_action(self, ftl) -> SpaceAction:
        state = self._agent_state()
        kind = self.agent.choose_action(state, self.config.rl_exploration)
        if kind is ActionKind.SLC_TO_QLC_MC:
            granularity = self.config.conversion_granularity
        elif kind is ActionKind.IDLE:
            granularity = 1
        else:
            granularity = self.config.gc_granularity
        return SpaceAction(kind, granularity)

    def _train_agent(self) -> None:
        span = self.requests - self._train_req_mark
        if span <= 0:
            return
        avg = (self.total_latency_us - self._train_lat_mark) / span
        try:
            summary = self.monitor.summarize(self.config.std_dev_threshold)
        except NoData:
            summary = None
        self.last_summary = summary
        if summary is not None and summary.shift_detected:
            self.shift_pending = True
        self.agent.train(avg, self._agent_state(), self.config)
        self._train_req_mark = self.requests
        self._train_lat_mark = self.total_latency_us

    # --- request servicing --------------------------------------------------

    def service(self, record: TraceRecord) -> float:
        """Run one trace request through the whole stack."""
        spans = page_span(record, self.geometry.page_size,
                          self.ssd.logical_capacity_pages)
        us = 0.0
        is_write = record.op is OpKind.WRITE
        if is_write:
            hot_any = False
            for lpn, n in spans:
                hot = self.classifier.is_hot(lpn)
                hot_any = hot_any or hot
                us += self.ftl.handle_write(lpn, n, hot=hot)
            self._hot_window.append(1 if hot_any else 0)
        else:
            for lpn, n in spans:
                us += self.ftl.handle_read(lpn, n)
        self.clock_us += us
        self.total_latency_us += us
        self.requests += 1
        if is_write:
            self.writes += 1
            for lpn, n in spans:
                for i in range(n):
                    self.classifier.record_write(lpn + i, self.clock_us)
        else:
            self.reads += 1
        total_pages = sum(n for _, n in spans)
        self.monitor.push(WindowEntry(lpn=spans[0][0], is_write=is_write,
                                      size_pages=total_pages,
                                      timestamp_us=self.clock_us))
        if self.classifier.maybe_classify(self.config, self.clock_us):
            self.classifications += 1
        if (self.requests - self._train_req_mark
                >= self.config.rl_training_interval):
            self._train_agent()
        return us

    # --- configuration and measurement ------------------------------------------

    def apply_config(self, profile: ConfigProfile) -> None:
        """Swap the active profile atomically (called between requests)."""
        self.config = profile
        self.ftl.config = profile
        self.monitor.set_capacity(profile.window_size)
        self.classifier.reconfigure(profile.slice_size, self.clock_us)
        self.config_applications += 1

    def marker(self) -> Marker:
        return Marker(requests=self.requests, writes=self.writes,
                      total_latency_us=self.total_latency_us,
                      host_pages=self.ftl.wa.host_pages_written,
                      device_pages=self.ftl.wa.device_pages_written,
                      clock_us=self.clock_us)

    def zero_marker(self) -> Marker:
        return Marker(0, 0, 0.0, 0, 0, 0.0)

    def system_info(self) -> dict:
        g = self.geometry
        lat = self.ssd.latency
        return {
            "channels": g.channels,
            "blocks_per_channel": g.blocks_per_channel,
            "page_size": g.page_size,
            "pages_per_block_slc": g.pages_per_block_slc,
            "pages_per_block_qlc": g.pages_per_block_qlc,
            "op_ratio": g.op_ratio,
            "logical_capacity_pages": self.ssd.logical_capacity_pages,
            "slc_blocks": self.ssd.block_count(Mode.SLC),
            "qlc_blocks": self.ssd.block_count(Mode.QLC),
            "slc_free_fraction": self.ftl.free_fraction(Mode.SLC),
            "qlc_free_fraction": self.ftl.free_fraction(Mode.QLC),
            "latency": {
                "read_slc": lat.read_slc, "read_qlc": lat.read_qlc,
                "write_slc": lat.write_slc, "write_qlc": lat.write_qlc,
                "erase_slc": lat.erase_slc, "erase_qlc": lat.erase_qlc,
            },
        }

    # --- prefill ------------------------------------------------------------------

    def prefill(self, fraction: float) -> int:
        """Sequentially write a fraction of logical space, then zero all
        metrics; only device occupancy and wear survive into the run."""
        if not (0.0 <= fraction <= 1.0):
            raise ConfigError("prefill fraction must be in [0, 1]")
        n = int(self.ssd.logical_capacity_pages * fraction)
        source = self.ftl.action_source
        self.ftl.action_source = None   # fallback policy during fill
        try:
            for lpn in range(n):
                self.ftl.handle_write(lpn, 1)
        finally:
            self.ftl.action_source = source
        self.agent.pending.clear()
        self.reset_metrics()
        return n

    def reset_metrics(self) -> None:
        ftl = self.ftl
        ftl.wa.host_pages_written = 0
        ftl.wa.device_pages_written = 0
        ftl.rejected_requests = 0
        ftl.unmapped_reads = 0
        ftl.capacity_pressure_warnings = 0
        ftl.ineffective_actions = 0
        ftl.action_counts = {kind: 0 for kind in ActionKind}
        ftl.op_log.clear()
        self.requests = self.writes = self.reads = 0
        self.total_latency_us = 0.0
        self.clock_us = 0.0
        self._train_req_mark = 0
        self._train_lat_mark = 0.0
        self._erase_baseline = self.ssd.erase_ops

    @property
    def erases(self) -> int:
        return self.ssd.erase_ops - self._erase_baseline


@dataclass
class RunReport:
    """Everything a replay produced, JSON/CSV-serializable."""

    mode: str
    seed: int
    trace_ops: int
    skipped_lines: int
    geometry: dict
    config_initial: dict
    config_final: dict
    requests: int
    writes: int
    reads: int
    rejected_requests: int
    unmapped_reads: int
    total_latency_us: float
    mean_latency_us: float | None
    normalized_execution_time: float | None
    wa: float | None
    erases: int
    capacity_pressure_warnings: int
    ineffective_actions: int
    action_counts: dict
    classifications: int
    shifts_detected: int
    agent_decisions: int
    agent_trainings: int
    q_reset_warnings: int
    qtable: dict
    epochs: list = field(default_factory=list)
    epochs_run: int = 0
    accuracy: float | None = None
    sweep: list | None = None

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)


def _build_report(stack: SimulatorStack, mode: str, trace_ops: int,
                  skipped: int, config_initial: ConfigProfile,
                  loop: VerificationLoop | None,
                  baseline_total_us: float | None) -> RunReport:
    wa = None
    if stack.ftl.wa.host_pages_written > 0:
        wa = stack.ftl.wa.device_pages_written / stack.ftl.wa.host_pages_written
    epochs = []
    acc = None
    epochs_run = 0
    if loop is not None:
        epochs = [r.to_json_dict() for r in loop.history]
        epochs_run = loop.epochs_run
        try:
            acc = accuracy(loop.history)
        except NoData:
            acc = None
    normalized = None
    if baseline_total_us:
        normalized = stack.total_latency_us / baseline_total_us
    g = stack.geometry
    return RunReport(
        mode=mode,
        seed=stack.seed,
        trace_ops=trace_ops,
        skipped_lines=skipped,
        geometry={
            "channels": g.channels,
            "blocks_per_channel": g.blocks_per_channel,
            "pages_per_block_slc": g.pages_per_block_slc,
            "page_size": g.page_size,
            "op_ratio": g.op_ratio,
            "initial_mode_split": stack.initial_mode_split,
        },
        config_initial=config_initial.as_dict(),
        config_final=stack.config.as_dict(),
        requests=stack.requests,
        writes=stack.writes,
        reads=stack.reads,
        rejected_requests=stack.ftl.rejected_requests,
        unmapped_reads=stack.ftl.unmapped_reads,
        total_latency_us=stack.total_latency_us,
        mean_latency_us=(stack.total_latency_us / stack.requests
                         if stack.requests else None),
        normalized_execution_time=normalized,
        wa=wa,
        erases=stack.erases,
        capacity_pressure_warnings=stack.ftl.capacity_pressure_warnings,
        ineffective_actions=stack.ftl.ineffective_actions,
        action_counts={kind.value: stack.ftl.action_counts[kind]
                       for kind in ACTION_ORDER},
        classifications=stack.classifications,
        shifts_detected=stack.monitor.shifts_detected,
        agent_decisions=stack.agent.decisions,
        agent_trainings=stack.agent.trainings,
        q_reset_warnings=stack.agent.qtable.reset_warnings,
        qtable=stack.agent.qtable.to_json_dict(),
        epochs=epochs,
        epochs_run=epochs_run,
        accuracy=acc,
    )


def replay(records: list[TraceRecord], config: ConfigProfile,
           geometry: FlashGeometry, *, latency: LatencyModel | None = None,
           mode: str = "default", backend=None,
           schedule: EpochSchedule | None = None, seed: int = 0,
           initial_mode_split: float = 0.25, kmeans_tol: float = 1e-4,
           prefill_fraction: float = 0.0, skipped_lines: int = 0,
           baseline_total_us: float | None = None, record_ops: bool = False,
           max_tokens: int = DEFAULT_MAX_TOKENS,
           overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
           target_note: str = "") -> RunReport:
    """Replay a trace in `default` or `tuned` mode and report.

    Tuned mode with max_epochs=0 (or no backend epochs firing) services
    requests exactly like default mode: the tuner only ever acts between
    requests, through apply_config.
    """
    if mode not in ("default", "tuned"):
        raise ConfigError(f"unknown replay mode {mode!r}")
    stack = SimulatorStack(geometry, config, latency=latency, seed=seed,
                           initial_mode_split=initial_mode_split,
                           kmeans_tol=kmeans_tol, record_ops=record_ops)
    if prefill_fraction:
        stack.prefill(prefill_fraction)
    loop = None
    if mode == "tuned":
        if backend is None:
            raise ConfigError("tuned mode needs a backend")
        schedule = schedule or EpochSchedule()
        if schedule.max_epochs > 0:
            loop = VerificationLoop(
                backend, schedule,
                bounds=default_param_bounds(geometry.page_size),
                max_tokens=max_tokens, overlap_tokens=overlap_tokens,
                target_note=target_note)
    cursor = 0

    def pump(n: int) -> int:
        nonlocal cursor
        ran = 0
        while ran < n and cursor < len(records):
            stack.service(records[cursor])
            cursor += 1
            ran += 1
        return ran

    while cursor < len(records):
        stack.service(records[cursor])
        cursor += 1
        if loop is not None:
            pending_shift = stack.shift_pending
            stack.shift_pending = False
            trigger = loop.wants_epoch(stack, pending_shift)
            if trigger:
                loop.run_epoch(stack, pump, trigger)
    return _build_report(stack, mode, len(records), skipped_lines, config,
                         loop, baseline_total_us)


# --- parameter sweeps --------------------------------------------------------

SWEEP_EXTRA_PARAMS = ("kmeans_tol",)


def _scale_param(config: ConfigProfile, param: str, multiplier: float,
                 page_size: int) -> ConfigProfile:
    from dataclasses import replace
    value = getattr(config, param)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{param} is not numeric; cannot sweep it")
    scaled = value * multiplier
    if param == "slice_size":
        scaled = max(page_size, int(round(scaled / page_size)) * page_size)
    elif isinstance(value, int):
        scaled = max(1, int(round(scaled)))
    return replace(config, **{param: scaled})


def run_sweep(records: list[TraceRecord], config: ConfigProfile,
              geometry: FlashGeometry, param: str,
              multipliers: list[float], *, latency: LatencyModel | None = None,
              seed: int = 0, initial_mode_split: float = 0.25,
              kmeans_tol: float = 1e-4, prefill_fraction: float = 0.0,
              skipped_lines: int = 0) -> RunReport:
    """Replay the trace once per multiplier of one parameter.

    Sensitivity sweeps explore deliberately, so scaling bypasses the
    mistake-correction bounds; integers round half-up and slice_size snaps
    to the page grid. `kmeans_tol` sweeps the classifier tolerance, which is
    a stack setting rather than one of the tunables.
    """
    if param not in SWEEP_EXTRA_PARAMS and not hasattr(config, param):
        raise ConfigError(f"unknown sweep parameter {param!r}")
    rows = []
    base_report = None
    for m in multipliers:
        cfg = config
        tol = kmeans_tol
        if param == "kmeans_tol":
            tol = kmeans_tol * m
            value = tol
        else:
            cfg = _scale_param(config, param, m, geometry.page_size)
            value = getattr(cfg, param)
        rep = replay(records, cfg, geometry, latency=latency, mode="default",
                     seed=seed, initial_mode_split=initial_mode_split,
                     kmeans_tol=tol, prefill_fraction=prefill_fraction)
        if m == 1.0:
            base_report = rep
        rows.append({
            "param": param,
            "multiplier": m,
            "value": value,
            "total_latency_us": rep.total_latency_us,
            "mean_latency_us": rep.mean_latency_us,
            "wa": rep.wa,
            "erases": rep.erases,
            "requests": rep.requests,
        })
    if base_report is not None:
        base = base_report.total_latency_us
        for row in rows:
            row["normalized_execution_time"] = (
                row["total_latency_us"] / base if base else None)
    anchor = base_report or replay(
        records, config, geometry, latency=latency, mode="default", seed=seed,
        initial_mode_split=initial_mode_split, kmeans_tol=kmeans_tol,
        prefill_fraction=prefill_fraction)
    report = anchor
    report.mode = "sweep"
    report.sweep = rows
    return report


# --- emission ------------------------------------------------------------------

def emit_report(report: RunReport, path, fmt: str = "json") -> None:
    """Write the report atomically; a failed write leaves no partial file.

    Tuning runs also get a `<stem>.history.jsonl` next to the report with one
    JSON line per epoch, so the full prompt/response exchange survives even
    when the report itself is the compact CSV form.
    """
    if fmt == "json":
        payload = json.dumps(report.to_json_dict(), sort_keys=True, indent=2)
        payload += "\n"
    elif fmt == "csv":
        payload = _to_csv(report)
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    _atomic_write(path, payload)
    if report.epochs:
        lines = "".join(json.dumps(e, sort_keys=True) + "\n"
                        for e in report.epochs)
        stem, _ = os.path.splitext(str(path))
        _atomic_write(stem + ".history.jsonl", lines)


def _atomic_write(path, payload: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _to_csv(report: RunReport) -> str:
    import io
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    if report.sweep is not None:
        writer.writerow(["param", "multiplier", "value", "total_latency_us",
                         "mean_latency_us", "wa", "erases",
                         "normalized_execution_time"])
        for row in report.sweep:
            writer.writerow([row["param"], row["multiplier"], row["value"],
                             row["total_latency_us"], row["mean_latency_us"],
                             row["wa"], row["erases"],
                             row.get("normalized_execution_time")])
        return out.getvalue()
    writer.writerow(["epoch", "trigger", "verdict", "latency_before_us",
                     "latency_after_us", "wa_before", "wa_after",
                     "improved_over_default", "n_corrections", "changed"])
    for e in report.epochs:
        changed = ";".join(f"{k}:{v[0]}->{v[1]}"
                           for k, v in sorted(e["changed"].items()))
        writer.writerow([e["epoch"], e["trigger"], e["verdict"],
                         e["latency_before_us"], e["latency_after_us"],
                         e["wa_before"], e["wa_after"],
                         e["improved_over_default"], len(e["corrections"]),
                         changed])
    return out.getvalue()
