"""Tuning epochs: measure, retune, probe, and roll back harmful changes.

An epoch fires every tuning_interval host writes (or early on a detected
workload shift, rate-limited to one per interval). It measures the period
just ended, asks the backend for a new configuration, applies it, replays an
investigation period under the new profile, and keeps the change only if the
probe did not degrade mean latency beyond the threshold. The virtual clock
never advances while the backend call is in flight.
"""
from __future__ import annotations

from dataclasses import dataclass

from .config import ConfigProfile, default_param_bounds
from .errors import BackendUnavailable, ConfigError, NoData, NoValidUpdate, ParseFailure
from .tuner import (TuningRecord, Verdict, build_prompt, correct_mistakes,
                    parse_config, query_backend, segment_prompt,
                    DEFAULT_MAX_TOKENS, DEFAULT_OVERLAP_TOKENS)


@dataclass(frozen=True)
class PerfSnapshot:
    """Aggregate performance over a measured span of requests."""

    mean_latency_us: float
    wa: float
    requests: int
    writes: int
    span_us: float


@dataclass(frozen=True)
class Marker:
    """Counter snapshot delimiting a measurement span."""

    requests: int
    writes: int
    total_latency_us: float
    host_pages: int
    device_pages: int
    clock_us: float


@dataclass(frozen=True)
class EpochSchedule:
    tuning_interval_writes: int = 100000
    investigation_ops: int = 10000
    degradation_threshold: float = 0.05   # rollback above prev * (1 + this)
    max_epochs: int = 30

    def __post_init__(self):
        if self.tuning_interval_writes < 1 or self.investigation_ops < 1:
            raise ConfigError("schedule intervals must be >= 1")
        if self.investigation_ops > self.tuning_interval_writes:
            raise ConfigError(
                "investigation period cannot exceed the tuning interval")
        if self.degradation_threshold < 0:
            raise ConfigError("degradation threshold must be >= 0")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")


def measure(stack, since: Marker) -> PerfSnapshot:
    """Performance over everything serviced after `since`."""
    now = stack.marker()
    n = now.requests - since.requests
    if n <= 0:
        raise NoData("no requests in measurement span")
    host = now.host_pages - since.host_pages
    device = now.device_pages - since.device_pages
    return PerfSnapshot(
        mean_latency_us=(now.total_latency_us - since.total_latency_us) / n,
        wa=(device / host) if host > 0 else 1.0,
        requests=n,
        writes=now.writes - since.writes,
        span_us=now.clock_us - since.clock_us,
    )


def should_rollback(prev: PerfSnapshot, probe: PerfSnapshot,
                    degradation_threshold: float) -> bool:
    """True when the probe degraded mean latency beyond the allowance.

    Strictly greater: a probe at exactly prev * (1 + threshold) survives.
    """
    return probe.mean_latency_us > prev.mean_latency_us * (1.0 + degradation_threshold)


def accuracy(history: list[TuningRecord]) -> float:
    """Fraction of adjustments that actually improved on the default config.

    Numerator: accepted (incl. corrected) epochs that improved; denominator:
    every epoch where an adjustment took effect or was rolled back. Rejected
    epochs changed nothing and are excluded entirely.
    """
    adjusted = [r for r in history
                if r.verdict in (Verdict.ACCEPTED, Verdict.CORRECTED,
                                 Verdict.ROLLED_BACK)]
    if not adjusted:
        raise NoData("no adjustments to grade")
    good = sum(1 for r in adjusted
               if r.verdict in (Verdict.ACCEPTED, Verdict.CORRECTED)
               and r.improved_over_default)
    return good / len(adjusted)


class VerificationLoop:
    """Schedules tuning epochs and guards them with probe-and-rollback."""

    def __init__(self, backend, schedule: EpochSchedule,
                 bounds: dict | None = None,
                 max_tokens: int = DEFAULT_MAX_TOKENS,
                 overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
                 target_note: str = ""):
        self.backend = backend
        self.schedule = schedule
        self.bounds = bounds or default_param_bounds()
        self.max_tokens = max_tokens
        self.overlap_tokens = overlap_tokens
        self.target_note = target_note
        self.history: list[TuningRecord] = []
        self.baseline: PerfSnapshot | None = None   # default-config reference
        self.epochs_run = 0
        self.writes_at_cycle_start = 0
        self.cycle_marker: Marker | None = None
        self.shift_epoch_this_interval = False
        self.in_epoch = False

    # --- scheduling -------------------------------------------------------------

    def wants_epoch(self, stack, shift_pending: bool) -> str | None:
        """Returns a trigger name if an epoch should start now."""
        if self.in_epoch or self.epochs_run >= self.schedule.max_epochs:
            return None
        writes_since = stack.writes - self.writes_at_cycle_start
        if writes_since >= self.schedule.tuning_interval_writes:
            return "scheduled"
        if shift_pending and not self.shift_epoch_this_interval:
            return "shift"
        return None

    # --- the epoch itself ------------------------------------------------------------

    def run_epoch(self, stack, pump, trigger: str) -> TuningRecord:
        """One full tune-probe-verify cycle.

        `pump(n)` must replay up to n further trace operations through the
        stack and return how many actually ran; the investigation period is
        replayed through it under the candidate configuration.
        """
        self.in_epoch = True
        try:
            record = self._run_epoch(stack, pump, trigger)
        finally:
            self.in_epoch = False
        self.history.append(record)
        self.epochs_run += 1
        if trigger == "shift":
            self.shift_epoch_this_interval = True
        else:
            self.shift_epoch_this_interval = False
        self.writes_at_cycle_start = stack.writes
        self.cycle_marker = stack.marker()
        return record

    def _run_epoch(self, stack, pump, trigger: str) -> TuningRecord:
        epoch = self.epochs_run + 1
        since = self.cycle_marker or stack.zero_marker()
        try:
            prev = measure(stack, since)
        except NoData:
            prev = PerfSnapshot(0.0, 1.0, 0, 0, 0.0)
        if self.baseline is None:
            self.baseline = prev
        info = stack.system_info()
        info["last_period"] = {
            "mean_latency_us": prev.mean_latency_us,
            "requests": prev.requests,
            "wa": prev.wa,
        }
        bundle = build_prompt(info, self.history, stack.config,
                              self.target_note)
        segments = segment_prompt(bundle, self.max_tokens, self.overlap_tokens)
        prompt_text = bundle.joined()
        config_before = stack.config.as_dict()
        raw = None
        try:
            raw = query_backend(self.backend, segments)
            reason, candidates = parse_config(raw)
            new_profile, corrections = correct_mistakes(
                candidates, self.bounds, stack.config)
        except (BackendUnavailable, ParseFailure, NoValidUpdate) as exc:
            return TuningRecord(
                epoch=epoch, trigger=trigger, verdict=Verdict.REJECTED,
                reason=f"rejected: {exc}", corrections=(), changed={},
                latency_before_us=prev.mean_latency_us,
                latency_after_us=None, wa_before=prev.wa, wa_after=None,
                improved_over_default=None, raw_response=raw,
                prompt=prompt_text, config_before=config_before,
                config_after=None)
        old_profile = stack.config
        changed = {name: (getattr(old_profile, name), getattr(new_profile, name))
                   for name in old_profile.as_dict()
                   if getattr(old_profile, name) != getattr(new_profile, name)}
        stack.apply_config(new_profile)
        probe_marker = stack.marker()
        ran = pump(self.schedule.investigation_ops)
        if ran <= 0:
            # nothing left to probe with: keep the safe prior profile
            stack.apply_config(old_profile)
            return TuningRecord(
                epoch=epoch, trigger=trigger, verdict=Verdict.ROLLED_BACK,
                reason="rolled back: no operations left to probe with",
                corrections=tuple(corrections), changed=changed,
                latency_before_us=prev.mean_latency_us,
                latency_after_us=None, wa_before=prev.wa, wa_after=None,
                improved_over_default=None, raw_response=raw,
                prompt=prompt_text, config_before=config_before,
                config_after=new_profile.as_dict())
        probe = measure(stack, probe_marker)
        improved = probe.mean_latency_us < self.baseline.mean_latency_us
        if should_rollback(prev, probe, self.schedule.degradation_threshold):
            stack.apply_config(old_profile)
            verdict = Verdict.ROLLED_BACK
        elif corrections:
            verdict = Verdict.CORRECTED
        else:
            verdict = Verdict.ACCEPTED
        return TuningRecord(
            epoch=epoch, trigger=trigger, verdict=verdict,
            reason=reason, corrections=tuple(corrections), changed=changed,
            latency_before_us=prev.mean_latency_us,
            latency_after_us=probe.mean_latency_us,
            wa_before=prev.wa, wa_after=probe.wa,
            improved_over_default=improved, raw_response=raw,
            prompt=prompt_text, config_before=config_before,
            config_after=new_profile.as_dict())
