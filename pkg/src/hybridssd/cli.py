"""Command line front end: replay traces, tune, sweep, report."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigProfile, load_config_file
from .errors import ConfigError, SimulatorError
from .replay import emit_report, replay, run_sweep
from .ssd import FlashGeometry, LatencyModel
from .trace import FORMATS, load_trace, synth_trace
from .tuner import (DEFAULT_MAX_TOKENS, DEFAULT_OVERLAP_TOKENS, RemoteBackend,
                    ScriptedBackend)
from .verification import EpochSchedule

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridssd",
        description="Trace-driven hybrid SLC/QLC SSD simulator with "
                    "K-means hotness classification, Q-learning space "
                    "management, and LLM-backed config tuning.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay a trace and write a report")
    run.add_argument("--trace", help="trace file (omit with --format synth)")
    run.add_argument("--format", default="synth",
                     choices=sorted(FORMATS) + ["synth"],
                     help="trace format (default: synth)")
    run.add_argument("--mode", default="default",
                     choices=["default", "tuned", "sweep"])
    run.add_argument("--config", help="overrides file (key = value lines)")
    run.add_argument("--report", default="report.json",
                     help="output path (default: report.json)")
    run.add_argument("--report-format", default=None, choices=["json", "csv"],
                     help="default: by --report extension, else json")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--prefill", type=float, default=0.0,
                     help="fraction of logical space written before metrics "
                          "start (default: 0)")
    run.add_argument("--normalize", action="store_true",
                     help="also run the default config and report execution "
                          "time normalized against it")

    synth = run.add_argument_group("synthetic trace")
    synth.add_argument("--ops", type=int, default=100000)
    synth.add_argument("--hot-fraction", type=float, default=0.9,
                       help="share of writes landing in the hot region")
    synth.add_argument("--hot-region", type=float, default=0.1,
                       help="hot region size as a fraction of logical space")
    synth.add_argument("--write-ratio", type=float, default=0.7)

    geo = run.add_argument_group("device geometry")
    geo.add_argument("--channels", type=int, default=32)
    geo.add_argument("--blocks-per-channel", type=int, default=512)
    geo.add_argument("--pages-per-block", type=int, default=256,
                     help="SLC pages per block (QLC holds 4x)")
    geo.add_argument("--page-size", type=int, default=16384)
    geo.add_argument("--op-ratio", type=float, default=0.125)
    geo.add_argument("--mode-split", type=float, default=0.25,
                     help="fraction of blocks starting in SLC mode")

    tune = run.add_argument_group("tuned mode")
    tune.add_argument("--backend",
                      help="scripted:FILE or remote:URL (required for tuned)")
    tune.add_argument("--model", default="gpt-4")
    tune.add_argument("--temperature", type=float, default=0.0)
    tune.add_argument("--auth-env", default="LLM_API_KEY",
                      help="env var holding the API token (never pass the "
                           "token itself)")
    tune.add_argument("--tuning-interval", type=int, default=100000,
                      help="host writes between scheduled epochs")
    tune.add_argument("--investigation-ops", type=int, default=10000)
    tune.add_argument("--max-epochs", type=int, default=30)
    tune.add_argument("--degradation-threshold", type=float, default=0.05)
    tune.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)
    tune.add_argument("--overlap-tokens", type=int,
                      default=DEFAULT_OVERLAP_TOKENS)
    tune.add_argument("--target-note", default="",
                      help="extra requirement text appended to the prompt")

    sweep = run.add_argument_group("sweep mode")
    sweep.add_argument("--sweep-param", default="gc_trigger_threshold")
    sweep.add_argument("--sweep-multipliers", default="0.25,0.5,1,2,4,8,16",
                       help="comma separated multipliers of the base value")
    return parser


def _make_backend(spec: str | None, args):
    if not spec:
        raise ConfigError("tuned mode needs --backend scripted:FILE "
                          "or remote:URL")
    kind, _, rest = spec.partition(":")
    if kind == "scripted":
        if not rest:
            raise ConfigError("scripted backend needs a response file")
        return ScriptedBackend.from_file(rest)
    if kind == "remote":
        if not rest:
            raise ConfigError("remote backend needs an endpoint URL")
        return RemoteBackend(rest, model=args.model,
                             temperature=args.temperature,
                             auth_env=args.auth_env)
    raise ConfigError(f"unknown backend kind {kind!r}")


def _load_records(args, geometry: FlashGeometry, logical_pages: int):
    if args.format == "synth":
        records = synth_trace(args.ops, logical_pages, geometry.page_size,
                              hot_fraction=args.hot_fraction,
                              hot_region_fraction=args.hot_region,
                              write_ratio=args.write_ratio, seed=args.seed)
        return records, 0
    if not args.trace:
        raise ConfigError(f"--format {args.format} needs --trace FILE")
    return load_trace(args.trace, args.format)


def cmd_run(args) -> int:
    geometry = FlashGeometry(channels=args.channels,
                             blocks_per_channel=args.blocks_per_channel,
                             pages_per_block_slc=args.pages_per_block,
                             page_size=args.page_size, op_ratio=args.op_ratio)
    config = ConfigProfile()
    settings = {}
    if args.config:
        config, settings = load_config_file(args.config)
    mode_split = settings.get("initial_mode_split", args.mode_split)
    kmeans_tol = settings.get("kmeans_tol", 1e-4)
    # geometry keys in the config file override the CLI flags
    geo_over = {k: settings[k] for k in
                ("channels", "blocks_per_channel", "pages_per_block_slc",
                 "page_size", "op_ratio") if k in settings}
    if geo_over:
        from dataclasses import replace
        geometry = replace(geometry, **geo_over)
    # mirror SsdState's capacity math to size the synthetic LPN space
    n_slc = int(mode_split * geometry.channels * geometry.blocks_per_channel
                + 0.5)
    qlc_blocks = geometry.channels * geometry.blocks_per_channel - n_slc
    raw_pages = (n_slc * geometry.pages_per_block_slc +
                 qlc_blocks * geometry.pages_per_block_qlc)
    logical_pages = int(raw_pages * (1.0 - geometry.op_ratio))
    records, skipped = _load_records(args, geometry, logical_pages)
    if not records:
        raise ConfigError("trace produced no usable records")

    baseline_total = None
    if args.normalize and args.mode != "sweep":
        base = replay(records, ConfigProfile(), geometry, mode="default",
                      seed=args.seed, initial_mode_split=mode_split,
                      kmeans_tol=kmeans_tol, prefill_fraction=args.prefill)
        baseline_total = base.total_latency_us

    if args.mode == "sweep":
        multipliers = [float(tok) for tok in
                       args.sweep_multipliers.split(",") if tok.strip()]
        report = run_sweep(records, config, geometry,
                           args.sweep_param, multipliers, seed=args.seed,
                           initial_mode_split=mode_split,
                           kmeans_tol=kmeans_tol,
                           prefill_fraction=args.prefill,
                           skipped_lines=skipped)
    elif args.mode == "tuned":
        backend = _make_backend(args.backend, args)
        schedule = EpochSchedule(
            tuning_interval_writes=args.tuning_interval,
            investigation_ops=args.investigation_ops,
            degradation_threshold=args.degradation_threshold,
            max_epochs=args.max_epochs)
        report = replay(records, config, geometry, mode="tuned",
                        backend=backend, schedule=schedule, seed=args.seed,
                        initial_mode_split=mode_split, kmeans_tol=kmeans_tol,
                        prefill_fraction=args.prefill, skipped_lines=skipped,
                        baseline_total_us=baseline_total,
                        max_tokens=args.max_tokens,
                        overlap_tokens=args.overlap_tokens,
                        target_note=args.target_note)
    else:
        report = replay(records, config, geometry, mode="default",
                        seed=args.seed, initial_mode_split=mode_split,
                        kmeans_tol=kmeans_tol, prefill_fraction=args.prefill,
                        skipped_lines=skipped,
                        baseline_total_us=baseline_total)

    fmt = args.report_format
    if fmt is None:
        fmt = "csv" if args.report.endswith(".csv") else "json"
    emit_report(report, args.report, fmt)

    mean = report.mean_latency_us
    print(f"requests={report.requests} writes={report.writes} "
          f"mean_latency_us={mean if mean is None else round(mean, 3)} "
          f"wa={report.wa if report.wa is None else round(report.wa, 4)} "
          f"erases={report.erases}")
    if report.epochs_run:
        print(f"epochs={report.epochs_run} accuracy={report.accuracy}")
    print(f"report written to {args.report}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except SimulatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
