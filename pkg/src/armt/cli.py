"""Command-line harness.

Subcommands: init-weights (deterministic weight container), verify
(diagonal-vs-sequential error accumulation across segment counts), bench
(wall-clock comparison of schedules), trace (export one run's schedule).
Exit codes: 0 ok, 1 tolerance breach, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from .config import ModelConfig
from .errors import EngineError, InputError
from .executors import relative_error, run_diagonal, run_sequential
from .reports import (BenchReport, BenchRow, TOLERANCES, VerifyReport,
                      VerifyRow, validate_report)
from .tensor_ops import warmup_kernels
from .weights import init_weights, load_weights, save_weights


def _default_threads() -> int:
    raw = os.environ.get("ARMT_THREADS")
    if raw is None:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        raise InputError(f"ARMT_THREADS must be a positive integer, got {raw!r}")
    return threads


def _seeded_tokens(config: ModelConfig, n: int) -> np.ndarray:
    # Deterministic per (weight seed, length): verify and bench inputs are
    # reproducible without carting token files around.
    rng = np.random.default_rng([config.seed, n])
    return rng.integers(0, config.vocab_size, size=n, dtype=np.int64)


def _config_echo(config: ModelConfig) -> dict:
    return json.loads(config.to_json())


# =========================================================================
# init-weights
# =========================================================================

def cmd_init_weights(args) -> int:
    config = ModelConfig(
        n_layers=args.layers,
        d_model=args.d_model,
        n_heads=args.heads,
        d_ff=args.d_ff,
        vocab_size=args.vocab,
        segment_size=args.segment_size,
        num_mem_tokens=args.mem_tokens,
        d_mem=args.d_mem,
        seed=args.seed,
    )
    weights = init_weights(config)
    try:
        save_weights(weights, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}")
    return 0


# =========================================================================
# verify
# =========================================================================

def cmd_verify(args) -> int:
    weights = load_weights(args.weights)
    config = weights.config
    threads = _default_threads()
    precisions = ["f32", "f64"] if args.precision == "both" else [args.precision]

    rows = []
    failures = []
    for segments in sorted(set(args.segments)):
        if segments < 1:
            raise InputError(f"segment counts must be >= 1, got {segments}")
        tokens = _seeded_tokens(config, segments * config.segment_size)
        errors: dict[str, float | None] = {"f32": None, "f64": None}
        for precision in precisions:
            base, _ = run_sequential(weights, config, tokens, dtype=precision)
            diag, _ = run_diagonal(weights, config, tokens, dtype=precision,
                                   threads=threads)
            err = relative_error(diag, base)
            errors[precision] = err
            if err > TOLERANCES[precision]:
                failures.append(
                    f"segments={segments} {precision}: rel_error {err:.3e} "
                    f"exceeds {TOLERANCES[precision]:.1e}")
        rows.append(VerifyRow(segments=segments,
                              rel_error_f32=errors["f32"],
                              rel_error_f64=errors["f64"]))

    report = VerifyReport(config=_config_echo(config), precision=args.precision,
                          rows=rows, passed=not failures)
    if args.report == "json":
        print(json.dumps(report.to_json_dict(), indent=2))
    else:
        print(report.to_csv(), end="")
    if failures:
        for line in failures:
            print(f"tolerance breach: {line}", file=sys.stderr)
        return 1
    return 0


# =========================================================================
# bench
# =========================================================================

def _median_wall(fn, repeat: int) -> float:
    fn()  # warmup run, discarded
    walls = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        walls.append(time.perf_counter() - t0)
    return statistics.median(walls)


def _run_minibatch(weights, config, tokens, copies: int) -> None:
    # The minibatch axis: `copies` independent streams, each executed with
    # the sequential schedule, dispatched over that many threads (so extra
    # cores help it exactly as much as they would help a server batching
    # requests).
    workers = max(1, min(copies, os.cpu_count() or 1))
    if workers == 1:
        for _ in range(copies):
            run_sequential(weights, config, tokens)
        return
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(run_sequential, weights, config, tokens)
                   for _ in range(copies)]
        for fut in futures:
            fut.result()


def cmd_bench(args) -> int:
    weights = load_weights(args.weights)
    config = weights.config
    if args.repeat < 1:
        raise InputError(f"--repeat must be >= 1, got {args.repeat}")
    for t in args.threads:
        if t < 1:
            raise InputError(f"thread counts must be >= 1, got {t}")
    warmup_kernels(np.float64)

    rows = []
    for seq_len in args.seq_len:
        if seq_len < 1:
            raise InputError(f"--seq-len values must be >= 1, got {seq_len}")
        segments = math.ceil(seq_len / config.segment_size)
        tokens = _seeded_tokens(config, seq_len)

        seq_wall = _median_wall(
            lambda: run_sequential(weights, config, tokens), args.repeat)

        for threads in args.threads:
            for mode in args.modes:
                if mode == "sequential":
                    wall, denom = seq_wall, segments
                elif mode == "diagonal":
                    wall = _median_wall(
                        lambda: run_diagonal(weights, config, tokens,
                                             threads=threads),
                        args.repeat)
                    denom = segments
                else:
                    wall = _median_wall(
                        lambda: _run_minibatch(weights, config, tokens, threads),
                        args.repeat)
                    denom = segments * threads
                rows.append(BenchRow(
                    mode=mode, threads=threads, seq_len=seq_len,
                    segments=segments, wall_seconds=wall,
                    seconds_per_segment=wall / denom,
                    speedup_vs_sequential=seq_wall / wall))

    report = BenchReport(
        config=_config_echo(config),
        environment={
            "precision": "f64",
            "host_workers": os.cpu_count() or 1,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
        rows=rows)
    if args.report == "json":
        print(json.dumps(report.to_json_dict(), indent=2))
    else:
        print(report.to_csv(), end="")
    return 0


# =========================================================================
# trace
# =========================================================================

def cmd_trace(args) -> int:
    weights = load_weights(args.weights)
    config = weights.config
    tokens = _seeded_tokens(config, args.seq_len)
    if args.schedule == "sequential":
        _, trace = run_sequential(weights, config, tokens)
    else:
        _, trace = run_diagonal(weights, config, tokens,
                                threads=_default_threads())
    doc = trace.to_json_dict()
    validate_report(doc, "trace")
    try:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out} ({trace.steps_executed} steps, {args.schedule})")
    return 0


# =========================================================================
# Parser / entry point
# =========================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="armt",
        description="Inference engine for layer-recurrent memory transformers: "
                    "sequential and diagonal-wavefront schedules.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-weights", help="write a deterministic weight container")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=512)
    p.add_argument("--vocab", type=int, default=256)
    p.add_argument("--segment-size", type=int, default=64)
    p.add_argument("--mem-tokens", type=int, default=8)
    p.add_argument("--d-mem", type=int, default=16)
    p.add_argument("--out", required=True, metavar="FILE")
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("verify", help="check diagonal-vs-sequential equivalence")
    p.add_argument("--weights", required=True, metavar="FILE")
    p.add_argument("--segments", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32])
    p.add_argument("--precision", choices=["f32", "f64", "both"], default="both")
    p.add_argument("--report", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time the schedules against each other")
    p.add_argument("--weights", required=True, metavar="FILE")
    p.add_argument("--seq-len", type=int, nargs="+", default=[4096])
    p.add_argument("--modes", nargs="+",
                   choices=["sequential", "diagonal", "minibatch"],
                   default=["sequential", "diagonal", "minibatch"])
    p.add_argument("--threads", type=int, nargs="+", default=None)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--report", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace", help="export one run's execution trace as JSON")
    p.add_argument("--weights", required=True, metavar="FILE")
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--schedule", choices=["sequential", "diagonal"],
                   default="diagonal")
    p.add_argument("--out", required=True, metavar="FILE")
    p.set_defaults(func=cmd_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bench" and args.threads is None:
            args.threads = [_default_threads()]
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
