"""Command line front end.

Subcommands: ``replay`` runs a recorded question stream and reports
per-iteration metrics, ``sweep`` repeats it over a threshold grid,
``synth`` generates a deterministic synthetic stream, ``serve`` starts
the HTTP service. Exit codes: 0 success, 2 validation failure, 3
upstream backend failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .config import build_backends, build_engine, load_settings
from .core import Thresholds
from .engine import Engine
from .errors import ConfigError, DatasetError, ProtocolError, SnapshotError, UpstreamError
from .replay import emit_report, emit_sweep, load_dataset, run_replay, run_sweep
from .synth import make_stream, write_stream

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_UPSTREAM = 3


def _float_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def _add_common_flags(parser: argparse.ArgumentParser, *, grid: bool) -> None:
    parser.add_argument("--config", help="settings file (JSON object)")
    parser.add_argument("--preset", help="named threshold preset")
    threshold_type = _float_list if grid else float
    plural = " (comma-separated list for the grid)" if grid else ""
    parser.add_argument("--tau", type=threshold_type,
                        help="cluster assignment threshold" + plural)
    parser.add_argument("--delta", type=threshold_type,
                        help="near-duplicate threshold" + plural)
    parser.add_argument("--gamma", type=threshold_type,
                        help="quality split threshold" + plural)
    parser.add_argument("--top-k", type=int, dest="top_k",
                        help="evidence list size")
    parser.add_argument("--seed", type=int,
                        help="seed for the deterministic mock backends")
    parser.add_argument("--backend", choices=("mock", "http"),
                        help="backend kind for both embedding and generation")
    parser.add_argument("--out-dir", dest="out_dir",
                        help="directory for metrics/trace/summary files")


def _overrides(args: argparse.Namespace, *, thresholds: bool) -> dict:
    mapping = {"preset": args.preset, "top_k": args.top_k}
    if args.seed is not None:
        mapping["mock_seed"] = args.seed
    if args.backend is not None:
        mapping["embedding_backend"] = args.backend
        mapping["generation_backend"] = args.backend
    if thresholds:
        mapping.update(tau=args.tau, delta=args.delta, gamma=args.gamma)
    return mapping


def _print_iteration_lines(report, out=None) -> None:
    out = out if out is not None else sys.stdout
    for m in report.iterations:
        growth = "n/a" if m.growth_rate_pct is None else f"{m.growth_rate_pct:.2f}%"
        print(f"iteration {m.iteration}: questions={m.questions} "
              f"reuse_ratio={m.reuse_ratio:.3f} growth={growth} "
              f"chunks={m.total_chunks} mean_score={m.mean_score:.3f} "
              f"avg_time={m.avg_time_s:.4f}s", file=out)
    print(f"total: questions={report.total_questions} "
          f"reuse={report.total_reuse} chunks_start={report.chunks_start}",
          file=out)


def cmd_replay(args: argparse.Namespace) -> int:
    settings = load_settings(args.config,
                             overrides=_overrides(args, thresholds=True))
    dataset = load_dataset(args.dataset)
    engine = build_engine(settings)
    report = run_replay(engine, dataset)
    _print_iteration_lines(report)
    if args.out_dir:
        paths = emit_report(report, args.out_dir)
        print(f"wrote {paths['metrics']}, {paths['trace']}, {paths['summary']}")
    if report.aborted is not None:
        print(f"aborted: {report.aborted}", file=sys.stderr)
        return EXIT_UPSTREAM
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = load_settings(args.config,
                             overrides=_overrides(args, thresholds=False))
    dataset = load_dataset(args.dataset)
    base = settings.engine.thresholds
    taus = args.tau or [base.tau]
    deltas = args.delta or [base.delta]
    gammas = args.gamma or [base.gamma]
    combos = [(t, d, g) for t in taus for d in deltas for g in gammas]
    # validate the whole grid before spending time on any replay
    for tau, delta, gamma in combos:
        Thresholds(tau=tau, delta=delta, gamma=gamma)

    def make_engine(thresholds: Thresholds) -> Engine:
        engine_config = dataclasses.replace(settings.engine,
                                            thresholds=thresholds)
        embedder, generator, scorer = build_backends(settings)
        return Engine(engine_config, embedder, generator, scorer,
                      role=settings.role)

    rows = run_sweep(make_engine, dataset, combos)
    for row in rows:
        status = "aborted" if row.aborted else "ok"
        print(f"tau={row.tau} delta={row.delta} gamma={row.gamma} "
              f"final_reuse={row.final_reuse_ratio:.3f} "
              f"chunks={row.final_total_chunks} "
              f"mean_score={row.mean_score:.3f} [{status}]")
    if args.out_dir:
        path = emit_sweep(rows, args.out_dir)
        print(f"wrote {path}")
    return EXIT_UPSTREAM if any(row.aborted for row in rows) else EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    rows, stats = make_stream(
        seed=args.seed if args.seed is not None else 0,
        dim=args.dim, n_seed=args.n_seed, n_iterations=args.iterations,
        per_iteration=args.per_iteration,
        paraphrase_rate=args.paraphrase_rate, n_kb=args.kb, name=args.name)
    write_stream(rows, args.out)
    print(f"wrote {args.out}: seeds={stats.n_seed} "
          f"iterations={stats.n_iterations} fresh={stats.fresh} "
          f"paraphrases={stats.paraphrases} exact_dups={stats.exact_dups}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, runner=None) -> int:
    overrides = _overrides(args, thresholds=True)
    if args.host is not None:
        overrides["host"] = args.host
    if args.port is not None:
        overrides["port"] = args.port
    if args.snapshot is not None:
        overrides["snapshot_path"] = args.snapshot
    if args.autosave_interval is not None:
        overrides["autosave_interval_s"] = args.autosave_interval
    settings = load_settings(args.config, overrides=overrides)
    engine = build_engine(settings)
    if settings.snapshot_path and os.path.exists(settings.snapshot_path):
        engine.load_snapshot(settings.snapshot_path)
        print(f"restored snapshot {settings.snapshot_path}")

    from .service import create_app

    app = create_app(engine, snapshot_path=settings.snapshot_path,
                     autosave_interval_s=settings.autosave_interval_s)
    if runner is None:
        import uvicorn

        runner = uvicorn.run
    runner(app, host=settings.host, port=settings.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamqa",
        description="streaming community-QA answering engine")
    sub = parser.add_subparsers(dest="command", required=True)

    replay = sub.add_parser("replay", help="replay a question stream")
    replay.add_argument("--dataset", required=True, help="JSONL stream file")
    _add_common_flags(replay, grid=False)
    replay.set_defaults(func=cmd_replay)

    sweep = sub.add_parser("sweep", help="replay across a threshold grid")
    sweep.add_argument("--dataset", required=True, help="JSONL stream file")
    _add_common_flags(sweep, grid=True)
    sweep.set_defaults(func=cmd_sweep)

    synth = sub.add_parser("synth", help="generate a synthetic stream")
    synth.add_argument("--out", required=True, help="output JSONL path")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--dim", type=int, default=64)
    synth.add_argument("--n-seed", type=int, dest="n_seed", default=40)
    synth.add_argument("--iterations", type=int, default=10)
    synth.add_argument("--per-iteration", type=int, dest="per_iteration",
                       default=40)
    synth.add_argument("--paraphrase-rate", type=float,
                       dest="paraphrase_rate", default=0.3)
    synth.add_argument("--kb", type=int, default=8)
    synth.add_argument("--name", default="synthetic")
    synth.set_defaults(func=cmd_synth)

    serve = sub.add_parser("serve", help="run the HTTP service")
    _add_common_flags(serve, grid=False)
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.add_argument("--snapshot", help="snapshot file to load and autosave")
    serve.add_argument("--autosave-interval", type=float,
                       dest="autosave_interval",
                       help="seconds between automatic snapshots")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, SnapshotError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (UpstreamError, ProtocolError) as exc:
        print(f"upstream error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM


if __name__ == "__main__":
    sys.exit(main())
