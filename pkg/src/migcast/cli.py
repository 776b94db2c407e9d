"""Command-line entry point: ``migcast <subcommand> [flags]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import ParameterError
from .pipeline import EXIT_CONFIG, EXIT_OK, RunConfig, StageError, stage

log = logging.getLogger("migcast")


def _parse_set(items) -> dict[str, dict]:
    """``lstm.epochs=5`` style overrides grouped by model."""
    out: dict[str, dict] = {"lstm": {}, "ann": {}}
    for item in items or ():
        key, sep, raw = item.partition("=")
        model, dot, name = key.partition(".")
        if not sep or not dot or model not in out or not name:
            raise ParameterError(f"--set expects lstm.<field>=<value> or ann.<field>=<value>, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[model][name] = value
    return out


def build_config(args) -> RunConfig:
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        "flows": args.flows,
        "indicators": args.indicators,
        "gti": args.gti,
        "models": args.models,
        "seed": args.seed,
        "out": args.out,
        "split": args.split,
        "offline": True if args.offline else None,
        "refit": False if args.no_refit else None,
        "parallel_models": True if args.parallel_models else None,
    }
    for name in ("fixtures", "cache", "keywords", "variants", "gti_out", "fetch_parallelism"):
        overrides[name] = getattr(args, name, None)
    sets = _parse_set(args.set)
    if sets["lstm"]:
        overrides["lstm"] = {**base.lstm, **sets["lstm"]}
    if sets["ann"]:
        overrides["ann"] = {**base.ann, **sets["ann"]}
    return base.with_overrides(**overrides)


def _print_json(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_ingest(config: RunConfig, args) -> None:
    panel = pipeline.load_panel(config)
    _print_json(panel.report.as_dict())


def cmd_summarize(config: RunConfig, args) -> None:
    panel = pipeline.load_panel(config)
    with stage("summarize"):
        _print_json(pipeline.summarize(panel).as_dict())


def cmd_train(config: RunConfig, args) -> None:
    panel = pipeline.load_panel(config)
    trained = pipeline.train_models(config, panel)
    with stage("report"):
        directory = pipeline.save_models(trained, config.out, config)
    print(f"checkpoints written to {directory}")


def cmd_evaluate(config: RunConfig, args) -> None:
    panel = pipeline.load_panel(config)
    with stage("load"):
        trained = pipeline.load_models(args.checkpoints or config.out / pipeline.CHECKPOINT_DIR, config.models)
    table = pipeline.evaluate_models(config, panel, trained)
    with stage("report"):
        paths = pipeline.write_reports(table, panel, config, config.out)
    _report_outputs(table, paths)


def cmd_run(config: RunConfig, args) -> None:
    table, paths = pipeline.run(config)
    _report_outputs(table, paths)


def cmd_gti_build(config: RunConfig, args) -> None:
    res = pipeline.gti_build(config)
    print(f"wrote {res.path}: {res.pairs} pairs, coverage {res.coverage:.1%} ({res.missing} of {res.total} values missing)")
    if res.unavailable_series:
        print(f"{res.unavailable_series} series unavailable from the transport")
    for o, d in res.skipped_pairs:
        print(f"skipped {o}->{d}: no destination GTI")
    print(f"transport calls: {res.transport_calls}")


def _report_outputs(table, paths) -> None:
    for model, split_name, rep in table.rows:
        vals = "  ".join(f"{k}={v:.4g}" for k, v in rep.metrics().items())
        print(f"{model:8s} {split_name:10s} {vals}")
    for p in paths.values():
        print(f"wrote {p}")


COMMANDS = {
    "ingest": cmd_ingest,
    "gti-build": cmd_gti_build,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "summarize": cmd_summarize,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration; flags override it")
    common.add_argument("--flows", type=Path)
    common.add_argument("--indicators", type=Path)
    common.add_argument("--gti", type=Path)
    common.add_argument("--models", help="comma list from gravity,ann,lstm or 'all'")
    common.add_argument("--seed", type=int)
    common.add_argument("--offline", action="store_true", help="use fixtures and cache only")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--split", help="e.g. train=2004-2012,val=2013,test=2014")
    common.add_argument("--no-refit", action="store_true", help="fit on train years only")
    common.add_argument("--parallel-models", action="store_true")
    common.add_argument("--set", action="append", metavar="MODEL.FIELD=VALUE", help="training override, repeatable")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="migcast", description="Forecast bilateral migration flows.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "gti-build":
            p.add_argument("--fixtures", type=Path, help="replay CSV keyword,geography,year,month,value")
            p.add_argument("--cache", type=Path)
            p.add_argument("--keywords", type=Path)
            p.add_argument("--variants", type=Path)
            p.add_argument("--gti-out", type=Path)
            p.add_argument("--fetch-parallelism", type=int)
        if name == "evaluate":
            p.add_argument("--checkpoints", type=Path)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            config = build_config(args)
        except ParameterError as exc:
            raise StageError("config", exc, EXIT_CONFIG) from exc
        COMMANDS[args.command](config, args)
    except StageError as exc:
        print(f"migcast: error {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
