"""Command-line entry points: replay, compare, convert-topiocqa, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .clock import RealClock, VirtualClock
from .config import load_config
from .errors import (
    AllToolsFailed,
    ConfigError,
    EvaluatorBackendFailure,
    ModelBackendFailure,
    ScriptParseError,
)
from .events import dump_events
from .harness import compare, load_scripts, render_comparison, replay
from .harness import convert_topiocqa as convert_topiocqa_file

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_BACKEND = 3


def _make_clock(kind: str):
    return VirtualClock() if kind == "virtual" else RealClock()


def _cmd_replay(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    scripts = load_scripts(args.script)
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for script in scripts:
        transcript, report, events = replay(script, cfg, _make_clock(args.clock))
        print(f"{script.session_id}: mode={cfg.run.mode} turns={len(transcript)} "
              f"mean={report.mean_ms:.1f}ms p95={report.p95_ms:.1f}ms")
        if out_dir is not None:
            sid = script.session_id
            with open(out_dir / f"transcript-{sid}.ndjson", "w", encoding="utf-8") as fh:
                for rec in transcript:
                    fh.write(json.dumps(rec, separators=(",", ":"), ensure_ascii=False) + "\n")
            (out_dir / f"events-{sid}.ndjson").write_text(dump_events(events), encoding="utf-8")
            (out_dir / f"report-{sid}.json").write_text(
                json.dumps(report.to_record(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    configs = [(Path(p).stem, load_config(p)) for p in args.configs]
    scripts = []
    for path in args.scripts:
        scripts.extend(load_scripts(path))
    report = compare(scripts, configs, clock_factory=lambda: _make_clock(args.clock))
    text = render_comparison(report)
    print(text, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "comparison.json").write_text(
            json.dumps(report, indent=2) + "\n", encoding="utf-8")
        (out_dir / "comparison.txt").write_text(text, encoding="utf-8")
    return EXIT_OK


def _cmd_convert(args: argparse.Namespace) -> int:
    n = convert_topiocqa_file(args.src, args.dst)
    print(f"wrote {n} turn records to {args.dst}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(load_config(args.config))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmfr",
                                     description="Temporal-decoupling dialogue runtime")
    parser.add_argument("--version", action="version", version=f"pmfr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replay", help="replay scripted sessions under one config")
    p.add_argument("--script", required=True, help="script file (newline-delimited records)")
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--clock", choices=("virtual", "real"), default="virtual")
    p.add_argument("--out", help="directory for transcript/events/report files")
    p.set_defaults(fn=_cmd_replay)

    p = sub.add_parser("compare", help="replay scripts under several configs")
    p.add_argument("--configs", nargs="+", required=True, help="two or more TOML configs")
    p.add_argument("--scripts", nargs="+", required=True, help="script files or directories")
    p.add_argument("--clock", choices=("virtual", "real"), default="virtual")
    p.add_argument("--out", help="directory for comparison outputs")
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("convert-topiocqa", help="convert TopiOCQA records to script format")
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(fn=_cmd_convert)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True, help="TOML config file")
    p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ScriptParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ModelBackendFailure, AllToolsFailed, EvaluatorBackendFailure) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
