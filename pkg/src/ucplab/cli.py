"""Command-line entry point: ``ucplab <command> --config <path> [--out DIR] [--seed N] [--threads N]``.

Exit statuses: 0 success, 1 numerical failure, 2 configuration error.  On
failure a one-line JSON error record is printed to standard error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import COMMANDS, parse_text, resolve
from .errors import ConfigError, UcpLabError

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucplab", description="Unique-continuation numerics for the planar Lamé system.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config file (INI sections, JSON values)")
    parser.add_argument("--out", default=None, help="output directory (default: ./ucplab-out/<command>)")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    return parser


def _error(kind: str, message: str, field=None) -> None:
    record = {"error": kind, "message": message}
    if field is not None:
        record["field"] = field
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .runner import run  # heavy imports only after argument parsing

    path = Path(args.config)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1", "threads")
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}", "config") from exc
        raw = parse_text(text)
        run_section = raw.setdefault("run", {})
        run_section.setdefault("command", args.command)
        if run_section["command"] != args.command:
            raise ConfigError(
                f"run.command: config is for {run_section['command']!r}, not {args.command!r}", "run.command"
            )
        if args.seed is not None:
            run_section["seed"] = args.seed
        cfg = resolve(raw)
        out = Path(args.out) if args.out else Path("ucplab-out") / args.command
        manifest = run(cfg, out, threads=args.threads, base_dir=path.parent)
    except ConfigError as exc:
        _error("config", str(exc), exc.field)
        return EXIT_CONFIG
    except UcpLabError as exc:
        _error("numerical", f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    for name in manifest.outputs:
        print(out / name)
    print(out / "manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
