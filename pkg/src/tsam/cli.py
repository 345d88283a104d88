"""Command line entry point: ``tsam run | validate | oracle``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import oracles
from .config import ConfigError, load_config


def _load(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return load_config(path)


def cmd_run(args) -> int:
    from .harness import run

    config = _load(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
            return 2
        config = config.with_seed(args.seed)
    out = args.out or Path("runs") / (config["experiment"]["name"] or Path(args.config).stem)
    manifest = run(config, out)
    print(f"wrote {len(manifest.outputs)} files to {manifest.out_dir}")
    for k, v in manifest.summary.items():
        print(f"{k} = {v}")
    return 0


def cmd_validate(args) -> int:
    config = _load(args.config)
    print(f"ok: {config.kind} ({config.content_hash()[:12]})")
    return 0


def cmd_oracle(args) -> int:
    names = sorted(oracles.ORACLES) if args.name == "all" else [args.name]
    for name in names:
        if name not in oracles.ORACLES:
            print(f"error: unknown oracle {name!r}; available: all, {', '.join(sorted(oracles.ORACLES))}",
                  file=sys.stderr)
            return 2
        for line in oracles.describe(name):
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsam", description="Tilted SAM experiments and checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory (default runs/<name>)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("validate", help="parse and validate a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("oracle", help="print a brute-force reference value")
    p.add_argument("name", help="oracle name or 'all'")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"{len(exc.errors)} error(s) in {args.config}:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
