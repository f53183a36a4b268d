"""``cocyclelab <task> --config FILE [--seed N] [--out DIR] [--threads K]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import TASKS, ConfigError, load_config
from .io import dumps
from .runner import TaskError, resolve_out, run_experiment

EXIT_CONFIG = 2
EXIT_TASK = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cocyclelab", description=__doc__)
    sub = ap.add_subparsers(dest="task", required=True, metavar="task")
    for name in TASKS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, type=Path, help="TOML experiment file")
        sp.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
        sp.add_argument("--out", default=None, help="output directory (overrides $COCYCLELAB_OUT)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: config value, else all cores)")
    return ap


def _fail(report: dict, code: int, out: Path | None) -> int:
    text = dumps(report)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = load_config(args.config, args.task, args.seed)
    except FileNotFoundError as exc:
        return _fail({"error": "config", "problems": [f"cannot read {exc.filename}"]}, EXIT_CONFIG, None)
    except ConfigError as exc:
        return _fail({"error": "config", "problems": exc.problems}, EXIT_CONFIG, None)
    threads = args.threads if args.threads is not None else (cfg.threads or os.cpu_count() or 1)
    if threads < 1:
        return _fail({"error": "config", "problems": ["threads must be positive"]}, EXIT_CONFIG, None)
    cfg = type(cfg)(cfg.version, cfg.seed, cfg.task, cfg.model, cfg.params, threads, cfg.out)
    out = resolve_out(args.out, cfg)
    try:
        manifest = run_experiment(cfg, out)
    except TaskError as exc:
        return _fail(exc.report(), EXIT_TASK, out)
    print(json.dumps({"out": str(out), "numeric_hash": manifest["numeric_hash"]}))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
