"""Command-line entry point: ``acegan <subcommand> [--config PATH] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import AceGanError

SUBCOMMANDS = {
    "ingest": "read and validate WFDB records",
    "segment": "coupling matrices for every annotated beat",
    "estimate-normals": "unsupervised normal-beat pools for evaluation records",
    "select-s": "rank DS1 S beats and keep the most representative",
    "build-pool": "assemble the labelled common pool",
    "train-gan": "adversarial training on the common pool",
    "generate": "sample coupling matrices from the trained generator",
    "finetune": "per-record fine-tuning of the discriminator",
    "classify": "classify every beat of the evaluation records",
    "evaluate": "per-record report, confusion matrix and feature PCA",
    "synth": "write a seeded synthetic cohort as WFDB files",
    "run-all": "every stage in order",
    "show-config": "print the effective configuration",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="acegan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("ingest", "run-all"):
            p.add_argument("--data-dir", help=f"WFDB record directory (fallback: ${pipeline.DATA_DIR_ENV})")
        if name == "run-all":
            p.add_argument("--synthetic", action="store_true", help="synthesise the cohort first and run on it")
        if name == "generate":
            p.add_argument("--class", dest="label", required=True, choices=("N", "S", "V", "F"))
            p.add_argument("--count", type=int, required=True)
    return parser


def _run(args) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    out = Path(args.out or cfg.output_dir)
    ws = pipeline.Workspace(cfg, out)
    cmd = args.command
    if cmd == "show-config":
        sys.stdout.write(cfg.to_text())
        return {}
    if cmd == "synth":
        return {"records": str(pipeline.run_synth(cfg, out))}
    if cmd == "ingest":
        return {"records": pipeline.run_ingest(ws, args.data_dir)}
    if cmd == "segment":
        pipeline.run_segment(ws)
    elif cmd == "estimate-normals":
        pipeline.run_normals(ws)
    elif cmd == "select-s":
        res = pipeline.run_select_s(ws)
        return {"selected": len(res.selected)}
    elif cmd == "build-pool":
        return {"counts": pipeline.run_pool(ws).counts()}
    elif cmd == "train-gan":
        res = pipeline.run_gan(ws)
        return {"telemetry": res.telemetry[-1] if res.telemetry else None}
    elif cmd == "generate":
        return {"output": str(pipeline.run_generate(ws, args.label, args.count))}
    elif cmd == "finetune":
        hist = pipeline.run_finetune(ws)
        return {"epochs": {r: len(h) for r, h in hist.items()}}
    elif cmd == "classify":
        pipeline.run_classify(ws)
    elif cmd == "evaluate":
        report = pipeline.run_evaluate(ws)
        print(report.to_text())
        return {"accuracy": report.pooled.accuracy()}
    elif cmd == "run-all":
        report = pipeline.run_all(ws, args.data_dir, synthetic=args.synthetic)
        print(report.to_text())
        return {"accuracy": report.pooled.accuracy()}
    return {}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _run(args)
    except AceGanError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    if result:
        sys.stderr.write(json.dumps({"status": "ok", "command": args.command, **result}, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
