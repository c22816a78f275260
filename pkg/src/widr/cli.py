"""``widr`` command line: run pipeline stages from a config file.

Exit status: 0 success, 1 validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from widr import pipeline
from widr.config import ConfigError, load_config
from widr.dataset import ManifestError

COMMANDS = {
    "synth": pipeline.run_synth,
    "preprocess": pipeline.run_preprocess,
    "train": pipeline.run_train,
    "extract": pipeline.run_extract,
    "encode": pipeline.run_encode,
    "eval": pipeline.run_eval,
    "pipeline": pipeline.run_pipeline,
    "report": pipeline.run_report,
    "sweep": pipeline.run_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="widr", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="INI-style pipeline config")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="seed for synthesis, training and k-means")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"synth.seed={args.seed}", f"train.seed={args.seed}", f"encode.kmeans_seed={args.seed}"]
    try:
        cfg = load_config(args.config, overrides)
        result = COMMANDS[args.command](cfg)
    except (ConfigError, ManifestError) as exc:
        print(f"widr: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"widr: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    if args.command == "eval":
        print(f"mAP {result.map_value:.4f} " + " ".join(
            f"top{k} {'N/A' if v is None else f'{v:.4f}'}" for k, v in result.hard_top_k.items()
        ))
    return 0


if __name__ == "__main__":
    sys.exit(main())
