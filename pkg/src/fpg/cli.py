"""Command-line interface: synth, prep, train, generate, evaluate, ablate.

Exit code 0 means every invariant of the invoked pipeline held; on failure
a machine-readable error record is printed to stderr and the exit code is
nonzero.  ``FPG_LOG_LEVEL`` controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .experiment import (
    ConfigError,
    cmd_ablate,
    cmd_evaluate,
    cmd_generate,
    cmd_prep,
    cmd_synth,
    cmd_train,
    load_config,
    resolve_config,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpg",
        description="personalized, fact-preserving headline generation experiments",
    )
    parser.add_argument("--config", help="JSON experiment configuration file")
    parser.add_argument("--seed", type=int, help="override the global seed")
    parser.add_argument("--out", help="override paths.out_dir")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="write the synthetic benchmark corpus/clicks/references")
    prep = sub.add_parser("prep", help="build pretraining, training and contrastive sets")
    prep.add_argument("--limit-l", type=int, help="per-news user cap for the training set")

    train = sub.add_parser("train", help="run the staged training schedule")
    train.add_argument("--no-history", action="store_true", help="train the plain ablation")
    train.add_argument("--history-encoder", choices=("gru", "cnn", "sa"))

    gen = sub.add_parser("generate", help="beam-search headlines for the test references")
    gen.add_argument("--checkpoint", help="parameter file to decode with")
    gen.add_argument("--no-history", action="store_true")
    gen.add_argument("--beam-width", type=int)

    sub.add_parser("evaluate", help="score a predictions file").add_argument(
        "--predictions", help="predictions file (default: out_dir/predictions.jsonl)"
    )
    sub.add_parser("ablate", help="train/evaluate gru, cnn, sa and the no-history baseline")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FPG_LOG_LEVEL", "WARNING").upper())
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else resolve_config({})
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out is not None:
            config["paths"]["out_dir"] = args.out
        if getattr(args, "limit_l", None) is not None:
            config["data"]["limit_l"] = args.limit_l
        if getattr(args, "beam_width", None) is not None:
            config["decode"]["beam_width"] = args.beam_width

        if args.command == "synth":
            cmd_synth(config)
        elif args.command == "prep":
            cmd_prep(config)
        elif args.command == "train":
            cmd_train(config, no_history=args.no_history, history_encoder=args.history_encoder)
        elif args.command == "generate":
            cmd_generate(config, checkpoint=args.checkpoint, no_history=args.no_history)
        elif args.command == "evaluate":
            cmd_evaluate(config, predictions_path=args.predictions)
        elif args.command == "ablate":
            cmd_ablate(config)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
