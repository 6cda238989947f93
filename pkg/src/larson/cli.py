"""Command line entry points: train, eval, selftest."""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .objectives import metrics_table
from .pipeline import evaluate_checkpoint, train, train_repeated
from .selftest import run_all


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="larson")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and save the best checkpoint")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--train", required=True, dest="train_dir")
    p_train.add_argument("--dev", required=True, dest="dev_dir")
    p_train.add_argument("--out", required=True, dest="out_dir")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--repeat", type=int, default=1, help="train N seeded runs and report the mean dev F1")
    p_train.add_argument("--dump-attention", default=None, dest="dump_attention")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a corpus directory")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, dest="data_dir")
    p_eval.add_argument("--train-facts", default=None, dest="train_facts")
    p_eval.add_argument("--dump-attention", default=None, dest="dump_attention")

    sub.add_parser("selftest", help="run the oracle and gradient suites")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "train":
        config = load_config(args.config)
        if args.repeat > 1:
            results = train_repeated(
                config, args.train_dir, args.dev_dir, args.out_dir,
                repeats=args.repeat, seed=args.seed, log=print,
            )
            scores = [r.best_dev_f1 for r in results]
            for k, score in enumerate(scores):
                print(f"run {k}: best dev F1 {100 * score:.2f}")
            print(f"mean dev F1 over {len(scores)} runs: {100 * sum(scores) / len(scores):.2f}")
            return 0
        result = train(
            config,
            args.train_dir,
            args.dev_dir,
            args.out_dir,
            seed=args.seed,
            dump_attention=args.dump_attention,
            log=print,
        )
        print(f"checkpoint: {result.checkpoint_path}")
        print(f"best dev F1 {100 * result.best_dev_f1:.2f} at step {result.best_step}")
        print(metrics_table(result.final_dev_metrics))
        return 0
    if args.command == "eval":
        metrics = evaluate_checkpoint(
            args.checkpoint,
            args.data_dir,
            train_facts_path=args.train_facts,
            dump_attention=args.dump_attention,
        )
        print(json.dumps(metrics))
        print(metrics_table(metrics))
        return 0
    if args.command == "selftest":
        return 0 if run_all() else 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
