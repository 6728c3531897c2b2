"""Command-line entry point.

Subcommands: pretrain, prune, finetune, eval, run, sweep. A JSON config
file supplies the full PipelineConfig tree; individual flags override it.
Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, FormatError, NumericsError
from .pipeline import PipelineConfig, run_pipeline, run_sweep


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--arch", dest="architecture")
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int, help="sets weight/data/attack seeds")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--score-init", dest="score_init")
    p.add_argument("--scaling-k", dest="scaling_k", type=float)
    p.add_argument("--granularity", choices=["weight", "filter"])
    p.add_argument("--data-fraction", dest="data_fraction", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float)
    p.add_argument("--parallel-eval", dest="parallel_eval", action="store_true",
                   default=None)
    p.add_argument("--start-checkpoint", dest="start_checkpoint")
    p.add_argument("--metrics", help="comma list from benign,era,vra_t,vra_s")
    p.add_argument("--dataset", help="dataset spec as JSON, e.g. "
                   '\'{"kind":"idx","images":"...","labels":"..."}\'')
    for stage in ("pretrain", "prune", "finetune"):
        p.add_argument(f"--epochs-{stage}", type=int, dest=f"epochs_{stage}")
        p.add_argument(f"--objective-{stage}", dest=f"objective_{stage}",
                       choices=["benign", "adversarial", "ibp", "smoothing"])
        p.add_argument(f"--lr-{stage}", type=float, dest=f"lr_{stage}")
    p.add_argument("--epsilon", type=float, help="train/eval attack budget")


def _build_config(args) -> PipelineConfig:
    base = PipelineConfig.from_file(args.config).to_dict() if args.config \
        else PipelineConfig().to_dict()

    simple = ("architecture", "ratio", "output_dir", "score_init", "scaling_k",
              "granularity", "data_fraction", "batch_size", "time_limit",
              "parallel_eval", "start_checkpoint")
    for key in simple:
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if args.seed is not None:
        base["seeds"] = {"weights": args.seed, "data": args.seed, "attack": args.seed}
    if args.metrics is not None:
        base["metrics"] = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if args.dataset is not None:
        try:
            base["dataset"] = json.loads(args.dataset)
        except json.JSONDecodeError as e:
            raise ConfigError(f"--dataset is not valid JSON: {e}") from None
    for stage in ("pretrain", "prune", "finetune"):
        epochs = getattr(args, f"epochs_{stage}", None)
        if epochs is not None:
            base["epochs"][stage] = epochs
        obj = getattr(args, f"objective_{stage}", None)
        if obj is not None:
            base["objectives"][stage] = obj
        lr = getattr(args, f"lr_{stage}", None)
        if lr is not None:
            base["lrs"][stage] = lr
    if args.epsilon is not None:
        base["train_attack"]["epsilon"] = args.epsilon
        base["eval_attack"]["epsilon"] = args.epsilon
    return PipelineConfig.from_dict(base)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="robustprune",
        description="Robust-training-aware pruning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("pretrain", "train a dense network and stop"),
        ("prune", "pretrain (or resume) then optimize the pruning mask"),
        ("finetune", "run through fine-tuning (full pipeline from a checkpoint)"),
        ("eval", "evaluate a checkpoint, no training"),
        ("run", "full pipeline: pretrain, prune, finetune, evaluate"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)

    p = sub.add_parser("sweep", help="run an ablation sweep")
    _add_common(p)
    p.add_argument("--axis", required=True,
                   choices=["prune_epochs", "data_fraction", "scaling_k",
                            "ratio", "init_kind"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")

    args = parser.parse_args(argv)

    try:
        config = _build_config(args)
        if args.command == "pretrain":
            config.stop_after = "pretrain"
        elif args.command == "prune":
            config.stop_after = "prune"
        elif args.command == "eval":
            if not config.start_checkpoint:
                raise ConfigError("eval requires --start-checkpoint")

        if args.command == "sweep":
            values = [v.strip() for v in args.values.split(",")]
            if args.axis != "init_kind":
                values = [float(v) for v in values]
            seeds = [int(s) for s in args.seeds.split(",")]
            rows = run_sweep(config, args.axis, values, seeds)
            print(f"sweep complete: {len(rows)} rows -> {config.output_dir}/sweep.csv")
        else:
            result = run_pipeline(config)
            print(json.dumps(result.row, indent=1))
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, FormatError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except NumericsError as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
