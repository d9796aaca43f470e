"""Command-line entry points: run, train, summarize, gen-trace.

Every subcommand exits 0 on success and nonzero with a diagnostic on
stderr otherwise.  ``run`` executes a full comparison experiment from
a config file, ``train`` produces model checkpoints only,
``summarize`` compares finished run directories, and ``gen-trace``
writes a synthetic arrival-rate trace as CSV.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .harness import (
    ComparisonError,
    ConfigError,
    _train_agent_for,
    _train_predictor_for,
    format_summary_table,
    load_config,
    run_experiment,
    summarize,
    write_training_curve_csv,
)
from .workload import Pattern, generate_trace


def _parse_params(pairs) -> dict:
    params = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValueError(f"--param expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        params[key] = float(value) if key != "waveform" else value
    return params


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    summary = run_experiment(cfg, output_dir=args.out)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    print(f"wrote {out}/summary.json")
    for algo in summary["meta"]["algorithms"]:
        r = summary["results"][algo]
        print(
            f"  {algo:<8} reward {r['mean_reward']:+.4f}  qos {r['mean_qos']:+.4f}  "
            f"cost {r['mean_cost']:.4f}  objective {r['mean_objective']:+.4f}"
        )
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    predict_fn = None
    if cfg.predictor.enabled:
        predictor_model, report = _train_predictor_for(cfg)
        predictor_model.save(out / "predictor.json")
        if report is not None:
            print(f"predictor: val smape {report.val_smape:.2f}% over {report.num_val} windows")
        from .predictor import predict_peak

        predict_fn = lambda window: predict_peak(predictor_model, window)
    training = _train_agent_for(cfg, cfg.space, predict_fn)
    training.model.save(out / "policy.json")
    if training.curves:
        write_training_curve_csv(out / "training_curve.csv", training.curves)
        first, last = training.curves[0], training.curves[-1]
        print(
            f"agent: {len(training.curves)} episodes, reward {first.mean_reward:+.4f} -> "
            f"{last.mean_reward:+.4f}, expert fallbacks {training.expert_fallbacks}"
        )
    print(f"wrote {out}/policy.json")
    return 0


def _cmd_summarize(args) -> int:
    report = summarize(args.run_dirs)
    print(format_summary_table(report))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.json}")
    return 0


def _cmd_gen_trace(args) -> int:
    params = _parse_params(args.param)
    trace = generate_trace(args.pattern, args.duration, seed=args.seed, params=params or None)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rate"])
        for rate in trace.rates:
            writer.writerow([repr(float(rate))])
    print(f"wrote {args.out} ({len(trace.rates)} seconds, pattern {trace.pattern})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pipetune",
        description="Simulate and compare per-stage configuration policies for inference pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full comparison experiment from a config file")
    p_run.add_argument("--config", required=True, help="experiment config YAML")
    p_run.add_argument("--out", default=None, help="override the config's output_dir")
    p_run.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p_run.set_defaults(func=_cmd_run)

    p_train = sub.add_parser("train", help="train predictor and agent, write checkpoints")
    p_train.add_argument("--config", required=True, help="experiment config YAML")
    p_train.add_argument("--out", default=None, help="override the config's output_dir")
    p_train.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p_train.set_defaults(func=_cmd_train)

    p_sum = sub.add_parser("summarize", help="compare algorithms across run directories")
    p_sum.add_argument("run_dirs", nargs="+", help="directories written by `pipetune run`")
    p_sum.add_argument("--json", default=None, help="also write the report as JSON")
    p_sum.set_defaults(func=_cmd_summarize)

    p_gen = sub.add_parser("gen-trace", help="write a synthetic arrival-rate trace as CSV")
    p_gen.add_argument(
        "--pattern",
        required=True,
        choices=[p.value for p in Pattern if p is not Pattern.FROM_FILE],
    )
    p_gen.add_argument("--duration", type=int, required=True, help="trace length in seconds")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.add_argument(
        "--param",
        action="append",
        metavar="KEY=VALUE",
        help="pattern parameter override, repeatable (e.g. --param high=120)",
    )
    p_gen.set_defaults(func=_cmd_gen_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ComparisonError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
