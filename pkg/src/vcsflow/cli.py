"""Command-line interface: ``vcsflow <subcommand> [options]``.

Verbosity is taken from ``VCSFLOW_LOG_LEVEL`` (e.g. ``DEBUG``, ``INFO``,
``WARNING``; default ``WARNING``) unless ``-v`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import harness
from .exceptions import VcsFlowError

LOG_ENV = "VCSFLOW_LOG_LEVEL"


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    common.add_argument("--data-dir", help="directory holding recording.csv and annotations.json")
    common.add_argument("--out-dir", help="directory for models, instances and reports")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.epochs=20 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output")

    parser = argparse.ArgumentParser(prog="vcsflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic recording and its annotations")
    sub.add_parser("segment", parents=[common], help="extract pattern instances from every split")
    sub.add_parser("fit-pr", parents=[common], help="fit the polynomial-regression baseline")
    sub.add_parser("train-cnn", parents=[common], help="train the causal CNN")
    ev = sub.add_parser("evaluate", parents=[common], help="EP reports for saved models")
    ev.add_argument("--model", action="append", default=[], help="model file (repeatable; default: both)")
    sub.add_parser("report", parents=[common], help="assemble the model comparison table")
    pipe = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    pipe.add_argument("--regenerate", action="store_true", help="regenerate data even if present")
    return parser


def _configure_logging(verbose: int) -> None:
    if verbose:
        level = logging.INFO if verbose == 1 else logging.DEBUG
    else:
        level = getattr(logging, os.environ.get(LOG_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _format_table(rows) -> str:
    header = ["metric"] + [f"{m}_{s}" for m in harness.MODEL_NAMES for s in harness.REPORT_SPLITS]
    lines = ["  ".join(f"{h:>12}" for h in header)]
    for row in rows:
        cells = [f"{row[0]:>12}"] + [f"{'-':>12}" if v is None else f"{v:12.5g}" for v in row[1:]]
        lines.append("  ".join(cells))
    return "\n".join(lines)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        cfg = harness.load_config(args.config, args.set, seed=args.seed, data_dir=args.data_dir,
                                  out_dir=args.out_dir)
        echo = harness.write_effective_config(cfg)
        print(f"effective config: {echo}  ({harness.provenance_line(cfg)})")
        if args.command == "generate":
            out = harness.cmd_generate(cfg)
            print(f"wrote {cfg.recording_path} ({out['n_samples']} samples) and {cfg.annotations_path}")
            print(json.dumps(out["pattern_counts"], indent=2))
        elif args.command == "segment":
            out = harness.cmd_segment(cfg)
            print(json.dumps(out["counts"], indent=2))
            for name, q in out["quality"].items():
                print(f"{name}: precision {q['precision']:.3f} recall {q['recall']:.3f}")
        elif args.command == "fit-pr":
            model = harness.cmd_fit_pr(cfg)
            print(f"PR model written, condition number {model.condition_number:.4g}")
        elif args.command == "train-cnn":
            model = harness.cmd_train_cnn(cfg)
            print(f"CNN model written ({model.n_parameters} parameters, best epoch {model.meta['best_epoch']})")
        elif args.command == "evaluate":
            reports = harness.cmd_evaluate(cfg, args.model or None)
            for (name, split), rep in reports.items():
                print(f"{name} {split}: MSE {rep.mse:.6g}")
        elif args.command == "report":
            print(_format_table(harness.cmd_report(cfg)))
        elif args.command == "pipeline":
            out = harness.cmd_pipeline(cfg, regenerate=args.regenerate)
            print(_format_table(out["comparison"]))
            print("stage timings (s): " + ", ".join(f"{k} {v:.1f}" for k, v in out["timings_s"].items()))
    except (VcsFlowError, OSError, ValueError, KeyError) as exc:
        print(f"vcsflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
