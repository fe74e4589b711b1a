"""Command-line entry point: ``bda <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml
from pydantic import ValidationError

from bev_domain_adapt import pipeline
from bev_domain_adapt.config.base import DEFAULT_CONFIG_PATH, LOG_LEVEL
from bev_domain_adapt.config.loader import load_experiment_config
from bev_domain_adapt.evaluation import format_table, metrics_table
from bev_domain_adapt.exceptions import DataError, NumericalError, ShapeError
from bev_domain_adapt.models import ExperimentConfig, PTDAFlags

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ptda_flags(text: str) -> PTDAFlags:
    try:
        return PTDAFlags.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=DEFAULT_CONFIG_PATH, help="Experiment YAML file.")
    common.add_argument("--seed", type=int, help="Master seed; overrides the config's seeds.")
    common.add_argument("--out", type=Path, help="Output directory; defaults to the config's output_dir.")
    common.add_argument("--ptda", type=_ptda_flags, help="Comma list of shift,intensity,velocity,remap (or none/all).")
    common.add_argument("--lambda", dest="lam", type=float, help="Weight of the domain losses.")
    common.add_argument("--epochs", type=int, help="Training epochs.")
    common.add_argument("--dim", type=int, help="Domain embedding dimension.")
    common.add_argument("--precision", choices=("f32", "f64"), help="Tensor precision.")
    common.add_argument("--log-level", default=LOG_LEVEL, type=str.upper, help="Logging level.")
    common.add_argument("--quiet", action="store_true", help="Disable progress bars.")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="bda", description="Multi-source domain-adaptive BEV detection on synthetic domains.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    commands.add_parser("synth", parents=[common], help="Generate frames for every domain.")
    ptda = commands.add_parser("ptda", parents=[common], help="Apply the PTDA strategies to generated frames.")
    ptda.add_argument("--frames", type=Path, help="Directory of generated frames; defaults to <out>/frames.")

    train = commands.add_parser("train", parents=[common], help="Train a detector and write a checkpoint.")
    train.add_argument("--run", help="Run directory name; defaults to hsc_dc, source_only or oracle.")
    mode = train.add_mutually_exclusive_group()
    mode.add_argument("--source-only", action="store_true", help="Train without the domain classifiers.")
    mode.add_argument("--plain", action="store_true", help="Use unconditioned domain classifiers.")
    mode.add_argument("--oracle", action="store_true", help="Train one head on labeled target frames.")

    for name, help_text in (
        ("build-graph", "Build the prototype graph from a checkpoint."),
        ("infer", "Run every head on the held-out target frames."),
        ("fuse", "Fuse per-source detections."),
    ):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("--run", default=pipeline.HSC_DC_RUN, help="Run directory name.")
        if name == "fuse":
            sub.add_argument("--uniform", action="store_true", help="Weight by scores only, ignoring the graph.")

    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate detections against target ground truth.")
    evaluate.add_argument("--run", default=pipeline.HSC_DC_RUN, help="Run directory name.")
    evaluate.add_argument("--detections", type=Path, help="Detection file; defaults to <out>/<run>/detections/fused.jsonl.")
    evaluate.add_argument("--name", default="", help="Row label of the report.")

    commands.add_parser("e2e", parents=[common], help="Run the full chain for every seed and print the comparison.")
    commands.add_parser("ptda-ablation", parents=[common], help="Compare cumulative PTDA strategies without adaptation.")
    commands.add_parser("stats", parents=[common], help="Print per-domain annotation statistics.")

    plot = commands.add_parser("plot", parents=[common], help="Write a BEV figure of one target frame.")
    plot.add_argument("--frame", type=int, default=0, help="Index of the held-out target frame.")
    plot.add_argument("--run", default=pipeline.HSC_DC_RUN, help="Run with the adapted detections.")
    plot.add_argument("--baseline", default=pipeline.SOURCE_ONLY_RUN, help="Run with the baseline detections.")
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    return pipeline.apply_overrides(
        config,
        seed=args.seed,
        ptda=args.ptda,
        lam=args.lam,
        epochs=args.epochs,
        dim=args.dim,
        precision=args.precision,
        output_dir=args.out,
    )


def _train(args, config, domains, out: Path, seed: int) -> None:
    if args.source_only:
        run = args.run or pipeline.SOURCE_ONLY_RUN
        adaptation = config.adaptation.model_copy(update={"lambda_": 0.0})
    elif args.plain:
        run = args.run or pipeline.PLAIN_DC_RUN
        adaptation = config.adaptation.model_copy(update={"conditioning": "plain"})
    else:
        run = args.run or (pipeline.ORACLE_RUN if args.oracle else pipeline.HSC_DC_RUN)
        adaptation = None
    stem = pipeline.train_stage(config, domains, out, seed, run=run, adaptation=adaptation, oracle=args.oracle, quiet=args.quiet)
    print(f"checkpoint: {stem.with_suffix('.bin')}")


def run_command(args: argparse.Namespace) -> None:
    config = _resolve_config(args)
    out = Path(config.output_dir)
    seed = config.seeds[0]
    if args.command == "e2e":
        print(format_table(pipeline.e2e(config, out, quiet=args.quiet)))
        return
    if args.command == "ptda-ablation":
        print(format_table(pipeline.ptda_ablation(config, out, quiet=args.quiet)))
        return

    domains = pipeline.load_domains(config)
    pipeline.write_resolved_config(out, config.model_copy(update={"seeds": [seed]}))
    if args.command == "synth":
        pipeline.synth_stage(config, domains, seed, out)
    elif args.command == "ptda":
        pipeline.ptda_stage(config, domains, out, frames_dir=args.frames)
    elif args.command == "train":
        _train(args, config, domains, out, seed)
    elif args.command == "build-graph":
        graph = pipeline.build_graph_stage(config, domains, out, run=args.run)
        print(f"prototype graph: {graph.num_classes} classes x {len(graph.domain_names)} domains")
    elif args.command == "infer":
        pipeline.infer_stage(config, domains, out, run=args.run)
    elif args.command == "fuse":
        pipeline.fuse_stage(config, domains, out, run=args.run, uniform=args.uniform)
    elif args.command == "eval":
        detections = args.detections or out / args.run / pipeline.DETECTIONS_DIR / pipeline.FUSED_FILE
        report = pipeline.eval_stage(
            config, domains, out, detections, name=args.name or args.run, report_path=pipeline.metrics_path(detections)
        )
        print(format_table(metrics_table([report])))
    elif args.command == "stats":
        print(pipeline.stats_stage(config, domains, out, seed).to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    elif args.command == "plot":
        path = pipeline.plot_stage(config, domains, out, frame_index=args.frame, run=args.run, baseline=args.baseline)
        print(f"figure: {path}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(format=LOG_FORMAT, level=getattr(logging, args.log_level, logging.INFO))
    try:
        run_command(args)
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (DataError, ShapeError, ValidationError, ValueError, yaml.YAMLError, FileNotFoundError) as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
