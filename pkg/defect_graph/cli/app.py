from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Sequence

from ..errors import DefectGraphError
from ..ingest import SyntheticConfig
from . import commands

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def _add_global(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed for every random draw (default 0)")
    parser.add_argument("--out-dir", default=".", help="directory for every written file (default: cwd)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for repetitions (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings and errors only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defect_graph",
        description="Multi-view dependency graphs and graph-network defect prediction.",
    )
    _add_global(parser)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("build-graph", help="build and export CDG / DDG / MSDG edge lists")
    p.add_argument("--dataset", help="dataset directory (metrics.csv, deps.csv, ownership.csv, manifest.json)")
    p.add_argument("--metrics", help="metrics CSV (instead of --dataset)")
    p.add_argument("--deps", help="dependency CSV (instead of --dataset)")
    p.add_argument("--ownership", help="ownership CSV (instead of --dataset)")
    p.add_argument("--manifest", help="manifest JSON; inferred from the metrics header when omitted")
    p.add_argument("--name", help="output name (default: dataset name)")
    p.add_argument("--view", default="all", choices=("cdg", "ddg", "msdg", "all"))
    p.add_argument("--normalize", action="store_true", help="export min-max normalized weights")
    p.add_argument("--sum-normalized", action="store_true", help="build MSDG from normalized view weights")
    p.set_defaults(func=commands.cmd_build_graph)

    p = sub.add_parser("experiment", help="run a WPDP or CPDP campaign from a config file")
    p.add_argument("config", help="key=value run config")
    p.add_argument("--plot", action="store_true", help="also write a boxplot of the per-repetition measures")
    p.add_argument("--dump-predictions", action="store_true", help="write per-repetition prediction CSVs")
    p.add_argument("--dump-embeddings", action="store_true", help="write per-repetition node representation CSVs")
    p.set_defaults(func=commands.cmd_experiment)

    p = sub.add_parser("tune", help="random hyperparameter search")
    p.add_argument("config", help="key=value run config (model keys are the search base)")
    p.add_argument("--budget", type=int, default=20, help="number of sampled configs (default 20)")
    p.add_argument("--reps", type=int, default=3, help="repetitions per sampled config (default 3)")
    p.set_defaults(func=commands.cmd_tune)

    p = sub.add_parser("analyze", help="same-label weight share and inter-class distance")
    p.add_argument("--graphs", nargs="+", help="graph sidecar JSON files from build-graph")
    p.add_argument("--labels", help="dataset directory or CSV with file,label columns")
    p.add_argument("--features", nargs="+", help="file,label,<features...> CSV dumps")
    p.add_argument("--already-normalized", action="store_true", help="skip row-wise min-max scaling of features")
    p.add_argument("--name", help="dataset name used in the output files")
    p.set_defaults(func=commands.cmd_analyze)

    p = sub.add_parser("compare", help="paired tests between two experiment reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.set_defaults(func=commands.cmd_compare)

    defaults = SyntheticConfig()
    p = sub.add_parser("synth", help="generate synthetic dataset directories")
    p.add_argument("--n-nodes", type=int, default=defaults.n_nodes)
    p.add_argument("--defect-rate", type=float, default=defaults.defect_rate)
    p.add_argument("--homophily", type=float, default=defaults.homophily)
    p.add_argument("--n-developers", type=int, default=defaults.n_developers)
    p.add_argument("--mean-degree", type=float, default=defaults.mean_degree)
    p.add_argument("--n-metrics", type=int, default=defaults.n_metrics)
    p.add_argument("--separation", type=float, default=defaults.separation)
    p.add_argument("--shared-signal", type=float, default=defaults.shared_signal,
                   help="fraction of files whose label shows in both views")
    p.add_argument("--project", default=defaults.project)
    p.add_argument("--versions", default=defaults.version, help="comma-separated version names")
    p.set_defaults(func=commands.cmd_synth)

    p = sub.add_parser("score-baseline", help="turn baseline prediction CSVs into a report")
    p.add_argument("--dataset", required=True, help="dataset directory holding the labels")
    p.add_argument("--predictions", nargs="+", required=True, help="file,prob_defective CSV per repetition")
    p.add_argument("--method", required=True, help="baseline name used in reports")
    p.add_argument("--protocol", default="wpdp", choices=("wpdp", "cpdp"))
    p.set_defaults(func=commands.cmd_score_baseline)

    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def main(argv: Sequence[str] | None = None) -> int:
    '''
    Parse `argv` and run one command.

    Returns:
        0 on success, 2 for usage and validation errors, 1 for runtime failures.
    '''
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    _configure_logging(args)

    try:
        if args.jobs < 1:
            parser.error(f"--jobs must be >= 1, got {args.jobs}")
        os.makedirs(args.out_dir, exist_ok=True)
        return int(args.func(args) or 0)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    except DefectGraphError as e:
        print(f"error: {e}", file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        return e.exit_code
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
