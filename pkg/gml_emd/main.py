"""
Command-line interface for GML-EMD.
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from .config import build_params, build_synth_config, load_config, parse_k
from .criterion import class_weights, normalize_weights
from .datasets import load_dataset, save_dataset, synth_generate
from .evaluation import BASELINES, knn_eval
from .experiment import GroundMetricExperiment
from .metric import project_feasible, triangle_fix, uniform_metric
from .models import GmlError, TrainingSet
from .optimizer import INIT_KINDS, gml_descent, initial_point
from .output import (format_number, read_histogram, read_matrix_csv, save_matrix_csv,
                     save_trace_csv, write_frame_csv, write_matrix_csv)
from .transport import solve_transport

logger = logging.getLogger(__name__)


def _setup_logging(verbosity: int):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _training_set(path: str) -> TrainingSet:
    histograms, labels = load_dataset(path).train
    return normalize_weights(TrainingSet(histograms, class_weights(labels)))


def _emit_matrix(M: np.ndarray, out: Optional[str]):
    if out:
        save_matrix_csv(M, out)
        print(f"Metric saved to {out}", file=sys.stderr)
    else:
        write_matrix_csv(M, sys.stdout)


def _gml_section(args) -> dict:
    return (load_config(args.config).get("gml") or {}) if args.config else {}


def cmd_emd(args) -> int:
    r = read_histogram(args.r)
    c = read_histogram(args.c)
    M = read_matrix_csv(args.metric) if args.metric else uniform_metric(len(r))
    result = solve_transport(M, r, c)
    print(format_number(result.value))
    if args.plan:
        write_matrix_csv(result.plan.entries, sys.stdout)
    return 0


def cmd_project(args) -> int:
    H = read_matrix_csv(args.matrix)
    M = project_feasible(H, tol=args.tol) if args.feasible else triangle_fix(H, tol=args.tol)
    _emit_matrix(M, args.out)
    return 0


def cmd_init(args) -> int:
    section = _gml_section(args)
    params = build_params(section, init=args.kind, init_k=args.k, lam=args.lam, mix=args.mix)
    M0 = initial_point(_training_set(args.data), params.init, k=params.init_k,
                       lam=params.lam, mix=params.mix)
    _emit_matrix(M0, args.out)
    return 0


def cmd_train(args) -> int:
    section = _gml_section(args)
    params = build_params(section, k=args.k, t0=args.t0, p_max=args.pmax, q_max=args.qmax,
                          init=args.init, return_mode=args.return_mode)
    train = _training_set(args.data)
    M0 = (read_matrix_csv(args.initial) if args.initial
          else initial_point(train, params.init, k=params.init_k, lam=params.lam, mix=params.mix))
    result = gml_descent(train, M0, params)
    logger.info(f"Best criterion {result.trace.best_value:.6g} after {len(result.trace.steps)} steps")
    if args.trace:
        save_trace_csv(result.trace, args.trace, params.outer_window)
    _emit_matrix(result.metric, args.out)
    return 0


def cmd_synth(args) -> int:
    section = load_config(args.config).get("dataset", {}) if args.config else {}
    overrides = {"d": args.d, "n_classes": args.n_classes, "within_noise": args.within_noise,
                 "cross_signal": args.cross_signal}
    section.update({key: value for key, value in overrides.items() if value is not None})
    cfg = build_synth_config(section, seed=args.seed)
    save_dataset(synth_generate(cfg), args.out)
    print(f"Dataset saved to {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    data = load_dataset(args.data)
    if args.metric:
        dist = read_matrix_csv(args.metric)
    elif args.distance == "emd":
        dist = uniform_metric(data.dim)
    else:
        dist = args.distance
    curves = knn_eval(dist, data, args.kappa_max)
    frame = pd.DataFrame({"kappa": np.arange(1, curves.kappa_max + 1),
                          "recall": curves.recall, "error": curves.error})
    write_frame_csv(frame, sys.stdout)
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seeds:
        config["seeds"] = args.seeds
    experiment = GroundMetricExperiment(config, workers=args.workers)
    output_dir = args.output or config.get("output", "gml_output")
    manifest = experiment.run(output_dir)
    failed = sum(task["status"] != "ok" for task in manifest["tasks"])
    print(f"Experiment completed: {len(manifest['tasks']) - failed} tasks ok, {failed} failed.")
    print(f"Report saved to {output_dir}/report.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Ground metric learning for earth mover's distances")
    parser.add_argument("--verbose", "-v", action="count", default=0,
                        help="Log progress to stderr (-vv for debug detail)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("emd", help="Transportation distance between two histogram files")
    p.add_argument("r", help="First histogram file")
    p.add_argument("c", help="Second histogram file")
    p.add_argument("--metric", "-m", help="Ground metric CSV (default: ones off the diagonal)")
    p.add_argument("--plan", action="store_true", help="Also print the optimal transport plan")
    p.set_defaults(func=cmd_emd)

    p = sub.add_parser("project", help="Project a matrix file onto the metric cone")
    p.add_argument("matrix", help="Square matrix CSV")
    p.add_argument("--feasible", action="store_true", help="Also rescale into the unit Frobenius ball")
    p.add_argument("--tol", type=float, default=1e-7, help="Triangle fixing tolerance")
    p.add_argument("--out", "-o", help="Output CSV (default: stdout)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("init", help="Initial metric from independence or typical tables")
    p.add_argument("--data", required=True, help="Dataset file (JSON or CSV)")
    p.add_argument("--kind", choices=INIT_KINDS, default=None, help="Table kind (default: typical)")
    p.add_argument("--k", type=parse_k, default=None, help="Neighbourhood size or 'all' (default: all)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="Projection regularization")
    p.add_argument("--mix", type=float, default=None, help="Weight against the uniform metric")
    p.add_argument("--config", "-c", help="YAML config with a gml section")
    p.add_argument("--out", "-o", help="Output CSV (default: stdout)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="Learn a ground metric by projected subgradient descent")
    p.add_argument("--data", required=True, help="Dataset file (JSON or CSV)")
    p.add_argument("--k", type=parse_k, default=None, help="Neighbourhood size or 'all' (default: 3)")
    p.add_argument("--t0", type=float, default=None, help="Base step size (default: 0.1)")
    p.add_argument("--pmax", type=int, default=None, help="Outer iterations (default: 8)")
    p.add_argument("--qmax", type=int, default=None, help="Inner iterations (default: 200)")
    p.add_argument("--init", choices=INIT_KINDS, default=None, help="Initial point (default: typical)")
    p.add_argument("--initial", help="Initial metric CSV, overriding --init")
    p.add_argument("--return-mode", choices=("best", "last"), default=None,
                   help="Return the best or the last iterate (default: best)")
    p.add_argument("--trace", help="Write the descent trace CSV here")
    p.add_argument("--config", "-c", help="YAML config with a gml section")
    p.add_argument("--out", "-o", help="Output CSV (default: stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="Generate a planted-block synthetic dataset")
    p.add_argument("--out", "-o", required=True, help="Output JSON dataset")
    p.add_argument("--seed", type=int, default=None, help="Random seed (default: 0)")
    p.add_argument("--d", type=int, default=None, help="Histogram dimension")
    p.add_argument("--n-classes", type=int, default=None, help="Number of classes")
    p.add_argument("--within-noise", type=float, default=None, help="Within-block shuffling weight")
    p.add_argument("--cross-signal", type=float, default=None, help="Extra mass on own blocks")
    p.add_argument("--config", "-c", help="YAML config with a dataset section")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="Nearest-neighbour recall and error curves")
    p.add_argument("--data", required=True, help="Dataset file with a train/test split")
    p.add_argument("--distance", choices=BASELINES + ("emd",), default="emd",
                   help="Baseline distance, or emd with the uniform ground metric")
    p.add_argument("--metric", "-m", help="Ground metric CSV, overriding --distance")
    p.add_argument("--kappa-max", type=int, default=15, help="Largest neighbourhood evaluated")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="Run an experiment from a YAML config")
    p.add_argument("--config", "-c", help="Experiment YAML config")
    p.add_argument("--output", "-o", help="Output directory for the reports")
    p.add_argument("--workers", "-w", type=int, default=None, help="Worker processes")
    p.add_argument("--seeds", type=int, nargs="+", help="Override the configured seeds")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the command-line interface."""
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except (GmlError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
