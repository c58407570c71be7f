"""
GroundMetricExperiment orchestrates nearest-neighbour benchmarks of learned
and baseline distances over several seeds.
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .config import build_params, build_synth_config, gml_ks, validate_config
from .criterion import class_weights, eval_Ck, normalize_weights
from .datasets import load_dataset, resplit, synth_generate
from .evaluation import BASELINES, baseline_matrix, knn_curves
from .metric import uniform_metric
from .models import LabeledDataset, TrainingSet, ValidationError
from .optimizer import gml_descent, initial_point
from .output import average_frame, report_frame, save_frame_csv, save_manifest
from .transport import pairwise_emd

logger = logging.getLogger(__name__)


def _k_label(k: float) -> str:
    return "all" if math.isinf(k) else str(int(k))


@dataclass
class TaskResult:
    seed: int
    status: str = "ok"
    error: str = ""
    rows: List[Dict[str, Any]] = field(default_factory=list)
    init_values: Dict[str, float] = field(default_factory=dict)
    descents: Dict[str, Dict[str, Any]] = field(default_factory=dict)


def _task_dataset(config: Dict[str, Any], seed: int) -> LabeledDataset:
    dataset = config.get("dataset") or {}
    if dataset.get("source", "synthetic") == "file":
        data = load_dataset(dataset["path"])
        n_train = dataset.get("n_train_per_class")
        return resplit(data, int(n_train), seed) if n_train else data
    return synth_generate(build_synth_config(dataset, seed=seed))


def run_task(config: Dict[str, Any], seed: int) -> TaskResult:
    """
    One benchmark task: build the data for a seed, compute every configured
    distance between test and train points and record the kNN curves.
    Failures are caught and reported in the result.
    """
    result = TaskResult(seed=seed)
    try:
        data = _task_dataset(config, seed)
        train_x, train_y = data.train
        test_x, test_y = data.test
        if len(test_x) == 0:
            raise ValidationError("dataset has no test points; set dataset.n_train_per_class to split it")
        kappa = sorted(config["kappa"])
        kappa_max = max(kappa)
        if kappa_max > len(train_x):
            raise ValidationError(f"kappa {kappa_max} exceeds the {len(train_x)} train points")
        train = normalize_weights(TrainingSet(train_x, class_weights(train_y)))
        gml_section = config.get("gml") or {}
        base = build_params(gml_section, k=gml_ks(config)[0])
        initial_points: Dict[str, np.ndarray] = {}

        def initial(kind: str) -> np.ndarray:
            if kind not in initial_points:
                initial_points[kind] = initial_point(train, kind, k=base.init_k, lam=base.lam, mix=base.mix)
            return initial_points[kind]

        metrics: List[tuple] = []
        for name in config["distances"]:
            if name in BASELINES:
                metrics.append((name, baseline_matrix(name, test_x, train_x)))
            elif name == "emd_uniform":
                metrics.append((name, pairwise_emd(test_x, train_x, uniform_metric(train.dim))))
            elif name in ("emd_independence", "emd_typical"):
                M = initial(name.split("_", 1)[1])
                metrics.append((name, pairwise_emd(test_x, train_x, M)))
            elif name == "gml":
                for k in gml_ks(config):
                    params = build_params(gml_section, k=k)
                    descent = gml_descent(train, initial(params.init), params)
                    label = f"gml_k{_k_label(k)}"
                    result.descents[label] = {
                        "best_value": float(descent.trace.best_value),
                        "last_value": float(descent.trace.last_value),
                        "outer_rounds": len(descent.trace.outer) - 1,
                        "inner_steps": len(descent.trace.steps),
                    }
                    metrics.append((label, pairwise_emd(test_x, train_x, descent.metric)))

        if "gml" in config["distances"]:
            k = gml_ks(config)[0]
            for kind in ("typical", "independence"):
                result.init_values[kind] = float(eval_Ck(train, initial(kind), k))

        for name, D in metrics:
            curves = knn_curves(D, train_y, test_y, kappa_max)
            for x in kappa:
                result.rows.append({"task": seed, "distance": name, "kappa": x,
                                    "recall": float(curves.recall[x - 1]),
                                    "error": float(curves.error[x - 1])})
        logger.info(f"Task {seed}: evaluated {len(metrics)} distances")
    except Exception as e:
        logger.warning(f"Task {seed} failed: {e}")
        result.status = "failed"
        result.error = f"{type(e).__name__}: {e}"
        result.rows = []
    return result


class GroundMetricExperiment:
    def __init__(self, config: Dict[str, Any], workers: Optional[int] = None):
        """
        Initialize the experiment from a validated configuration.

        Args:
            config: Experiment configuration (see config.load_config)
            workers: Number of worker processes, overriding config['workers']
        """
        problems = validate_config(config)
        if problems:
            raise ValidationError("invalid experiment config: " + "; ".join(problems))
        self.config = config
        self.workers = workers or config.get("workers", 1)
        self.results: List[TaskResult] = []

    def run_tasks(self) -> List[TaskResult]:
        """Run every seed; results come back in seed order whatever the worker count."""
        seeds = list(self.config["seeds"])
        logger.info(f"Running {len(seeds)} tasks on {self.workers} workers")
        if self.workers == 1:
            self.results = [run_task(self.config, seed) for seed in seeds]
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                self.results = list(pool.map(run_task, [self.config] * len(seeds), seeds))
        return self.results

    def manifest(self) -> Dict[str, Any]:
        """Run parameters, per-task status and the initial point comparison."""
        tasks = []
        for result in self.results:
            entry = {"seed": result.seed, "status": result.status}
            if result.error:
                entry["error"] = result.error
            if result.init_values:
                entry["init_criterion"] = result.init_values
            if result.descents:
                entry["descents"] = result.descents
            tasks.append(entry)
        manifest = {
            "version": __version__,
            "generated": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
            "config": self.config,
            "tasks": tasks,
        }
        with_inits = [r.init_values for r in self.results if r.status == "ok" and r.init_values]
        if with_inits:
            typical = float(np.mean([v["typical"] for v in with_inits]))
            independence = float(np.mean([v["independence"] for v in with_inits]))
            manifest["init_comparison"] = {
                "mean_criterion_typical": typical,
                "mean_criterion_independence": independence,
                "typical_not_worse": typical <= independence,
            }
            if typical > independence:
                logger.warning("Typical-table initial points have a higher mean criterion "
                               "than independence-table ones")
        return manifest

    def run(self, output_dir: Optional[str] = None) -> Dict[str, Any]:
        """
        Run every task and write report.csv, report_mean.csv and manifest.yaml.

        Args:
            output_dir: Directory for the outputs, overriding config['output']

        Returns:
            The manifest
        """
        output_dir = output_dir or self.config.get("output", "gml_output")
        self.run_tasks()
        rows = [row for result in self.results for row in result.rows]
        frame = report_frame(rows)
        save_frame_csv(frame, os.path.join(output_dir, "report.csv"))
        if rows:
            save_frame_csv(average_frame(frame), os.path.join(output_dir, "report_mean.csv"))
        manifest = self.manifest()
        save_manifest(manifest, os.path.join(output_dir, "manifest.yaml"))
        failed = sum(r.status != "ok" for r in self.results)
        logger.info(f"Experiment completed: {len(self.results) - failed} tasks ok, {failed} failed")
        return manifest


def run_experiment(config: Dict[str, Any], output_dir: Optional[str] = None,
                   workers: Optional[int] = None) -> Dict[str, Any]:
    return GroundMetricExperiment(config, workers=workers).run(output_dir)
