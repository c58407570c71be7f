import json

import numpy as np
import pandas as pd
import pytest
import yaml

from gml_emd.config import load_config
from gml_emd.datasets import save_dataset, synth_generate
from gml_emd.experiment import GroundMetricExperiment, run_experiment, run_task
from gml_emd.models import SynthConfig, ValidationError

SMALL_DATASET = {"source": "synthetic", "d": 8, "n_train_per_class": 5, "n_test_per_class": 4}


def small_config(**changes):
    config = load_config()
    config.update({"seeds": [0, 1], "kappa": [1, 3], "dataset": dict(SMALL_DATASET),
                   "distances": ["l1", "l2", "hellinger"]})
    config.update(changes)
    return config


def test_baselines_only_report(tmp_path):
    manifest = run_experiment(small_config(), str(tmp_path))
    report = pd.read_csv(tmp_path / "report.csv")
    assert list(report.columns) == ["task", "distance", "kappa", "recall", "error"]
    assert set(report["distance"]) == {"l1", "l2", "hellinger"}
    assert len(report) == 2 * 3 * 2
    mean = pd.read_csv(tmp_path / "report_mean.csv")
    assert list(mean["distance"]) == ["l1", "l1", "l2", "l2", "hellinger", "hellinger"]
    assert [task["status"] for task in manifest["tasks"]] == ["ok", "ok"]
    assert (tmp_path / "manifest.yaml").exists()


def test_same_seed_gives_identical_report(tmp_path):
    config = small_config(distances=["l1", "emd_uniform", "emd_independence"])
    run_experiment(config, str(tmp_path / "a"))
    run_experiment(config, str(tmp_path / "b"), workers=2)
    first = (tmp_path / "a" / "report.csv").read_bytes()
    assert first == (tmp_path / "b" / "report.csv").read_bytes()


def test_gml_rows_and_initial_point_comparison(tmp_path):
    config = small_config(seeds=[3], distances=["emd_typical", "gml"],
                          gml={"k": [2, "all"], "p_max": 1, "q_max": 3})
    manifest = run_experiment(config, str(tmp_path))
    report = pd.read_csv(tmp_path / "report.csv")
    assert list(dict.fromkeys(report["distance"])) == ["emd_typical", "gml_k2", "gml_kall"]
    task = manifest["tasks"][0]
    assert set(task["descents"]) == {"gml_k2", "gml_kall"}
    assert set(task["init_criterion"]) == {"typical", "independence"}
    comparison = manifest["init_comparison"]
    assert comparison["typical_not_worse"] == (comparison["mean_criterion_typical"]
                                               <= comparison["mean_criterion_independence"])


def test_manifest_echoes_parameters(tmp_path):
    config = small_config(gml={"k": 3, "t0": 0.1, "p_max": 8, "q_max": 200})
    run_experiment(config, str(tmp_path))
    manifest = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert manifest["config"]["gml"] == {"k": 3, "t0": 0.1, "p_max": 8, "q_max": 200}
    assert manifest["config"]["seeds"] == [0, 1]


def test_failed_task_is_recorded(tmp_path):
    config = small_config(seeds=[0], kappa=[1, 50])
    manifest = run_experiment(config, str(tmp_path))
    task = manifest["tasks"][0]
    assert task["status"] == "failed"
    assert "kappa" in task["error"]
    assert pd.read_csv(tmp_path / "report.csv").empty


def test_file_dataset_is_resplit_per_seed(tmp_path):
    data = synth_generate(SynthConfig(d=8, n_train_per_class=6, n_test_per_class=6, seed=0))
    path = tmp_path / "data.json"
    save_dataset(data, str(path))
    config = small_config(dataset={"source": "file", "path": str(path), "n_train_per_class": 4})
    results = [run_task(config, seed) for seed in (0, 1)]
    assert [r.status for r in results] == ["ok", "ok"]
    assert len(results[0].rows) == 3 * 2


def test_invalid_config_is_rejected():
    with pytest.raises(ValidationError):
        GroundMetricExperiment(small_config(distances=["cosine"]))


def test_task_results_come_back_in_seed_order():
    experiment = GroundMetricExperiment(small_config(seeds=[5, 2, 9]), workers=2)
    results = experiment.run_tasks()
    assert [r.seed for r in results] == [5, 2, 9]
    recalls = [row["recall"] for r in results for row in r.rows]
    assert all(0.0 <= value <= 1.0 for value in recalls)
    assert np.isfinite(recalls).all()


def test_file_dataset_without_test_split_fails(tmp_path):
    data = synth_generate(SynthConfig(d=8, n_train_per_class=6, n_test_per_class=6, seed=0))
    histograms, labels = data.train
    path = tmp_path / "train_only.json"
    path.write_text(json.dumps({"d": 8, "histograms": histograms.tolist(), "labels": labels.tolist()}))
    config = small_config(dataset={"source": "file", "path": str(path)})
    result = run_task(config, 0)
    assert result.status == "failed"
    assert "test points" in result.error
    assert result.rows == []


@pytest.mark.slow
def test_learned_metric_beats_baselines_on_planted_data(tmp_path):
    config = load_config()
    config.update({"seeds": list(range(20)), "kappa": [3], "workers": 4,
                   "distances": ["l1", "l2", "hellinger", "emd_uniform", "gml"],
                   "gml": {"k": [3], "init": "typical"}})
    manifest = run_experiment(config, str(tmp_path))
    assert all(task["status"] == "ok" for task in manifest["tasks"])
    mean = pd.read_csv(tmp_path / "report_mean.csv").set_index("distance")["error"]
    for baseline in ["l1", "l2", "hellinger", "emd_uniform"]:
        assert mean["gml_k3"] < mean[baseline]


@pytest.mark.slow
def test_initial_point_comparison_over_seeds(tmp_path):
    config = load_config()
    config.update({"seeds": list(range(20)), "kappa": [3], "workers": 4, "distances": ["gml"],
                   "gml": {"k": [3], "p_max": 1, "q_max": 1}})
    manifest = run_experiment(config, str(tmp_path))
    per_task = [task["init_criterion"] for task in manifest["tasks"]]
    assert len(per_task) == 20
    comparison = manifest["init_comparison"]
    typical = np.mean([values["typical"] for values in per_task])
    independence = np.mean([values["independence"] for values in per_task])
    assert comparison["mean_criterion_typical"] == pytest.approx(typical)
    assert comparison["mean_criterion_independence"] == pytest.approx(independence)
    assert comparison["typical_not_worse"] == (typical <= independence)
