import json
from pathlib import Path

import numpy as np
import pytest

from anomaly_pipeline.cli import main
from anomaly_pipeline.pipeline import PipelineConfig, run

TINY_SCENARIO = {
    "n_segments": 3,
    "n_days": 42,
    "incident_rate": 0.35,
    "seed": 2,
}


def tiny_config_file(tmp_path: Path, **overrides) -> Path:
    cfg = {"scenario": TINY_SCENARIO, "epochs": 5, "hidden": 8, **overrides}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    cfg_path = tiny_config_file(tmp)
    out = tmp / "run"
    assert main(["all", "--config", str(cfg_path), "--out", str(out)]) == 0
    return tmp, cfg_path, out


def test_all_produces_full_artifact_tree(full_run):
    _, _, out = full_run
    for stage in ["simulate", "ingest", "featurize", "label", "split", "train", "tune", "evaluate", "report"]:
        assert (out / stage / "manifest.json").exists(), stage
    assert (out / "inputs" / "speed_5min.csv").exists()
    assert (out / "label" / "labels.csv").exists()
    assert (out / "tune" / "selection_trace.csv").exists()
    summary = json.loads((out / "report" / "summary.json").read_text())
    assert summary["n_targets"] >= 1
    assert (out / "config_echo.json").exists()


def test_rerun_is_byte_deterministic(full_run):
    tmp, cfg_path, out = full_run
    out2 = tmp / "run2"
    assert main(["all", "--config", str(cfg_path), "--out", str(out2)]) == 0
    for stage in ["simulate", "ingest", "featurize", "label", "split", "train", "tune", "evaluate", "report"]:
        a = json.loads((out / stage / "manifest.json").read_text())
        b = json.loads((out2 / stage / "manifest.json").read_text())
        assert a["outputs"] == b["outputs"], f"stage {stage} is not deterministic"


def test_skipped_targets_are_recorded(full_run):
    _, _, out = full_run
    tune_manifest = json.loads((out / "tune" / "manifest.json").read_text())
    evaluated = json.loads((out / "evaluate" / "pooled.json").read_text())
    # every modellable target either got a threshold or a recorded skip reason
    assert set(tune_manifest["notes"]["skipped"]) | set(evaluated) == {"tmc_01", "tmc_02"}


def test_alert_and_eval_outputs_have_schema(full_run):
    import pandas as pd

    _, _, out = full_run
    evaluated = json.loads((out / "evaluate" / "pooled.json").read_text())
    target = sorted(evaluated)[0]
    alerts = pd.read_csv(out / "evaluate" / target / "alerts.csv")
    assert list(alerts.columns) == ["segment_id", "timestamp", "score_min", "alert"]
    curve = pd.read_csv(out / "evaluate" / target / "pr_curve.csv")
    assert len(curve) == 99 * 6
    report = pd.read_csv(out / "evaluate" / target / "eval_report.csv")
    assert {"DR", "FAR", "MTTD_minutes"} <= set(report["name"])


def test_stage_order_enforced(tmp_path):
    cfg_path = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    code = main(["evaluate", "--config", str(cfg_path), "--out", str(out)])
    assert code == 1


def test_stage_order_error_names_missing_stage(tmp_path, capsys):
    cfg_path = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    main(["ingest", "--config", str(cfg_path), "--out", str(out)])
    err = capsys.readouterr().err
    assert "simulate" in err


def test_unreasonable_thresholds_surface_from_label_stage(tmp_path, capsys):
    cfg_path = tiny_config_file(tmp_path, theta1=0.0, theta2=0.0)
    out = tmp_path / "run"
    for stage in ["simulate", "ingest", "featurize"]:
        assert main([stage, "--config", str(cfg_path), "--out", str(out)]) == 0
    assert main(["label", "--config", str(cfg_path), "--out", str(out)]) == 1
    assert "unreasonable" in capsys.readouterr().err


def test_labels_flag_switches_training_targets(tmp_path):
    cfg_path = tiny_config_file(tmp_path)
    out = tmp_path / "run"
    for stage in ["simulate", "ingest", "featurize", "label"]:
        assert main([stage, "--config", str(cfg_path), "--out", str(out)]) == 0
    from anomaly_pipeline.pipeline import build_windows, load_dataset

    cfg = PipelineConfig.from_file(cfg_path)
    data = load_dataset(cfg, out)
    cfg.labels = "aan"
    aan_windows = build_windows(cfg, out, "tmc_01")
    cfg.labels = "ano"
    ano_windows = build_windows(cfg, out, "tmc_01")
    assert aan_windows["train"].y.sum() >= ano_windows["train"].y.sum()
    assert aan_windows["train"].y.sum() > 0


def test_segment_restriction(tmp_path):
    cfg_path = tiny_config_file(tmp_path, segment="tmc_01")
    out = tmp_path / "run"
    for stage in ["simulate", "ingest", "featurize", "label"]:
        assert main([stage, "--config", str(cfg_path), "--out", str(out)]) == 0
    labeled = {p.stem for p in (out / "label" / "labels").glob("*.npz")}
    assert labeled == {"tmc_01"}


def test_feature_dump_schema(tmp_path):
    import pandas as pd

    cfg_path = tiny_config_file(tmp_path, dump_features=True)
    out = tmp_path / "run"
    for stage in ["simulate", "ingest", "featurize"]:
        assert main([stage, "--config", str(cfg_path), "--out", str(out)]) == 0
    dump = pd.read_csv(out / "featurize" / "features.csv", nrows=500)
    assert list(dump.columns) == ["segment_id", "timestamp", "channel", "value"]


def test_run_rejects_unknown_stage(tmp_path):
    with pytest.raises(ValueError, match="unknown stage"):
        run("not_a_stage", PipelineConfig(), tmp_path)


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"no_such_option": 1}))
    with pytest.raises(ValueError, match="unknown config keys"):
        PipelineConfig.from_file(path)
