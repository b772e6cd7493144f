"""Stage orchestration: every stage reads prior artifacts from the output
directory, writes its own plus a manifest of input/output hashes, and can be
re-run in isolation. Artifacts live on disk (CSV for the auditable tables,
compressed npz for bulky matrices) so every intermediate can be inspected.

Stage order: simulate -> ingest -> featurize -> label -> split -> train ->
tune -> evaluate -> report. Targets are the segments with at least one
upstream neighbour in slowdown range; targets whose tuning or validation
windows contain no positive labels cannot be calibrated and are skipped
with the reason recorded in the stage manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from . import detector as det
from . import evaluation as ev
from . import features as feat
from . import ingest as ing
from . import labeling as lab
from . import synth
from . import thresholding as thr
from . import windowing as win
from .grid import TimeGrid

log = logging.getLogger("anomaly_pipeline")

STAGE_ORDER = [
    "simulate", "ingest", "featurize", "label", "split", "train", "tune", "evaluate", "report",
]

PARTITIONS = ["train", "test", "tune", "val"]


@dataclass
class PipelineConfig:
    """Every knob of every stage, with the documented defaults."""

    scenario: dict | None = None          # synthetic scenario; omit when inputs_dir is given
    inputs_dir: str | None = None         # external input CSVs; default <out>/inputs
    incident_kinds: list[str] | None = None
    split_ratios: tuple[float, float, float] = (7, 2, 1)

    sd_distance_miles: float = 2.0
    hops_up: int = 3
    hops_down: int = 3

    theta1: float = 0.6
    theta2: float = 1.0
    theta_t: int = 3
    n0: float = 5.0
    alpha: float = 0.5
    max_iters: int = 50
    theta_ahead: int = 3

    lookback: int = 12
    horizon: int = 6
    stride: int = 1
    study_start: str = "06:00"
    study_end: str = "20:30"
    weekdays_only: bool = True
    labels: str = "aan"                   # train/evaluate against ahead labels or plain ones

    hidden: int = 32
    lr: float = 0.01
    epochs: int = 30
    batch_size: int = 64
    w_ano: float | None = None            # None: zero/one target ratio of the training set
    teacher_forcing: bool = True
    beta: float = 1.0

    seed: int = 0
    segment: str | None = None            # restrict modelling to one target
    dump_features: bool = False

    def __post_init__(self):
        if self.labels not in ("ano", "aan"):
            raise ValueError("labels must be 'ano' or 'aan'")

    @classmethod
    def from_file(cls, path: Path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text())
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        if "split_ratios" in data:
            data["split_ratios"] = tuple(data["split_ratios"])
        return cls(**data)

    def echo(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


# ---------------------------------------------------------------------------
# Artifact plumbing
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out: Path, stage: str, cfg: PipelineConfig, inputs, outputs, notes=None) -> dict:
    manifest = {
        "stage": stage,
        "config": cfg.echo(),
        "inputs": {str(p.relative_to(out)): _sha256(p) for p in sorted(inputs)},
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in sorted(outputs)},
        "notes": notes or {},
    }
    path = out / stage / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}; run the '{stage}' stage first")
    return path


def _inputs_dir(cfg: PipelineConfig, out: Path) -> Path:
    return Path(cfg.inputs_dir) if cfg.inputs_dir else out / "inputs"


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_simulate(cfg: PipelineConfig, out: Path) -> dict:
    if cfg.scenario is None:
        raise ValueError("simulate needs a 'scenario' block in the config")
    scenario_cfg = synth.ScenarioConfig.from_dict(dict(cfg.scenario))
    scenario = synth.generate(scenario_cfg)
    paths = synth.write_csvs(scenario, out / "inputs")
    outputs = list(paths.values()) + [out / "inputs" / "scenario_config.json"]
    return _write_manifest(out, "simulate", cfg, [], outputs,
                           notes={"n_incidents": len(scenario.incidents)})


def run_ingest(cfg: PipelineConfig, out: Path) -> dict:
    inputs_dir = _inputs_dir(cfg, out)
    files = {
        name: _require(inputs_dir / f"{name}.csv", "simulate")
        for name in ["speed_5min", "speed_1min", "incidents", "weather", "graph"]
    }
    grid = ing.infer_grid(files["speed_5min"])
    graph = ing.load_graph(files["graph"])
    raw5, codes = ing.load_speed_5min(files["speed_5min"], grid)
    one_min = ing.load_speed_1min(files["speed_1min"], grid)
    reports = ing.load_incidents(files["incidents"], cfg.incident_kinds)
    weather = ing.load_weather(files["weather"], grid)

    split = win.split_days(grid, cfg.split_ratios)
    train_slot_mask = np.zeros(grid.n_slots, dtype=bool)
    for day in split.train_days:
        train_slot_mask[day * grid.slots_per_day:(day + 1) * grid.slots_per_day] = True

    arrays: dict[str, np.ndarray] = {"weather": weather.data}
    p85_rows = []
    for seg in graph.segments:
        if seg not in raw5:
            raise ValueError(f"segment {seg} is in the graph but has no speed rows")
        blocks = one_min.get(seg, {})
        empty = np.full((grid.n_slots, grid.step_minutes), np.nan)
        p85 = ing.free_flow_speed(raw5[seg], train_slot_mask)
        v_all = ing.impute_all_vehicle(raw5[seg], blocks.get("all", empty), p85)
        observed = ~np.isnan(raw5[seg])
        v_car = ing.impute_class_speeds(blocks.get("car", empty), v_all, observed)
        v_truck = ing.impute_class_speeds(blocks.get("truck", empty), v_all, observed)
        density = ing.normalize_density(codes[seg])
        inc = ing.rasterize_reports(reports, grid, seg)
        arrays[f"{seg}/v_all"] = v_all
        arrays[f"{seg}/v_car"] = v_car
        arrays[f"{seg}/v_truck"] = v_truck
        arrays[f"{seg}/density"] = density
        arrays[f"{seg}/observed"] = observed
        arrays[f"{seg}/inc"] = inc
        p85_rows.append((seg, p85))

    stage_dir = out / "ingest"
    stage_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = stage_dir / "dataset.npz"
    np.savez_compressed(dataset_path, **arrays)
    meta = {
        "grid": {"start": grid.start.isoformat(), "n_days": grid.n_days, "step_minutes": grid.step_minutes},
        "segments": graph.segments,
        "upstream": graph.upstream,
        "downstream": graph.downstream,
        "p85": {seg: p for seg, p in p85_rows},
    }
    meta_path = stage_dir / "dataset_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    p85_path = stage_dir / "p85.csv"
    pd.DataFrame(p85_rows, columns=["segment_id", "p85_mph"]).to_csv(
        p85_path, index=False, lineterminator="\n", float_format="%.4f"
    )
    return _write_manifest(out, "ingest", cfg, list(files.values()), [dataset_path, meta_path, p85_path])


@dataclass
class Dataset:
    grid: TimeGrid
    graph: ing.RoadGraph
    series: dict[str, ing.SegmentSeries]
    inc: dict[str, np.ndarray]
    weather: ing.WeatherSeries
    split: win.SplitSpec = field(default=None)


def load_dataset(cfg: PipelineConfig, out: Path) -> Dataset:
    meta = json.loads(_require(out / "ingest" / "dataset_meta.json", "ingest").read_text())
    grid = TimeGrid(
        start=datetime.fromisoformat(meta["grid"]["start"]),
        n_days=meta["grid"]["n_days"],
        step_minutes=meta["grid"]["step_minutes"],
    )
    graph = ing.RoadGraph(
        segments=meta["segments"],
        upstream={s: [(n, d) for n, d in pairs] for s, pairs in meta["upstream"].items()},
        downstream={s: [(n, d) for n, d in pairs] for s, pairs in meta["downstream"].items()},
    )
    series = {}
    inc = {}
    with np.load(out / "ingest" / "dataset.npz") as blob:
        for seg in graph.segments:
            series[seg] = ing.SegmentSeries(
                segment_id=seg,
                v_all=blob[f"{seg}/v_all"],
                v_car=blob[f"{seg}/v_car"],
                v_truck=blob[f"{seg}/v_truck"],
                density=blob[f"{seg}/density"],
                p85=float(meta["p85"][seg]),
                observed_all=blob[f"{seg}/observed"],
            )
            inc[seg] = blob[f"{seg}/inc"]
        weather = ing.WeatherSeries(data=blob["weather"])
    return Dataset(
        grid=grid, graph=graph, series=series, inc=inc, weather=weather,
        split=win.split_days(grid, cfg.split_ratios),
    )


def target_segments(cfg: PipelineConfig, data: Dataset) -> list[str]:
    """Segments that can be modelled: at least one upstream in slowdown range."""
    targets = [
        seg for seg in data.graph.segments
        if data.graph.upstream_within(seg, cfg.sd_distance_miles)
    ]
    if cfg.segment is not None:
        if cfg.segment not in targets:
            raise ValueError(f"requested segment {cfg.segment} is not a modellable target")
        targets = [cfg.segment]
    return targets


def run_featurize(cfg: PipelineConfig, out: Path) -> dict:
    data = load_dataset(cfg, out)
    train_day_mask = np.zeros(data.grid.n_days, dtype=bool)
    train_day_mask[data.split.train_days] = True
    frames_dir = out / "featurize" / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    outputs, dump_tables = [], []
    for target in target_segments(cfg, data):
        frame = feat.assemble(
            data.graph, target, data.series, data.inc, data.weather, data.grid,
            train_day_mask,
            hops_up=cfg.hops_up, hops_down=cfg.hops_down,
            sd_distance_miles=cfg.sd_distance_miles,
        )
        path = frames_dir / f"{target}.npz"
        np.savez_compressed(
            path,
            data=frame.data,
            channel_names=np.array(frame.channel_names),
            srs_available=frame.srs_available,
            neighborhood=np.array(frame.neighborhood),
            hops=np.array([frame.hops_up_effective, frame.hops_down_effective]),
            mean=frame.scaler.mean_,
            scale=frame.scaler.scale_,
        )
        outputs.append(path)
        if cfg.dump_features:
            dump_tables.append(_dump_table(frame))
    if dump_tables:
        dump_path = out / "featurize" / "features.csv"
        pd.concat(dump_tables, ignore_index=True).to_csv(
            dump_path, index=False, lineterminator="\n", float_format="%.6f"
        )
        outputs.append(dump_path)
    inputs = [out / "ingest" / "dataset.npz", out / "ingest" / "dataset_meta.json"]
    return _write_manifest(out, "featurize", cfg, inputs, outputs)


def _dump_table(frame: feat.FeatureFrame) -> pd.DataFrame:
    grid = frame.grid
    stamps = (np.datetime64(grid.start, "m") + np.arange(grid.n_slots) * grid.step_minutes).astype(str)
    n_slots, width = frame.data.shape
    return pd.DataFrame(
        {
            "segment_id": frame.target,
            "timestamp": np.repeat(stamps, width),
            "channel": np.tile(np.array(frame.channel_names), n_slots),
            "value": frame.data.ravel(),
        }
    )


def load_frame(out: Path, target: str) -> feat.FeatureFrame:
    path = _require(out / "featurize" / "frames" / f"{target}.npz", "featurize")
    meta = json.loads(_require(out / "ingest" / "dataset_meta.json", "ingest").read_text())
    grid = TimeGrid(
        start=datetime.fromisoformat(meta["grid"]["start"]),
        n_days=meta["grid"]["n_days"],
        step_minutes=meta["grid"]["step_minutes"],
    )
    with np.load(path) as blob:
        return feat.FeatureFrame(
            target=target,
            neighborhood=list(blob["neighborhood"]),
            data=blob["data"],
            channel_names=list(blob["channel_names"]),
            srs_available=blob["srs_available"],
            grid=grid,
            hops_up_effective=int(blob["hops"][0]),
            hops_down_effective=int(blob["hops"][1]),
        )


def run_label(cfg: PipelineConfig, out: Path) -> dict:
    data = load_dataset(cfg, out)
    labels_dir = out / "label" / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    audit = {}
    skipped = {}
    csv_parts = []
    last_error = None
    spd = data.grid.slots_per_day
    dates = [data.grid.date_of_day(d).isoformat() for d in range(data.grid.n_days)]
    for target in target_segments(cfg, data):
        upstream = data.graph.upstream_within(target, cfg.sd_distance_miles)
        upstream_v = np.stack([data.series[u].v_all for u in upstream])
        sd = feat.slowdown_speed(data.series[target].v_all, upstream_v).reshape(data.grid.n_days, spd)
        try:
            bundle = lab.denoise(
                data.inc[target], sd,
                theta1=cfg.theta1, theta2=cfg.theta2, theta_t=cfg.theta_t,
                n0=cfg.n0, alpha=cfg.alpha, max_iters=cfg.max_iters,
            ).with_ahead(cfg.theta_ahead)
        except (ValueError, lab.DenoiseDivergedError) as exc:
            skipped[target] = str(exc)
            last_error = exc
            log.warning("label denoising failed for %s: %s", target, exc)
            continue
        if not bundle.converged:
            log.warning("label loop for %s stopped on oscillation at n=%.2f", target, bundle.n_final)
        path = labels_dir / f"{target}.npz"
        np.savez_compressed(
            path, inc=bundle.inc, asd=bundle.asd, sir=bundle.sir, psa=bundle.psa,
            add=bundle.add, ano=bundle.ano, aan=bundle.aan,
        )
        outputs.append(path)
        audit[target] = {
            "n_final": bundle.n_final,
            "theta_sd": bundle.theta_sd,
            "rm_pct": bundle.rm_pct,
            "add_pct": bundle.add_pct,
            "iterations": bundle.iterations,
            "converged": bundle.converged,
        }
        csv_parts.append(
            pd.DataFrame(
                {
                    "segment_id": target,
                    "date": np.repeat(dates, spd),
                    "slot": np.tile(np.arange(spd), data.grid.n_days),
                    "INC": bundle.inc.ravel(),
                    "ANO": bundle.ano.ravel(),
                    "AAN": bundle.aan.ravel(),
                }
            )
        )
    if not outputs and last_error is not None:
        raise last_error
    audit_path = out / "label" / "audit.json"
    audit_path.write_text(json.dumps(audit, indent=2, sort_keys=True))
    csv_path = out / "label" / "labels.csv"
    pd.concat(csv_parts, ignore_index=True).to_csv(csv_path, index=False, lineterminator="\n")
    inputs = [out / "ingest" / "dataset.npz", out / "ingest" / "dataset_meta.json"]
    return _write_manifest(out, "label", cfg, inputs, outputs + [audit_path, csv_path],
                           notes={"skipped": skipped})


def load_labels(out: Path, target: str) -> dict[str, np.ndarray]:
    path = _require(out / "label" / "labels" / f"{target}.npz", "label")
    with np.load(path) as blob:
        return {key: blob[key] for key in blob.files}


def labeled_targets(cfg: PipelineConfig, out: Path, data: Dataset) -> list[str]:
    """Modellable targets that survived the label stage."""
    _require(out / "label" / "manifest.json", "label")
    have = {p.stem for p in (out / "label" / "labels").glob("*.npz")}
    return [t for t in target_segments(cfg, data) if t in have]


def _window_kwargs(cfg: PipelineConfig) -> dict:
    return dict(
        lookback=cfg.lookback, horizon=cfg.horizon, stride=cfg.stride,
        study_start=cfg.study_start, study_end=cfg.study_end,
        weekdays_only=cfg.weekdays_only,
    )


def build_windows(cfg: PipelineConfig, out: Path, target: str) -> dict[str, win.WindowSet]:
    """Windows for all four partitions of one target, on the configured labels."""
    frame = load_frame(out, target)
    labels = load_labels(out, target)[cfg.labels]
    data_split = win.split_days(frame.grid, cfg.split_ratios)
    return {
        part: win.make_windows(frame, labels, days, **_window_kwargs(cfg))
        for part, days in data_split.as_dict().items()
    }


def run_split(cfg: PipelineConfig, out: Path) -> dict:
    data = load_dataset(cfg, out)
    windows_dir = out / "split" / "windows"
    windows_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    contamination = {}
    counts = {}
    for target in labeled_targets(cfg, out, data):
        sets = build_windows(cfg, out, target)
        arrays = {}
        for part, ws in sets.items():
            arrays[f"{part}_anchors"] = ws.anchors
            arrays[f"{part}_y"] = ws.y
            arrays[f"{part}_skipped"] = np.array([ws.skipped])
        path = windows_dir / f"{target}.npz"
        np.savez_compressed(path, **arrays)
        outputs.append(path)
        pair_violations = {}
        parts = list(sets)
        for i, a in enumerate(parts):
            for b in parts[i + 1:]:
                pair_violations[f"{a}|{b}"] = len(win.contamination_check(sets[a], sets[b]))
        contamination[target] = pair_violations
        counts[target] = {
            part: {"n": len(ws), "positives": int(ws.y.sum()), "skipped": ws.skipped}
            for part, ws in sets.items()
        }
        if any(pair_violations.values()):
            raise RuntimeError(f"window contamination detected for {target}: {pair_violations}")
    report_path = out / "split" / "contamination.json"
    report_path.write_text(json.dumps({"violations": contamination, "counts": counts}, indent=2, sort_keys=True))
    inputs = [out / "ingest" / "dataset_meta.json"]
    return _write_manifest(out, "split", cfg, inputs, outputs + [report_path],
                           notes={"counts": counts})


def run_train(cfg: PipelineConfig, out: Path) -> dict:
    data = load_dataset(cfg, out)
    models_dir = out / "train" / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    outputs, skipped = [], {}
    for target in labeled_targets(cfg, out, data):
        sets = build_windows(cfg, out, target)
        train_set = sets["train"]
        if int(train_set.y.sum()) == 0:
            skipped[target] = "no positive step-targets in the training windows"
            log.warning("skipping %s: %s", target, skipped[target])
            continue
        model = det.HorizonDetector(
            hidden=cfg.hidden, lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
            w_ano=cfg.w_ano, teacher_forcing=cfg.teacher_forcing, seed=cfg.seed,
        ).fit(train_set.X, train_set.y)
        path = models_dir / f"{target}.npz"
        trajectory = {
            "w_enc": np.stack([p.w_enc for p in model.history_]),
            "b_enc": np.stack([p.b_enc for p in model.history_]),
            "w_dec": np.stack([p.w_dec for p in model.history_]),
            "b_dec": np.stack([p.b_dec for p in model.history_]),
            "w_out": np.stack([p.w_out for p in model.history_]),
            "b_out": np.array([p.b_out for p in model.history_]),
        }
        np.savez_compressed(
            path,
            **trajectory,
            loss_curve=np.array(model.loss_curve_),
            w_ano=np.array([model.w_ano_]),
            meta=np.array([json.dumps({"target": target, "seed": cfg.seed, "config": cfg.echo()},
                                      sort_keys=True)]),
        )
        outputs.append(path)
    inputs = [out / "split" / "contamination.json"]
    return _write_manifest(out, "train", cfg, inputs, outputs, notes={"skipped": skipped})


def load_trajectory(out: Path, target: str) -> list[det.DetectorParams]:
    path = _require(out / "train" / "models" / f"{target}.npz", "train")
    with np.load(path, allow_pickle=False) as blob:
        return [
            det.DetectorParams(
                w_enc=blob["w_enc"][e], b_enc=blob["b_enc"][e],
                w_dec=blob["w_dec"][e], b_dec=blob["b_dec"][e],
                w_out=blob["w_out"][e], b_out=float(blob["b_out"][e]),
            )
            for e in range(blob["w_enc"].shape[0])
        ]


def run_tune(cfg: PipelineConfig, out: Path) -> dict:
    data = load_dataset(cfg, out)
    selected_dir = out / "tune" / "selected"
    selected_dir.mkdir(parents=True, exist_ok=True)
    outputs, skipped = [], {}
    trace_rows = []
    _require(out / "train" / "manifest.json", "train")
    trained = {p.stem for p in sorted((out / "train" / "models").glob("*.npz"))}
    for target in target_segments(cfg, data):
        if target not in trained:
            skipped[target] = "not trained"
            continue
        sets = build_windows(cfg, out, target)
        if int(sets["tune"].y.sum()) == 0 or int(sets["val"].y.sum()) == 0:
            skipped[target] = "no positive labels in the tuning or validation windows"
            log.warning("skipping %s: %s", target, skipped[target])
            continue
        history = load_trajectory(out, target)
        best_epoch, tau, trace = thr.select_epoch_and_threshold(
            history, cfg.horizon,
            sets["tune"].X, sets["tune"].y, sets["val"].X, sets["val"].y, cfg.beta,
        )
        path = selected_dir / f"{target}.npz"
        det.save_checkpoint(
            path, history[best_epoch],
            meta={"target": target, "tau": tau, "best_epoch": best_epoch, "beta": cfg.beta},
        )
        outputs.append(path)
        trace_rows.extend((target, *row) for row in trace)
    trace_path = out / "tune" / "selection_trace.csv"
    pd.DataFrame(trace_rows, columns=["segment_id", "epoch", "tau", "f_tune", "f_val"]).to_csv(
        trace_path, index=False, lineterminator="\n", float_format="%.6f"
    )
    inputs = [out / "ingest" / "dataset_meta.json"]
    return _write_manifest(out, "tune", cfg, inputs, outputs + [trace_path], notes={"skipped": skipped})


def run_evaluate(cfg: PipelineConfig, out: Path) -> dict:
    data = load_dataset(cfg, out)
    eval_dir = out / "evaluate"
    eval_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    pooled = {}
    _require(out / "tune" / "manifest.json", "tune")
    selected_dir = out / "tune" / "selected"
    selected = {p.stem for p in sorted(selected_dir.glob("*.npz"))}
    spd = data.grid.slots_per_day
    for target in sorted(selected):
        params, meta = det.load_checkpoint(selected_dir / f"{target}.npz")
        tau = float(meta["tau"])
        sets = build_windows(cfg, out, target)
        test = sets["test"]
        scores = det.forward(params, test.X, cfg.horizon)
        flat_anchors = test.anchors[:, 0] * spd + test.anchors[:, 1]
        stream = ev.alert_stream(scores, tau, flat_anchors, cfg.horizon)

        labels = load_labels(out, target)
        reports = ev.reports_from_matrix(labels["inc"], labels["sir"], data.split.test_days)
        report = ev.incident_metrics(
            stream.events, reports, labels[cfg.labels].ravel(),
            minutes_per_slot=data.grid.step_minutes,
        )
        steps = ev.step_metrics(scores, test.y, tau)

        target_dir = eval_dir / target
        target_dir.mkdir(parents=True, exist_ok=True)
        outputs.append(_write_eval_report(target_dir / "eval_report.csv", target, tau, report, steps))
        outputs.append(_write_alerts(target_dir / "alerts.csv", target, data.grid, test, stream))
        curve = pd.DataFrame(ev.pr_curve(scores, test.y))
        curve_path = target_dir / "pr_curve.csv"
        curve.to_csv(curve_path, index=False, lineterminator="\n", float_format="%.6f")
        outputs.append(curve_path)
        pooled[target] = {
            "tau": tau,
            "n_reports": report.n_reports,
            "n_detected": report.n_detected,
            "n_significant": report.n_significant,
            "n_detected_significant": report.n_detected_significant,
            "n_alarms": report.n_alarms,
            "n_false_alarms": report.n_false_alarms,
            "n_report_coinciding": report.n_report_coinciding,
            "n_anomaly_only": report.n_anomaly_only,
            "ttd_sum_minutes": report.ttd_sum_minutes,
            "ttd_sum_significant": report.ttd_sum_significant,
        }
    pooled_path = eval_dir / "pooled.json"
    pooled_path.write_text(json.dumps(pooled, indent=2, sort_keys=True))
    inputs = [out / "ingest" / "dataset_meta.json"]
    return _write_manifest(out, "evaluate", cfg, inputs, outputs + [pooled_path])


def _write_eval_report(path: Path, target: str, tau: float, report: ev.EvalReport, steps) -> Path:
    rows = [("incident", "DR", report.detection_rate),
            ("incident", "MTTD_minutes", report.mttd_minutes),
            ("incident", "FAR", report.false_alarm_rate),
            ("incident", "DR_S", report.detection_rate_significant),
            ("incident", "MTTD_S_minutes", report.mttd_significant),
            ("count", "n_reports", report.n_reports),
            ("count", "n_detected", report.n_detected),
            ("count", "n_significant", report.n_significant),
            ("count", "n_detected_significant", report.n_detected_significant),
            ("count", "n_alarms", report.n_alarms),
            ("count", "n_false_alarms", report.n_false_alarms),
            ("threshold", "tau", tau)]
    for name, values in steps.items():
        rows.extend(("step", f"{name}_h{k + 1}", float(v)) for k, v in enumerate(values))
    frame = pd.DataFrame(rows, columns=["metric", "name", "value"])
    frame.insert(0, "segment_id", target)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _write_alerts(path: Path, target: str, grid: TimeGrid, test: win.WindowSet, stream: ev.AlertStream) -> Path:
    stamps = [grid.timestamp(int(d), int(s)).isoformat() for d, s in test.anchors]
    frame = pd.DataFrame(
        {
            "segment_id": target,
            "timestamp": stamps,
            "score_min": stream.min_scores,
            "alert": stream.flags.astype(int),
        }
    )
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.6f")
    return path


def run_report(cfg: PipelineConfig, out: Path) -> dict:
    pooled_path = _require(out / "evaluate" / "pooled.json", "evaluate")
    pooled = json.loads(pooled_path.read_text())
    totals = {
        key: sum(entry[key] for entry in pooled.values())
        for key in [
            "n_reports", "n_detected", "n_significant", "n_detected_significant",
            "n_alarms", "n_false_alarms", "ttd_sum_minutes", "ttd_sum_significant",
        ]
    }
    summary = {
        "n_targets": len(pooled),
        "DR": _ratio(totals["n_detected"], totals["n_reports"]),
        "MTTD_minutes": _ratio(totals["ttd_sum_minutes"], totals["n_detected"]),
        "FAR": _ratio(totals["n_false_alarms"], totals["n_alarms"]),
        "DR_S": _ratio(totals["n_detected_significant"], totals["n_significant"]),
        "MTTD_S_minutes": _ratio(totals["ttd_sum_significant"], totals["n_detected_significant"]),
        "counts": totals,
        "per_segment": pooled,
    }
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    summary_path = report_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    rows = [("pooled", key, summary[key]) for key in ["DR", "MTTD_minutes", "FAR", "DR_S", "MTTD_S_minutes"]]
    rows.extend(("count", key, value) for key, value in totals.items())
    csv_path = report_dir / "summary.csv"
    pd.DataFrame(rows, columns=["metric", "name", "value"]).to_csv(csv_path, index=False, lineterminator="\n")
    return _write_manifest(out, "report", cfg, [pooled_path], [summary_path, csv_path])


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


STAGES = {
    "simulate": run_simulate,
    "ingest": run_ingest,
    "featurize": run_featurize,
    "label": run_label,
    "split": run_split,
    "train": run_train,
    "tune": run_tune,
    "evaluate": run_evaluate,
    "report": run_report,
}


def run(stage: str, cfg: PipelineConfig, out: Path) -> dict | list[dict]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True))
    if stage == "all":
        stages = [s for s in STAGE_ORDER if s != "simulate" or cfg.scenario is not None]
        results = []
        for name in stages:
            log.info("stage %s", name)
            results.append(STAGES[name](cfg, out))
        return results
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {STAGE_ORDER + ['all']}")
    return STAGES[stage](cfg, out)
