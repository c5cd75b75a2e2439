"""Experiment stages behind the CLI: each reads its inputs, writes its outputs
and one manifest into its output directory."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .const import (
    BENCHMARK_FILE,
    CHECKPOINT_FILE,
    COMPARISON_JSON,
    COMPARISON_TEXT,
    CONDITIONS_FILE,
    DATASET_FILE,
    FLEET_FILE,
    HISTOGRAM_FILE,
    LOSS_HISTORY_FILE,
    LOSS_HISTORY_HEADER,
    PAIRS_FILE,
    REPORT_FILE,
    SPLIT_FILE,
    STATS_FILE,
    TRAJECTORY_HEADER,
)
from .dataset import Sample, SplitDataset, build_samples, read_dataset, split, write_dataset
from .errors import TrainingAborted, UsageError
from .llsf import llsf_predict_samples
from .manifest import RunManifest, check_overwrite, digests, write_manifest
from .metrics import EvalReport, error_std_by_stage, make_report, read_report, write_report
from .model import EpochRecord, TrainResult, build, load, predict_rul, save, train
from .synth import DeviceRecord, generate_fleet, read_fleet, write_fleet

_LOG = logging.getLogger(__name__)


def _finish(
    out_dir: Path,
    subcommand: str,
    config: dict[str, Any],
    seed: Optional[int],
    inputs: Sequence[Path],
    outputs: Sequence[Path],
    started: float,
) -> None:
    write_manifest(
        out_dir,
        RunManifest(
            subcommand=subcommand,
            config=config,
            seed=seed,
            inputs=digests(inputs),
            outputs=digests(outputs),
            duration_s=round(time.monotonic() - started, 3),
        ),
    )


def run_generate(cfg: ExperimentConfig, out_dir: Path, force: bool = False) -> list[DeviceRecord]:
    started = time.monotonic()
    check_overwrite(out_dir, (FLEET_FILE, CONDITIONS_FILE), force)
    fleet = generate_fleet(cfg.generator)
    outputs = write_fleet(fleet, out_dir)
    _finish(out_dir, "generate", cfg.to_dict(), cfg.generator.master_seed, [], outputs, started)
    return fleet


def split_seed_for(cfg: ExperimentConfig) -> int:
    if cfg.dataset.split_seed is not None:
        return cfg.dataset.split_seed
    return cfg.generator.master_seed


def run_build_dataset(
    cfg: ExperimentConfig, fleet_dir: Path, out_dir: Path, force: bool = False
) -> tuple[list[Sample], Optional[SplitDataset]]:
    started = time.monotonic()
    check_overwrite(out_dir, (DATASET_FILE, STATS_FILE, SPLIT_FILE), force)
    fleet = read_fleet(fleet_dir)
    samples = build_samples(fleet, cfg.dataset)
    seed = split_seed_for(cfg)
    dataset = None
    if samples:
        dataset = split(samples, seed, cfg.dataset.train_fraction, cfg.dataset.relative_power, cfg.dataset.rul_cap_h)
    else:
        _LOG.warning("No supervised samples: every device in %s is censored or excluded", fleet_dir)
    outputs = write_dataset(samples, dataset, out_dir)
    _finish(
        out_dir,
        "build-dataset",
        replace(cfg, dataset=replace(cfg.dataset, split_seed=seed)).to_dict(),
        seed,
        [fleet_dir / FLEET_FILE, fleet_dir / CONDITIONS_FILE],
        outputs,
        started,
    )
    return samples, dataset


def write_loss_history(history: Sequence[EpochRecord], path: Path) -> Path:
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_HISTORY_HEADER)
        for row in history:
            writer.writerow(
                (row.epoch, repr(row.train_loss), "" if row.val_loss is None else repr(row.val_loss), repr(row.best_val_loss))
            )
    return path


def run_train(cfg: ExperimentConfig, dataset_dir: Path, out_dir: Path, force: bool = False) -> TrainResult:
    started = time.monotonic()
    check_overwrite(out_dir, (CHECKPOINT_FILE, LOSS_HISTORY_FILE), force)
    dataset = read_dataset(dataset_dir)
    spec = cfg.model
    if dataset.train and len(dataset.train[0].window_power) != spec.window:
        spec = replace(spec, window=len(dataset.train[0].window_power))
    model = build(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = train(model, dataset, cfg.train)
    except TrainingAborted as err:
        save(model, out_dir / CHECKPOINT_FILE)
        _LOG.error("Training aborted at epoch %d; last good parameters saved to %s", err.epoch, out_dir / CHECKPOINT_FILE)
        raise
    outputs = [save(model, out_dir / CHECKPOINT_FILE), write_loss_history(result.history, out_dir / LOSS_HISTORY_FILE)]
    inputs = [dataset_dir / DATASET_FILE, dataset_dir / STATS_FILE, dataset_dir / SPLIT_FILE]
    _finish(
        out_dir,
        "train",
        replace(cfg, model=spec).to_dict(),
        cfg.train.seed,
        inputs,
        outputs,
        started,
    )
    return result


def write_trajectory(samples: Sequence[Sample], pred: np.ndarray, path: Path) -> Path:
    rows = sorted(zip(samples, pred), key=lambda item: item[0].window_end_time_h)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for s, p in rows:
            writer.writerow((repr(s.window_end_time_h), repr(s.rul_h), repr(float(p))))
    return path


def run_evaluate(
    cfg: ExperimentConfig,
    dataset_dir: Path,
    out_dir: Path,
    method: str = "model",
    checkpoint: Optional[Path] = None,
    fleet_dir: Optional[Path] = None,
    device: Optional[str] = None,
    force: bool = False,
) -> EvalReport:
    started = time.monotonic()
    check_overwrite(out_dir, (REPORT_FILE, PAIRS_FILE, HISTOGRAM_FILE), force)
    dataset = read_dataset(dataset_dir)
    if not dataset.test:
        raise UsageError(f"{dataset_dir}: test split is empty")
    inputs = [dataset_dir / DATASET_FILE, dataset_dir / STATS_FILE, dataset_dir / SPLIT_FILE]

    predict: Callable[[Sequence[Sample]], np.ndarray]
    if method == "model":
        if checkpoint is None:
            raise UsageError("evaluate --method model needs --checkpoint")
        model = load(checkpoint)
        inputs.append(checkpoint)
        label = model.spec.variant

        def predict(samples: Sequence[Sample]) -> np.ndarray:
            return predict_rul(model, samples, dataset.stats)

    elif method == "llsf":
        if fleet_dir is None:
            raise UsageError("evaluate --method llsf needs --fleet")
        fleet = read_fleet(fleet_dir)
        inputs.extend([fleet_dir / FLEET_FILE, fleet_dir / CONDITIONS_FILE])
        label = "llsf"

        def predict(samples: Sequence[Sample]) -> np.ndarray:
            return llsf_predict_samples(
                samples, fleet, cfg.generator.drop_fraction, dataset.stats.rul_cap_h
            )

    else:
        raise UsageError(f"evaluate method must be 'model' or 'llsf', got {method!r}")

    pred = predict(dataset.test)
    truth = [s.rul_h for s in dataset.test]
    report = make_report(truth, pred, cfg.metrics.histogram_bins, cfg.metrics.score_params(), metadata={"method": label})
    report.metadata.update(error_std_by_stage(report.pairs))
    outputs = write_report(report, out_dir)

    if device is not None:
        device_samples = [s for s in (*dataset.test, *dataset.train) if s.device_id == device]
        if not device_samples:
            raise UsageError(f"device {device!r} has no samples in {dataset_dir}")
        outputs.append(write_trajectory(device_samples, predict(device_samples), out_dir / f"trajectory_{device}.csv"))

    request = {
        "method": method,
        "checkpoint": None if checkpoint is None else str(checkpoint),
        "fleet": None if fleet_dir is None else str(fleet_dir),
        "device": device,
    }
    _finish(out_dir, "evaluate", {**cfg.to_dict(), "evaluate": request}, None, inputs, outputs, started)
    _LOG.info("%s: n=%d RMSE=%.1f h MAE=%.1f h S=%.4g", label, report.n, report.rmse_h, report.mae_h, report.score_s)
    return report


def _delta_pct(value: float, reference: float) -> Optional[float]:
    if reference == 0:
        return 0.0 if value == 0 else None
    return (value - reference) / reference * 100.0


def compare_reports(
    reports: Sequence[dict[str, Any]], labels: Sequence[str], reference: Optional[str] = None
) -> dict[str, Any]:
    if len(reports) < 2:
        raise UsageError(f"compare needs >= 2 reports, got {len(reports)}")
    reference = reference or labels[0]
    if reference not in labels:
        raise UsageError(f"reference {reference!r} is not among {list(labels)!r}")
    ref = reports[labels.index(reference)]
    counts = {r["n"] for r in reports}
    if len(counts) > 1:
        _LOG.warning("Reports cover different sample counts %s; deltas compare unlike sets", sorted(counts))
    rows = []
    for label, r in zip(labels, reports):
        rows.append(
            {
                "method": label,
                "reference": label == reference,
                "n": r["n"],
                "rmse_h": r["rmse_h"],
                "mae_h": r["mae_h"],
                "score_s": r["score_s"],
                "delta_rmse_pct": _delta_pct(r["rmse_h"], ref["rmse_h"]),
                "delta_mae_pct": _delta_pct(r["mae_h"], ref["mae_h"]),
                "delta_score_pct": _delta_pct(r["score_s"], ref["score_s"]),
            }
        )
    return {"reference": reference, "rows": rows, "sample_counts_match": len(counts) == 1}


def _pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:+.1f}%"


def format_comparison(table: dict[str, Any]) -> str:
    header = f"{'method':<14}{'n':>7}{'RMSE h':>11}{'MAE h':>11}{'S':>14}{'dRMSE':>9}{'dMAE':>9}{'dS':>9}"
    lines = [header, "-" * len(header)]
    for row in table["rows"]:
        name = row["method"] + (" *" if row["reference"] else "")
        lines.append(
            f"{name:<14}{row['n']:>7}{row['rmse_h']:>11.2f}{row['mae_h']:>11.2f}{row['score_s']:>14.4g}"
            f"{_pct(row['delta_rmse_pct']):>9}{_pct(row['delta_mae_pct']):>9}{_pct(row['delta_score_pct']):>9}"
        )
    lines.append(f"* reference: {table['reference']}")
    return "\n".join(lines) + "\n"


def _unique_labels(names: Sequence[str]) -> list[str]:
    seen: dict[str, int] = {}
    labels = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        labels.append(name if seen[name] == 1 else f"{name}#{seen[name]}")
    return labels


def run_compare(
    report_paths: Sequence[Path],
    out_dir: Path,
    reference: Optional[str] = None,
    labels: Optional[Sequence[str]] = None,
    force: bool = False,
    cfg: Optional[ExperimentConfig] = None,
) -> dict[str, Any]:
    started = time.monotonic()
    check_overwrite(out_dir, (COMPARISON_JSON, COMPARISON_TEXT), force)
    reports = [read_report(p) for p in report_paths]
    if labels:
        if len(labels) != len(reports):
            raise UsageError(f"got {len(labels)} labels for {len(reports)} reports")
        names = list(labels)
    else:
        names = _unique_labels([str(r.get("method", p.parent.name)) for r, p in zip(reports, report_paths)])
    table = compare_reports(reports, names, reference)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / COMPARISON_JSON
    text_path = out_dir / COMPARISON_TEXT
    json_path.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text_path.write_text(format_comparison(table), encoding="utf-8")
    config = {**(cfg.to_dict() if cfg else {}), "compare": {"reference": table["reference"], "labels": names}}
    _finish(out_dir, "compare", config, None, report_paths, [json_path, text_path], started)
    return table


def seeded(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Propagate one master seed to every stage."""
    return replace(
        cfg,
        generator=replace(cfg.generator, master_seed=seed),
        dataset=replace(cfg.dataset, split_seed=seed),
        model=replace(cfg.model, seed=seed),
        train=replace(cfg.train, seed=seed),
    )


def run_benchmark(
    cfg: ExperimentConfig, out_dir: Path, seeds: Sequence[int], force: bool = False
) -> dict[str, Any]:
    """generate -> build-dataset -> train -> evaluate (model, llsf) -> compare, once per seed."""
    started = time.monotonic()
    check_overwrite(out_dir, (BENCHMARK_FILE,), force)
    runs = []
    for seed in seeds:
        run_cfg = seeded(cfg, seed)
        root = out_dir / f"seed_{seed}"
        run_generate(run_cfg, root / "fleet", force)
        run_build_dataset(run_cfg, root / "fleet", root / "dataset", force)
        run_train(run_cfg, root / "dataset", root / "model", force)
        model_report = run_evaluate(
            run_cfg, root / "dataset", root / "eval_model", "model", checkpoint=root / "model" / CHECKPOINT_FILE, force=force
        )
        llsf_report = run_evaluate(
            run_cfg, root / "dataset", root / "eval_llsf", "llsf", fleet_dir=root / "fleet", force=force
        )
        run_compare(
            [root / "eval_model" / REPORT_FILE, root / "eval_llsf" / REPORT_FILE],
            root / "compare",
            reference="llsf",
            cfg=run_cfg,
            force=force,
        )
        runs.append(
            {
                "seed": seed,
                "model_rmse_h": model_report.rmse_h,
                "llsf_rmse_h": llsf_report.rmse_h,
                "model_score_s": model_report.score_s,
                "llsf_score_s": llsf_report.score_s,
                "model_wins": model_report.rmse_h < llsf_report.rmse_h and model_report.score_s < llsf_report.score_s,
                **error_std_by_stage(model_report.pairs),
            }
        )
    summary = {"variant": cfg.model.variant, "runs": runs, "wins": sum(r["model_wins"] for r in runs)}
    path = out_dir / BENCHMARK_FILE
    out_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _finish(out_dir, "benchmark", cfg.to_dict(), None, [], [path], started)
    return summary
