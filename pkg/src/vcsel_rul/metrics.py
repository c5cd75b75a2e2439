"""RMSE, MAE and the asymmetric score S, in hours.

S sums ``exp(-d / a1) - 1`` over underestimates (``d < 0``) and
``exp(d / a2) - 1`` over the rest, with ``d = pred - truth``. With
``a2 < a1`` an overestimate costs more than an underestimate of the same
size. A zero error falls on the overestimate branch and contributes 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .const import HISTOGRAM_FILE, HISTOGRAM_HEADER, PAIRS_FILE, PAIRS_HEADER, REPORT_FILE
from .errors import ConfigurationError, ParseError, UsageError


@dataclass
class ScoreParams:
    a1: float = 250.0
    a2: float = 220.0

    def validate(self) -> None:
        if not (self.a1 > 0 and self.a2 > 0):
            raise ConfigurationError(f"score parameters must be positive, got a1={self.a1!r} a2={self.a2!r}")


@dataclass
class EvalReport:
    n: int
    rmse_h: float
    mae_h: float
    score_s: float
    pairs: list[tuple[float, float]]
    bin_edges: list[float]
    bin_counts: list[int]
    metadata: dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "rmse_h": self.rmse_h,
            "mae_h": self.mae_h,
            "score_s": self.score_s,
            **self.metadata,
        }


def _errors(truth: Sequence[float], pred: Sequence[float]) -> np.ndarray:
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise UsageError(f"truth and prediction must be equal-length lists, got {t.shape} and {p.shape}")
    if t.size == 0:
        raise UsageError("metrics need at least one sample")
    return p - t


def score_s(truth: Sequence[float], pred: Sequence[float], params: Optional[ScoreParams] = None) -> float:
    params = params or ScoreParams()
    params.validate()
    d = _errors(truth, pred)
    under = d < 0
    penalties = np.empty_like(d)
    penalties[under] = np.expm1(-d[under] / params.a1)
    penalties[~under] = np.expm1(d[~under] / params.a2)
    return float(penalties.sum())


def rmse(truth: Sequence[float], pred: Sequence[float]) -> float:
    d = _errors(truth, pred)
    return float(np.sqrt(np.mean(d * d)))


def mae(truth: Sequence[float], pred: Sequence[float]) -> float:
    return float(np.mean(np.abs(_errors(truth, pred))))


def error_histogram(errors: np.ndarray, bins: int) -> tuple[list[float], list[int]]:
    """Equal-width bins over ``[-w, w]`` with ``w = max |error|`` (1 h when all errors are zero)."""
    if bins < 1:
        raise UsageError(f"histogram needs >= 1 bin, got {bins!r}")
    half_width = float(np.max(np.abs(errors))) if errors.size else 0.0
    if half_width == 0.0:
        half_width = 1.0
    counts, edges = np.histogram(errors, bins=bins, range=(-half_width, half_width))
    return [float(e) for e in edges], [int(c) for c in counts]


def make_report(
    truth: Sequence[float],
    pred: Sequence[float],
    histogram_bins: int = 20,
    params: Optional[ScoreParams] = None,
    metadata: Optional[dict[str, Any]] = None,
) -> EvalReport:
    d = _errors(truth, pred)
    edges, counts = error_histogram(d, histogram_bins)
    return EvalReport(
        n=int(d.size),
        rmse_h=rmse(truth, pred),
        mae_h=mae(truth, pred),
        score_s=score_s(truth, pred, params),
        pairs=[(float(t), float(p)) for t, p in zip(truth, pred)],
        bin_edges=edges,
        bin_counts=counts,
        metadata=dict(metadata or {}),
    )


def write_report(report: EvalReport, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / REPORT_FILE
    pairs_path = out_dir / PAIRS_FILE
    hist_path = out_dir / HISTOGRAM_FILE
    report_path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with pairs_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PAIRS_HEADER)
        for t, p in report.pairs:
            writer.writerow((repr(t), repr(p)))
    with hist_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTOGRAM_HEADER)
        for lo, hi, count in zip(report.bin_edges[:-1], report.bin_edges[1:], report.bin_counts):
            writer.writerow((repr(lo), repr(hi), count))
    return [report_path, pairs_path, hist_path]


def read_report(path: Path) -> dict[str, Any]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from None
    for key in ("n", "rmse_h", "mae_h", "score_s"):
        if key not in data:
            raise ParseError(f"{path}: missing field {key!r}")
    return data


def error_std_by_stage(
    pairs: Sequence[tuple[float, float]], near_h: float = 100.0, far_h: float = 2000.0
) -> dict[str, Optional[float]]:
    """Spread of prediction error near end of life (true RUL <= near_h) and early on (>= far_h)."""
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    err = arr[:, 1] - arr[:, 0]

    def _std(mask: np.ndarray) -> Optional[float]:
        return float(np.std(err[mask])) if np.count_nonzero(mask) >= 2 else None

    return {
        "error_std_h_rul_le_near": _std(arr[:, 0] <= near_h),
        "error_std_h_rul_ge_far": _std(arr[:, 0] >= far_h),
    }
