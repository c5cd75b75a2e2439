"""Supervised samples from device records.

Pipeline: drop infant-mortality and censored devices, cut each power trace
into stride-1 windows of 3 measurements taken before failure, label each
window with ``t_f - t_end`` (windows labelled above 5,000 h are dropped),
split 80/20 at device granularity and fit min-max statistics on the
training side only.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .const import (
    DATASET_FILE,
    DEFAULT_TRAIN_FRACTION,
    DEFAULT_WINDOW,
    INFANT_MORTALITY_H,
    N_CONDITIONS,
    RUL_CAP_H,
    SPLIT_FILE,
    STATS_FILE,
)
from .errors import ConfigurationError, DataError, ParseError, UsageError
from .parser import parse_dataset_line
from .synth import DeviceRecord

_LOG = logging.getLogger(__name__)


@dataclass
class DatasetConfig:
    """Windowing, labelling and split settings.

    ``relative_power`` selects the power feature the model sees: ``P / P0``
    (each window divided by its device's first measurement) when true, the
    raw milliwatt readings when false. ``dataset.jsonl`` always stores the
    raw windows and ``p0_mw``, so one dataset serves both settings; the
    choice is recorded in ``stats.json`` and fixed for a trained model.
    """

    window: int = DEFAULT_WINDOW
    rul_cap_h: float = RUL_CAP_H
    min_failure_h: float = INFANT_MORTALITY_H
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    relative_power: bool = True
    split_seed: Optional[int] = None

    def validate(self) -> None:
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window!r}")
        if not self.rul_cap_h > 0:
            raise ConfigurationError(f"rul_cap_h must be > 0, got {self.rul_cap_h!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError(f"train_fraction must be in (0, 1), got {self.train_fraction!r}")


@dataclass(frozen=True)
class Sample:
    device_id: str
    window_power: tuple[float, ...]
    window_end_time_h: float
    conditions: tuple[float, ...]
    rul_h: float
    p0_mw: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "device_id": self.device_id,
                "window": list(self.window_power),
                "t_end_h": self.window_end_time_h,
                "conditions": list(self.conditions),
                "rul_h": self.rul_h,
                "p0_mw": self.p0_mw,
            }
        )

    @classmethod
    def from_json(cls, line: str, where: str, window: Optional[int] = None) -> "Sample":
        obj = parse_dataset_line(line, where, window)
        try:
            return cls(
                device_id=str(obj["device_id"]),
                window_power=tuple(obj["window"]),
                window_end_time_h=float(obj["t_end_h"]),
                conditions=tuple(obj["conditions"]),
                rul_h=float(obj["rul_h"]),
                p0_mw=float(obj.get("p0_mw", obj["window"][0])),
            )
        except (TypeError, ValueError) as err:
            raise ParseError(f"{where}: {err}") from None


@dataclass(frozen=True)
class NormalizationStats:
    """Min-max statistics fitted on the training split.

    The RUL label is scaled by the fixed cap, not by the data maximum.
    """

    condition_min: tuple[float, ...]
    condition_max: tuple[float, ...]
    power_min: float
    power_max: float
    rul_cap_h: float = RUL_CAP_H
    relative_power: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        try:
            return cls(
                condition_min=tuple(float(v) for v in data["condition_min"]),
                condition_max=tuple(float(v) for v in data["condition_max"]),
                power_min=float(data["power_min"]),
                power_max=float(data["power_max"]),
                rul_cap_h=float(data.get("rul_cap_h", RUL_CAP_H)),
                relative_power=bool(data.get("relative_power", True)),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ParseError(f"normalization stats: bad or missing field {err}") from None

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class NormalizedSample:
    window: np.ndarray
    conditions: np.ndarray
    target: float


@dataclass
class SplitDataset:
    train: list[Sample]
    test: list[Sample]
    stats: NormalizationStats
    split_seed: int
    train_devices: list[str] = field(default_factory=list)
    test_devices: list[str] = field(default_factory=list)


def filter_devices(fleet: Iterable[DeviceRecord], min_failure_h: float = INFANT_MORTALITY_H) -> list[DeviceRecord]:
    """Keep failed devices with ``t_f >= min_failure_h``; censored devices have no label."""
    kept = []
    for record in fleet:
        if record.censored or record.failure_time_h is None:
            continue
        if record.failure_time_h < min_failure_h:
            _LOG.debug("Excluding %s: infant mortality at %.1f h", record.device_id, record.failure_time_h)
            continue
        kept.append(record)
    return kept


def window_series(record: DeviceRecord, window: int = DEFAULT_WINDOW, rul_cap_h: float = RUL_CAP_H) -> list[Sample]:
    if record.censored or record.failure_time_h is None:
        raise UsageError(f"{record.device_id}: censored devices have no RUL label")
    t_f = record.failure_time_h
    usable = [i for i, t in enumerate(record.times_h) if t < t_f]
    n = len(usable)
    p0 = record.power_mw[0]
    features = record.conditions.as_features()
    samples = []
    for start in range(n - window + 1):
        end = start + window - 1
        t_end = record.times_h[end]
        rul = t_f - t_end
        if rul > rul_cap_h:
            continue
        samples.append(
            Sample(
                device_id=record.device_id,
                window_power=tuple(record.power_mw[start : end + 1]),
                window_end_time_h=t_end,
                conditions=features,
                rul_h=rul,
                p0_mw=p0,
            )
        )
    return samples


def build_samples(fleet: Sequence[DeviceRecord], config: Optional[DatasetConfig] = None) -> list[Sample]:
    config = config or DatasetConfig()
    config.validate()
    devices = filter_devices(fleet, config.min_failure_h)
    samples: list[Sample] = []
    for record in devices:
        samples.extend(window_series(record, config.window, config.rul_cap_h))
    _LOG.info("Built %d samples from %d of %d devices", len(samples), len(devices), len(fleet))
    return samples


def _power_feature(sample: Sample, relative: bool) -> np.ndarray:
    window = np.asarray(sample.window_power, dtype=np.float64)
    if relative:
        if not sample.p0_mw > 0:
            raise DataError(f"{sample.device_id}: initial power must be positive, got {sample.p0_mw!r}")
        return window / sample.p0_mw
    return window


def _scale(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (values - lo) / safe, 0.0)


def fit_normalize(
    samples: Sequence[Sample], relative_power: bool = True, rul_cap_h: float = RUL_CAP_H
) -> NormalizationStats:
    if not samples:
        raise UsageError("cannot fit normalization statistics on an empty training set")
    conditions = np.array([s.conditions for s in samples], dtype=np.float64)
    power = np.concatenate([_power_feature(s, relative_power) for s in samples])
    return NormalizationStats(
        condition_min=tuple(float(v) for v in conditions.min(axis=0)),
        condition_max=tuple(float(v) for v in conditions.max(axis=0)),
        power_min=float(power.min()),
        power_max=float(power.max()),
        rul_cap_h=rul_cap_h,
        relative_power=relative_power,
    )


def normalize_batch(samples: Sequence[Sample], stats: NormalizationStats) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into ``(windows (n, w), conditions (n, 6), targets (n,))``; not clipped."""
    if not samples:
        return np.zeros((0, DEFAULT_WINDOW)), np.zeros((0, N_CONDITIONS)), np.zeros(0)
    power = np.array([_power_feature(s, stats.relative_power) for s in samples])
    windows = _scale(power, np.float64(stats.power_min), np.float64(stats.power_max))
    cond = np.array([s.conditions for s in samples], dtype=np.float64)
    conditions = _scale(cond, np.array(stats.condition_min), np.array(stats.condition_max))
    targets = np.array([s.rul_h for s in samples], dtype=np.float64) / stats.rul_cap_h
    return windows, conditions, targets


def apply_normalize(sample: Sample, stats: NormalizationStats) -> NormalizedSample:
    windows, conditions, targets = normalize_batch([sample], stats)
    return NormalizedSample(windows[0], conditions[0], float(targets[0]))


def _group_by_device(samples: Sequence[Sample]) -> dict[str, list[Sample]]:
    groups: dict[str, list[Sample]] = {}
    for s in samples:
        groups.setdefault(s.device_id, []).append(s)
    return groups


def assign_devices(
    counts: dict[str, int], seed: int, fraction: float
) -> tuple[list[str], list[str]]:
    """Shuffle devices by ``seed`` and greedily fill the first side up to ``fraction`` of all samples.

    Both sides are non-empty whenever there are at least two devices.
    """
    ids = sorted(counts)
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    target = fraction * sum(counts.values())
    first: list[str] = []
    second: list[str] = []
    filled = 0
    for device_id in order:
        n = counts[device_id]
        if filled + n <= target + 0.5:
            first.append(device_id)
            filled += n
        else:
            second.append(device_id)
    if not second and len(first) > 1:
        second.append(first.pop())
    if not first and len(second) > 1:
        first.append(second.pop(0))
    return first, second


def split(
    samples: Sequence[Sample],
    seed: int,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    relative_power: bool = True,
    rul_cap_h: float = RUL_CAP_H,
) -> SplitDataset:
    groups = _group_by_device(samples)
    if len(groups) < 2:
        raise UsageError(f"a device-level split needs >= 2 devices, got {len(groups)}")
    train_ids, test_ids = assign_devices({k: len(v) for k, v in groups.items()}, seed, train_fraction)
    train_set = set(train_ids)
    train = [s for s in samples if s.device_id in train_set]
    test = [s for s in samples if s.device_id not in train_set]
    stats = fit_normalize(train, relative_power, rul_cap_h)
    _LOG.info(
        "Split %d samples: train=%d (%d devices) test=%d (%d devices), realized fraction %.3f",
        len(samples),
        len(train),
        len(train_ids),
        len(test),
        len(test_ids),
        len(train) / len(samples),
    )
    return SplitDataset(train, test, stats, seed, sorted(train_ids), sorted(test_ids))


def write_dataset(samples: Sequence[Sample], dataset: Optional[SplitDataset], out_dir: Path) -> list[Path]:
    """Write ``dataset.jsonl``, ``stats.json`` and ``split.json``; stats are ``null`` for an empty dataset."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / DATASET_FILE, out_dir / STATS_FILE, out_dir / SPLIT_FILE]
    with paths[0].open("w", encoding="utf-8", newline="\n") as f:
        for s in samples:
            f.write(s.to_json())
            f.write("\n")
    stats = dataset.stats.to_dict() if dataset else None
    split_doc = {
        "seed": dataset.split_seed if dataset else None,
        "window": len(samples[0].window_power) if samples else None,
        "train": dataset.train_devices if dataset else [],
        "test": dataset.test_devices if dataset else [],
    }
    paths[1].write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    paths[2].write_text(json.dumps(split_doc, indent=2) + "\n", encoding="utf-8")
    return paths


def read_samples(path: Path, window: Optional[int] = None) -> list[Sample]:
    """Every line must carry ``window`` power values; without it, as many as the first line."""
    samples = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                sample = Sample.from_json(line, f"{path}:{lineno}", window)
                window = len(sample.window_power)
                samples.append(sample)
    return samples


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from None


def read_dataset(in_dir: Path) -> SplitDataset:
    stats_doc = _read_json(in_dir / STATS_FILE)
    split_doc = _read_json(in_dir / SPLIT_FILE)
    if not isinstance(split_doc, dict):
        raise ParseError(f"{in_dir / SPLIT_FILE}: expected an object, got {type(split_doc).__name__}")
    window = split_doc.get("window")
    if window is not None and (isinstance(window, bool) or not isinstance(window, int) or window < 1):
        raise ParseError(f"{in_dir / SPLIT_FILE}: field 'window' must be a positive integer, got {window!r}")
    samples = read_samples(in_dir / DATASET_FILE, window)
    if stats_doc is None:
        raise UsageError(f"{in_dir}: dataset is empty, nothing to train or evaluate")
    if not isinstance(stats_doc, dict):
        raise ParseError(f"{in_dir / STATS_FILE}: expected an object, got {type(stats_doc).__name__}")
    try:
        train_ids = [str(v) for v in split_doc.get("train", [])]
        test_ids = [str(v) for v in split_doc.get("test", [])]
        split_seed = int(split_doc.get("seed") or 0)
    except (TypeError, ValueError) as err:
        raise ParseError(f"{in_dir / SPLIT_FILE}: {err}") from None
    train_set = set(train_ids)
    unknown = {s.device_id for s in samples} - train_set - set(test_ids)
    if unknown:
        raise DataError(f"{in_dir}: devices {sorted(unknown)!r} are in neither split")
    return SplitDataset(
        train=[s for s in samples if s.device_id in train_set],
        test=[s for s in samples if s.device_id not in train_set],
        stats=NormalizationStats.from_dict(stats_doc),
        split_seed=split_seed,
        train_devices=train_ids,
        test_devices=test_ids,
    )
