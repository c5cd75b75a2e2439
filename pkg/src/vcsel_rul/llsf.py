"""Conventional baseline: fit a least-squares line to power vs. time and
extrapolate it to the failure threshold."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .const import DEFAULT_DROP_FRACTION, RUL_CAP_H
from .dataset import Sample
from .errors import DataError, UsageError
from .metrics import EvalReport, ScoreParams, make_report
from .synth import DeviceRecord

_LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class LlsfFit:
    slope: float
    intercept: float
    n_points: int
    t_start_h: float
    t_end_h: float

    def crossing_time(self, threshold_power: float) -> Optional[float]:
        if self.slope >= 0:
            return None
        return (threshold_power - self.intercept) / self.slope


def fit_line(times_h: Sequence[float], powers: Sequence[float]) -> LlsfFit:
    t = np.asarray(times_h, dtype=np.float64)
    p = np.asarray(powers, dtype=np.float64)
    if t.shape != p.shape or t.size < 2:
        raise UsageError(f"a line fit needs >= 2 paired points, got {t.size} times / {p.size} powers")
    if np.all(t == t[0]):
        raise UsageError(f"a line fit needs distinct times, all equal {t[0]!r}")
    t_mean = t.mean()
    design = np.column_stack([t - t_mean, np.ones_like(t)])
    (slope, centered_intercept), *_ = np.linalg.lstsq(design, p, rcond=None)
    return LlsfFit(
        slope=float(slope),
        intercept=float(centered_intercept - slope * t_mean),
        n_points=int(t.size),
        t_start_h=float(t.min()),
        t_end_h=float(t.max()),
    )


def llsf_predict_rul(
    times_h: Sequence[float],
    powers: Sequence[float],
    now_h: float,
    threshold_power: float,
    rul_cap_h: float = RUL_CAP_H,
) -> float:
    """RUL in ``[0, rul_cap_h]``: the cap for a non-degrading fit, 0 once the line is past threshold."""
    fit = fit_line(times_h, powers)
    t_x = fit.crossing_time(threshold_power)
    if t_x is None:
        return float(rul_cap_h)
    return float(min(max(t_x - now_h, 0.0), rul_cap_h))


def llsf_predict_samples(
    samples: Sequence[Sample],
    fleet: Sequence[DeviceRecord],
    drop_fraction: float = DEFAULT_DROP_FRACTION,
    rul_cap_h: float = RUL_CAP_H,
) -> np.ndarray:
    """Predict each sample's RUL from its device's full history up to the window end."""
    by_id = {r.device_id: r for r in fleet}
    pred = np.empty(len(samples))
    for i, s in enumerate(samples):
        record = by_id.get(s.device_id)
        if record is None:
            raise DataError(f"no fleet record for device {s.device_id!r}")
        times = np.asarray(record.times_h)
        keep = times <= s.window_end_time_h
        threshold = record.power_mw[0] * (1.0 - drop_fraction)
        pred[i] = llsf_predict_rul(
            times[keep], np.asarray(record.power_mw)[keep], s.window_end_time_h, threshold, rul_cap_h
        )
    return pred


def llsf_evaluate(
    samples: Sequence[Sample],
    fleet: Sequence[DeviceRecord],
    drop_fraction: float = DEFAULT_DROP_FRACTION,
    rul_cap_h: float = RUL_CAP_H,
    histogram_bins: int = 20,
    params: Optional[ScoreParams] = None,
) -> EvalReport:
    pred = llsf_predict_samples(samples, fleet, drop_fraction, rul_cap_h)
    _LOG.info("LLSF baseline evaluated on %d samples", len(samples))
    return make_report([s.rul_h for s in samples], pred, histogram_bins, params, metadata={"method": "llsf"})
