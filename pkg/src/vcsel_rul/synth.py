"""Synthetic accelerated-aging telemetry for a fleet of VCSELs.

Each device runs at constant operating conditions while its output power
follows ``P(t) = P0 * (1 - k * t**m)`` with multiplicative measurement
noise. The rate ``k = A * J**n * exp(-Ea / (kB * Tj))`` grows with junction
temperature (Arrhenius) and current density. Failure is the first time the
power is 20% (1 dB) below the first measurement, located by linear
interpolation between the straddling samples.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .const import (
    CONDITIONS_FILE,
    CONDITIONS_HEADER,
    DEFAULT_DROP_FRACTION,
    FLEET_FILE,
    FLEET_HEADER,
    INFANT_MORTALITY_H,
)
from .errors import ConfigurationError, DataError, InputError
from .parser import parse_conditions_csv, parse_fleet_csv

_LOG = logging.getLogger(__name__)

BOLTZMANN_EV_K = 8.617333262e-5
KELVIN_OFFSET = 273.15
AMBIENT_SWEEP_C = (85.0, 150.0)


@dataclass(frozen=True)
class OperatingConditions:
    oxide_aperture_um: float
    junction_temp_c: float
    current_ma: float
    ambient_temp_c: float
    current_density_ka_cm2: float
    resistance_ohm: float

    def as_features(self) -> tuple[float, float, float, float, float, float]:
        """Feature order fed to the model: OA, Tj, I, T, J, R."""
        return (
            self.oxide_aperture_um,
            self.junction_temp_c,
            self.current_ma,
            self.ambient_temp_c,
            self.current_density_ka_cm2,
            self.resistance_ohm,
        )


@dataclass
class DeviceRecord:
    device_id: str
    conditions: OperatingConditions
    times_h: list[float]
    power_mw: list[float]
    failure_time_h: Optional[float] = None
    censored: bool = True
    law_rate: Optional[float] = field(default=None, compare=False)

    @property
    def initial_power_mw(self) -> float:
        return self.power_mw[0]


@dataclass
class GeneratorConfig:
    device_count: int = 240
    sampling_interval_h: float = 50.0
    max_test_hours: float = 3500.0
    temperature_levels_c: tuple[float, ...] = (85.0, 100.0, 125.0, 150.0)
    current_levels_ma: tuple[float, ...] = (6.0, 8.0, 10.0, 12.0)
    oxide_apertures_um: tuple[float, ...] = (4.0, 6.0, 8.0)
    junction_rise_c: tuple[float, float] = (5.0, 25.0)
    resistance_area_ohm_um2: float = 2500.0
    p0_range_mw: tuple[float, float] = (1.0, 3.0)
    prefactor: float = 0.0743
    activation_energy_ev: float = 0.5
    current_density_exponent: float = 1.5
    time_exponent: float = 1.5
    device_spread: float = 0.3
    noise_std_relative: float = 0.005
    infant_mortality_fraction: float = 0.05
    drop_fraction: float = DEFAULT_DROP_FRACTION
    master_seed: int = 42

    def validate(self) -> None:
        if self.device_count < 0:
            raise ConfigurationError(f"device_count must be >= 0, got {self.device_count!r}")
        if not self.sampling_interval_h > 0:
            raise ConfigurationError(f"sampling_interval_h must be > 0, got {self.sampling_interval_h!r}")
        if self.max_test_hours < self.sampling_interval_h:
            raise ConfigurationError(
                f"max_test_hours ({self.max_test_hours!r}) must be >= sampling_interval_h "
                f"({self.sampling_interval_h!r})"
            )
        for name in ("temperature_levels_c", "current_levels_ma", "oxide_apertures_um"):
            if not getattr(self, name):
                raise ConfigurationError(f"{name} must list at least one level")
        lo, hi = AMBIENT_SWEEP_C
        for t in self.temperature_levels_c:
            if not lo <= t <= hi:
                raise ConfigurationError(f"temperature level {t!r} outside the {lo}-{hi} C sweep")
        if any(v <= 0 for v in (*self.current_levels_ma, *self.oxide_apertures_um)):
            raise ConfigurationError("current and oxide aperture levels must be positive")
        if self.prefactor <= 0:
            raise ConfigurationError(f"prefactor {self.prefactor!r} makes every degradation rate zero")
        if self.time_exponent <= 0:
            raise ConfigurationError(f"time_exponent must be > 0, got {self.time_exponent!r}")
        for name in ("p0_range_mw", "junction_rise_c"):
            bounds = getattr(self, name)
            if len(bounds) != 2 or not bounds[0] <= bounds[1]:
                raise ConfigurationError(f"{name} must be a [low, high] pair with low <= high, got {bounds!r}")
        if not self.p0_range_mw[0] > 0.0:
            raise ConfigurationError(f"p0_range_mw must be a positive range, got {self.p0_range_mw!r}")
        if self.noise_std_relative < 0 or self.device_spread < 0:
            raise ConfigurationError("noise_std_relative and device_spread must be >= 0")
        if not 0.0 <= self.infant_mortality_fraction <= 1.0:
            raise ConfigurationError(
                f"infant_mortality_fraction must be in [0, 1], got {self.infant_mortality_fraction!r}"
            )
        if not 0.0 < self.drop_fraction < 1.0:
            raise ConfigurationError(f"drop_fraction must be in (0, 1), got {self.drop_fraction!r}")


def current_density_ka_cm2(current_ma: float, oxide_aperture_um: float) -> float:
    area_um2 = math.pi * (oxide_aperture_um / 2.0) ** 2
    # mA / um^2 -> kA / cm^2
    return current_ma / area_um2 * 100.0


def degradation_rate(conditions: OperatingConditions, config: GeneratorConfig) -> float:
    tj_k = conditions.junction_temp_c + KELVIN_OFFSET
    return (
        config.prefactor
        * conditions.current_density_ka_cm2**config.current_density_exponent
        * math.exp(-config.activation_energy_ev / (BOLTZMANN_EV_K * tj_k))
    )


def analytic_failure_time(rate: float, time_exponent: float, drop_fraction: float = DEFAULT_DROP_FRACTION) -> float:
    """Closed-form crossing of the noiseless law: ``(drop / k) ** (1 / m)``."""
    return (drop_fraction / rate) ** (1.0 / time_exponent)


def sample_times(config: GeneratorConfig) -> np.ndarray:
    n = int(math.floor(config.max_test_hours / config.sampling_interval_h + 1e-9)) + 1
    return config.sampling_interval_h * np.arange(n, dtype=np.float64)


def simulate_device(
    device_id: str,
    conditions: OperatingConditions,
    p0_mw: float,
    rate: float,
    config: GeneratorConfig,
    rng: Optional[np.random.Generator] = None,
) -> DeviceRecord:
    """Sample one power trace; monitoring stops at the first sample at or below threshold."""
    times = sample_times(config)
    clean = p0_mw * (1.0 - rate * times**config.time_exponent)
    if config.noise_std_relative > 0:
        if rng is None:
            raise ConfigurationError("noisy simulation needs an rng")
        power = clean * (1.0 + config.noise_std_relative * rng.standard_normal(times.size))
    else:
        power = clean
    power = np.maximum(power, p0_mw * 1e-3)

    threshold = power[0] * (1.0 - config.drop_fraction)
    below = np.flatnonzero(power[1:] <= threshold)
    stop = below[0] + 2 if below.size else times.size

    record = DeviceRecord(
        device_id=device_id,
        conditions=conditions,
        times_h=times[:stop].tolist(),
        power_mw=power[:stop].tolist(),
        law_rate=rate,
    )
    record.failure_time_h = detect_failure(record, config.drop_fraction)
    record.censored = record.failure_time_h is None
    return record


def _draw_device(index: int, config: GeneratorConfig) -> DeviceRecord:
    rng = np.random.default_rng([config.master_seed, index])
    ambient = float(rng.choice(config.temperature_levels_c))
    current = float(rng.choice(config.current_levels_ma))
    aperture = float(rng.choice(config.oxide_apertures_um))
    rise = float(rng.uniform(*config.junction_rise_c))
    area_um2 = math.pi * (aperture / 2.0) ** 2
    resistance = config.resistance_area_ohm_um2 / area_um2 * float(1.0 + 0.05 * rng.standard_normal())
    p0 = float(rng.uniform(*config.p0_range_mw))
    spread = float(np.exp(config.device_spread * rng.standard_normal()))
    infant = bool(rng.random() < config.infant_mortality_fraction)
    infant_tf = float(rng.uniform(20.0, 0.95 * INFANT_MORTALITY_H))

    conditions = OperatingConditions(
        oxide_aperture_um=aperture,
        junction_temp_c=ambient + rise,
        current_ma=current,
        ambient_temp_c=ambient,
        current_density_ka_cm2=current_density_ka_cm2(current, aperture),
        resistance_ohm=resistance,
    )
    if infant:
        rate = config.drop_fraction / infant_tf**config.time_exponent
    else:
        rate = degradation_rate(conditions, config) * spread
    return simulate_device(f"D{index:04d}", conditions, p0, rate, config, rng)


def generate_fleet(config: GeneratorConfig) -> list[DeviceRecord]:
    """Generate ``config.device_count`` devices; each uses its own stream seeded by (master_seed, index)."""
    config.validate()
    fleet = [_draw_device(i, config) for i in range(config.device_count)]
    failed = sum(1 for r in fleet if not r.censored)
    _LOG.info(
        "Generated %d devices (%d failed, %d censored) seed=%d",
        len(fleet),
        failed,
        len(fleet) - failed,
        config.master_seed,
    )
    return fleet


def detect_failure(record: DeviceRecord, drop_fraction: float = DEFAULT_DROP_FRACTION) -> Optional[float]:
    """Time at which power first falls 20% (by default) below the first measurement.

    Linear interpolation between the last sample above and the first sample at
    or below the threshold. ``None`` when the trace never crosses.
    """
    times = record.times_h
    power = record.power_mw
    if len(times) < 2 or len(power) != len(times):
        raise InputError(
            f"{record.device_id}: need >= 2 paired samples, got {len(times)} times / {len(power)} powers"
        )
    p0 = power[0]
    if not p0 > 0:
        raise DataError(f"{record.device_id}: initial power must be positive, got {p0!r}")
    threshold = p0 * (1.0 - drop_fraction)
    for k in range(1, len(power)):
        if power[k] <= threshold:
            p_hi, p_lo = power[k - 1], power[k]
            t_hi, t_lo = times[k - 1], times[k]
            return t_hi + (p_hi - threshold) / (p_hi - p_lo) * (t_lo - t_hi)
    return None


def write_fleet(fleet: Sequence[DeviceRecord], out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    fleet_path = out_dir / FLEET_FILE
    conditions_path = out_dir / CONDITIONS_FILE
    with fleet_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(FLEET_HEADER)
        for record in fleet:
            for t, p in zip(record.times_h, record.power_mw):
                writer.writerow((record.device_id, repr(t), repr(p)))
    with conditions_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CONDITIONS_HEADER)
        for record in fleet:
            t_f = "" if record.failure_time_h is None else repr(record.failure_time_h)
            writer.writerow(
                (
                    record.device_id,
                    *(repr(v) for v in record.conditions.as_features()),
                    t_f,
                    "true" if record.censored else "false",
                )
            )
    return fleet_path, conditions_path


def read_fleet(in_dir: Path) -> list[DeviceRecord]:
    fleet_path = in_dir / FLEET_FILE
    conditions_path = in_dir / CONDITIONS_FILE
    with fleet_path.open("r", encoding="utf-8", newline="") as f:
        traces = parse_fleet_csv(f, str(fleet_path))
    with conditions_path.open("r", encoding="utf-8", newline="") as f:
        rows = parse_conditions_csv(f, str(conditions_path))

    fleet = []
    for device_id, features, t_f, censored in rows:
        if device_id not in traces:
            raise DataError(f"{conditions_path}: device {device_id!r} has no measurements in {fleet_path}")
        times, power = traces[device_id]
        fleet.append(
            DeviceRecord(
                device_id=device_id,
                conditions=OperatingConditions(*features),
                times_h=times,
                power_mw=power,
                failure_time_h=t_f,
                censored=censored,
            )
        )
    return fleet
