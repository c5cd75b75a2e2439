"""Experiment configuration loaded from YAML.

Precedence is flags > file > dataclass defaults: ``load_config`` fills the
dataclasses from the file, the CLI then overrides individual fields.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import yaml

from .dataset import DatasetConfig
from .errors import ConfigurationError
from .metrics import ScoreParams
from .model import ModelSpec, TrainConfig
from .synth import GeneratorConfig

SECTIONS = ("generator", "dataset", "model", "train", "metrics")


@dataclass
class MetricsConfig:
    a1: float = 250.0
    a2: float = 220.0
    histogram_bins: int = 20

    def score_params(self) -> ScoreParams:
        return ScoreParams(self.a1, self.a2)


@dataclass
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def validate(self) -> None:
        self.generator.validate()
        self.dataset.validate()
        self.model.validate()
        self.train.validate()
        self.metrics.score_params().validate()


def _floats(values: Any, name: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be a list of numbers, got {values!r}") from None


def _ints(values: Any, name: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be a list of integers, got {values!r}") from None


def _generator(data: dict[str, Any]) -> GeneratorConfig:
    d = GeneratorConfig()
    return GeneratorConfig(
        device_count=int(data.get("device_count", d.device_count)),
        sampling_interval_h=float(data.get("sampling_interval_h", d.sampling_interval_h)),
        max_test_hours=float(data.get("max_test_hours", d.max_test_hours)),
        temperature_levels_c=_floats(data.get("temperature_levels_c", d.temperature_levels_c), "temperature_levels_c"),
        current_levels_ma=_floats(data.get("current_levels_ma", d.current_levels_ma), "current_levels_ma"),
        oxide_apertures_um=_floats(data.get("oxide_apertures_um", d.oxide_apertures_um), "oxide_apertures_um"),
        junction_rise_c=_floats(data.get("junction_rise_c", d.junction_rise_c), "junction_rise_c"),
        resistance_area_ohm_um2=float(data.get("resistance_area_ohm_um2", d.resistance_area_ohm_um2)),
        p0_range_mw=_floats(data.get("p0_range_mw", d.p0_range_mw), "p0_range_mw"),
        prefactor=float(data.get("prefactor", d.prefactor)),
        activation_energy_ev=float(data.get("activation_energy_ev", d.activation_energy_ev)),
        current_density_exponent=float(data.get("current_density_exponent", d.current_density_exponent)),
        time_exponent=float(data.get("time_exponent", d.time_exponent)),
        device_spread=float(data.get("device_spread", d.device_spread)),
        noise_std_relative=float(data.get("noise_std_relative", d.noise_std_relative)),
        infant_mortality_fraction=float(data.get("infant_mortality_fraction", d.infant_mortality_fraction)),
        drop_fraction=float(data.get("drop_fraction", d.drop_fraction)),
        master_seed=int(data.get("master_seed", d.master_seed)),
    )


def _dataset(data: dict[str, Any]) -> DatasetConfig:
    d = DatasetConfig()
    seed = data.get("split_seed", d.split_seed)
    return DatasetConfig(
        window=int(data.get("window", d.window)),
        rul_cap_h=float(data.get("rul_cap_h", d.rul_cap_h)),
        min_failure_h=float(data.get("min_failure_h", d.min_failure_h)),
        train_fraction=float(data.get("train_fraction", d.train_fraction)),
        relative_power=bool(data.get("relative_power", d.relative_power)),
        split_seed=None if seed is None else int(seed),
    )


def _model(data: dict[str, Any]) -> ModelSpec:
    d = ModelSpec()
    return ModelSpec(
        variant=str(data.get("variant", d.variant)),
        conv_filters=_ints(data.get("conv_filters", d.conv_filters), "conv_filters"),
        conv_kernel=int(data.get("conv_kernel", d.conv_kernel)),
        pool_size=int(data.get("pool_size", d.pool_size)),
        pool_after=_ints(data.get("pool_after", d.pool_after), "pool_after"),
        lstm_cells=_ints(data.get("lstm_cells", d.lstm_cells), "lstm_cells"),
        head_width=int(data.get("head_width", d.head_width)),
        conv_activation=str(data.get("conv_activation", d.conv_activation)),
        head_activation=str(data.get("head_activation", d.head_activation)),
        seed=int(data.get("seed", d.seed)),
    )


def _train(data: dict[str, Any]) -> TrainConfig:
    d = TrainConfig()
    return TrainConfig(
        epochs=int(data.get("epochs", d.epochs)),
        batch_size=int(data.get("batch_size", d.batch_size)),
        learning_rate=float(data.get("learning_rate", d.learning_rate)),
        optimizer=str(data.get("optimizer", d.optimizer)),
        patience=int(data.get("patience", d.patience)),
        validation_fraction=float(data.get("validation_fraction", d.validation_fraction)),
        restore_best=bool(data.get("restore_best", d.restore_best)),
        seed=int(data.get("seed", d.seed)),
    )


def _metrics(data: dict[str, Any]) -> MetricsConfig:
    d = MetricsConfig()
    return MetricsConfig(
        a1=float(data.get("a1", d.a1)),
        a2=float(data.get("a2", d.a2)),
        histogram_bins=int(data.get("histogram_bins", d.histogram_bins)),
    )


def config_from_dict(data: Optional[dict[str, Any]]) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config root must be a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown config sections {unknown!r}; expected {list(SECTIONS)}")
    sections = {}
    for name in SECTIONS:
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigurationError(f"config section {name!r} must be a mapping")
        sections[name] = section
    try:
        return ExperimentConfig(
            generator=_generator(sections["generator"]),
            dataset=_dataset(sections["dataset"]),
            model=_model(sections["model"]),
            train=_train(sections["train"]),
            metrics=_metrics(sections["metrics"]),
        )
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid config value: {err}") from None


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as err:
            raise ConfigurationError(f"{path}: invalid YAML: {err}") from None
    return config_from_dict(data)

