"""Hybrid CNN+LSTM RUL regressor, its ablations, training loop and checkpoints.

Hybrid wiring (default widths)::

    conditions (6 x 1) -> conv32 k3 -> pool2 -> conv32 k3 -> pool2 -> conv16 k3 -> flatten (16)
    power window (3 x 1) -> LSTM 40 -> LSTM 20 -> LSTM 10 -> final hidden (10)
    concat (26) -> dense 64 relu -> dense 1 identity

Canonical parameter order (used by checkpoints): conv layers in order, LSTM
layers in order, hidden dense, output dense; each block is its weights
flattened row-major followed by its biases.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .const import ACTIVATIONS, CHECKPOINT_FORMAT_VERSION, DEFAULT_WINDOW, N_CONDITIONS, RUL_CAP_H, VARIANTS
from .dataset import NormalizationStats, Sample, SplitDataset, assign_devices, normalize_batch
from .errors import ConfigurationError, NumericalError, ParseError, TrainingAborted, UsageError
from .layers import Concat, Conv1D, Dense, Flatten, Layer, LstmStack, MaxPool1D
from .optim import build_optimizer, sgd_adam_step
from .parser import CHECKPOINT_MAGIC, parse_checkpoint
from .tensor import LayerParams, Tensor

_LOG = logging.getLogger(__name__)

INFERENCE_CHUNK = 4096


@dataclass
class ModelSpec:
    variant: str = "hybrid"
    conv_filters: tuple[int, ...] = (32, 32, 16)
    conv_kernel: int = 3
    pool_size: int = 2
    pool_after: tuple[int, ...] = (0, 1)
    lstm_cells: tuple[int, ...] = (40, 20, 10)
    head_width: int = 64
    conv_activation: str = "relu"
    head_activation: str = "relu"
    window: int = DEFAULT_WINDOW
    n_conditions: int = N_CONDITIONS
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("conv_activation", "head_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ConfigurationError(f"{name} must be one of {ACTIVATIONS}, got {getattr(self, name)!r}")
        if not self.conv_filters or any(f < 1 for f in self.conv_filters):
            raise ConfigurationError(f"conv_filters must be positive, got {self.conv_filters!r}")
        if not self.lstm_cells or any(c < 1 for c in self.lstm_cells):
            raise ConfigurationError(f"lstm_cells must be positive, got {self.lstm_cells!r}")
        if self.head_width < 1 or self.window < 1 or self.n_conditions < 1:
            raise ConfigurationError("head_width, window and n_conditions must be >= 1")
        bad = [i for i in self.pool_after if not 0 <= i < len(self.conv_filters)]
        if bad:
            raise ConfigurationError(f"pool_after refers to missing conv layers {bad!r}")

    def conv_output_width(self) -> int:
        """Flattened width of the conv branch; raises naming the stage that runs out of length."""
        length = self.n_conditions
        for i, _ in enumerate(self.conv_filters):
            if i in self.pool_after:
                if length < self.pool_size:
                    raise ConfigurationError(
                        f"conv branch stage {i + 1} pooling: length {length} is shorter than pool {self.pool_size}"
                    )
                length //= self.pool_size
        return length * self.conv_filters[-1]

    def head_input_width(self) -> int:
        if self.variant == "hybrid":
            return self.conv_output_width() + self.lstm_cells[-1]
        if self.variant == "cnn_only":
            return self.conv_output_width()
        if self.variant == "lstm_only":
            return self.lstm_cells[-1]
        return self.window + self.n_conditions

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelSpec":
        """Coerce a decoded mapping; wrong shapes or types raise ``TypeError``/``ValueError``."""
        if not isinstance(data, dict):
            raise TypeError(f"expected an object, got {type(data).__name__}")
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        for key in ("conv_filters", "pool_after", "lstm_cells"):
            if key in known:
                if not isinstance(known[key], (list, tuple)):
                    raise TypeError(f"{key} must be a list of integers, got {known[key]!r}")
                known[key] = tuple(int(v) for v in known[key])
        for key in ("conv_kernel", "pool_size", "head_width", "window", "n_conditions", "seed"):
            if key in known:
                known[key] = int(known[key])
        for key in ("variant", "conv_activation", "head_activation"):
            if key in known:
                known[key] = str(known[key])
        return cls(**known)


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    patience: int = 50
    validation_fraction: float = 0.1
    restore_best: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs!r}")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigurationError("batch_size and patience must be positive")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not 0.0 < self.validation_fraction < 0.5:
            raise ConfigurationError(
                f"validation_fraction must be in (0, 0.5), got {self.validation_fraction!r}"
            )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    best_val_loss: float


@dataclass
class TrainResult:
    model: "Model"
    history: list[EpochRecord]
    best_epoch: Optional[int]
    stopped_early: bool


class Model:
    def __init__(self, spec: ModelSpec, stats: Optional[NormalizationStats] = None) -> None:
        spec.validate()
        head_in = spec.head_input_width()
        if head_in < 1:
            raise ConfigurationError(f"{spec.variant}: head input width is {head_in}")
        self.spec = spec
        self.stats = stats
        self.metadata: dict[str, Any] = {}
        rng = np.random.default_rng(spec.seed)

        self.conv_stack: list[Layer] = []
        self.flatten = Flatten()
        self.lstm: Optional[LstmStack] = None
        self.concat = Concat()
        if spec.variant in ("hybrid", "cnn_only"):
            ch_in = 1
            for i, filters in enumerate(spec.conv_filters):
                self.conv_stack.append(Conv1D(ch_in, filters, spec.conv_kernel, spec.conv_activation, rng=rng))
                if i in spec.pool_after:
                    self.conv_stack.append(MaxPool1D(spec.pool_size))
                ch_in = filters
        if spec.variant in ("hybrid", "lstm_only"):
            self.lstm = LstmStack(1, spec.lstm_cells, rng=rng)
        self.hidden = Dense(head_in, spec.head_width, spec.head_activation, rng=rng)
        self.out = Dense(spec.head_width, 1, "identity", rng=rng)

    def parameters(self) -> list[LayerParams]:
        blocks: list[LayerParams] = []
        for layer in self.conv_stack:
            blocks.extend(layer.params())
        if self.lstm is not None:
            blocks.extend(self.lstm.params())
        blocks.extend(self.hidden.params())
        blocks.extend(self.out.params())
        return blocks

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_flat(self) -> Tensor:
        return np.concatenate([p.flat_values() for p in self.parameters()])

    def set_flat(self, values: Tensor) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.parameter_count:
            raise ConfigurationError(f"model has {self.parameter_count} parameters, got {values.size} values")
        offset = 0
        for p in self.parameters():
            p.load_flat(values[offset : offset + p.size])
            offset += p.size

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, windows: Tensor, conditions: Tensor, record: bool = False) -> Tensor:
        """Normalized inputs ``(batch, window)`` and ``(batch, 6)`` to raw outputs ``(batch,)``."""
        variant = self.spec.variant
        if variant == "mlp":
            z = self.concat.forward(windows, conditions, record)
        else:
            branches = []
            if self.conv_stack:
                x = conditions[:, :, None]
                for layer in self.conv_stack:
                    x = layer.forward(x, record)
                branches.append(self.flatten.forward(x, record))
            if self.lstm is not None:
                branches.append(self.lstm.forward(windows[:, :, None], record))
            z = self.concat.forward(*branches, record) if len(branches) == 2 else branches[0]
        return self.out.forward(self.hidden.forward(z, record), record)[:, 0]

    def backward(self, d_out: Tensor) -> tuple[Tensor, Tensor]:
        """Backpropagate ``d loss / d output``; returns gradients for (windows, conditions)."""
        dz = self.hidden.backward(self.out.backward(d_out[:, None]))
        batch = dz.shape[0]
        d_windows = np.zeros((batch, self.spec.window))
        d_conditions = np.zeros((batch, self.spec.n_conditions))
        if self.spec.variant == "mlp":
            d_windows, d_conditions = self.concat.backward(dz)
            return d_windows, d_conditions
        if self.spec.variant == "hybrid":
            d_conv, d_lstm = self.concat.backward(dz)
        else:
            d_conv = d_lstm = dz
        if self.conv_stack:
            dx = self.flatten.backward(d_conv)
            for layer in reversed(self.conv_stack):
                dx = layer.backward(dx)
            d_conditions = dx[:, :, 0]
        if self.lstm is not None:
            d_windows = self.lstm.backward(d_lstm)[:, :, 0]
        return d_windows, d_conditions

    def loss(self, windows: Tensor, conditions: Tensor, targets: Tensor) -> float:
        """Mean squared error on normalized RUL, without recording a tape."""
        if targets.size == 0:
            return float("nan")
        err = self.predict_normalized(windows, conditions) - targets
        return float(np.mean(err * err))

    def predict_normalized(self, windows: Tensor, conditions: Tensor) -> Tensor:
        outputs = [
            self.forward(windows[i : i + INFERENCE_CHUNK], conditions[i : i + INFERENCE_CHUNK])
            for i in range(0, windows.shape[0], INFERENCE_CHUNK)
        ]
        return np.concatenate(outputs) if outputs else np.zeros(0)


def build(spec: ModelSpec, stats: Optional[NormalizationStats] = None) -> Model:
    model = Model(spec, stats)
    _LOG.debug("Built %s model with %d parameters", spec.variant, model.parameter_count)
    return model


def _validation_carve(train: Sequence[Sample], config: TrainConfig) -> tuple[list[Sample], list[Sample]]:
    """Hold out whole devices for early stopping, or single samples when only one device trains."""
    counts: dict[str, int] = {}
    for s in train:
        counts[s.device_id] = counts.get(s.device_id, 0) + 1
    if len(counts) >= 2:
        fit_ids, _ = assign_devices(counts, config.seed, 1.0 - config.validation_fraction)
        keep = set(fit_ids)
        return [s for s in train if s.device_id in keep], [s for s in train if s.device_id not in keep]
    if len(train) < 2:
        return list(train), []
    order = np.random.default_rng(config.seed).permutation(len(train))
    n_val = max(1, int(round(config.validation_fraction * len(train))))
    val_idx = set(order[:n_val].tolist())
    return (
        [s for i, s in enumerate(train) if i not in val_idx],
        [s for i, s in enumerate(train) if i in val_idx],
    )


def train(model: Model, dataset: SplitDataset, config: Optional[TrainConfig] = None) -> TrainResult:
    """Minimize MSE on normalized RUL with minibatches shuffled by ``config.seed``.

    On a non-finite loss or gradient the model is reset to the parameters of
    the last completed epoch and ``TrainingAborted`` is raised.
    """
    config = config or TrainConfig()
    config.validate()
    if not dataset.train:
        raise UsageError("training split is empty")
    model.stats = dataset.stats
    fit_samples, val_samples = _validation_carve(dataset.train, config)
    xw, xc, y = normalize_batch(fit_samples, dataset.stats)
    vw, vc, vy = normalize_batch(val_samples, dataset.stats)
    _LOG.info(
        "Training %s on %d samples (%d validation) for up to %d epochs",
        model.spec.variant,
        len(fit_samples),
        len(val_samples),
        config.epochs,
    )

    rng = np.random.default_rng(config.seed)
    optimizer = build_optimizer(config.optimizer, config.learning_rate)
    params = model.parameters()
    history: list[EpochRecord] = []
    best = float("inf")
    best_params: Optional[Tensor] = None
    best_epoch: Optional[int] = None
    wait = 0
    stopped_early = False
    n = y.size

    for epoch in range(1, config.epochs + 1):
        last_good = model.get_flat()
        try:
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                model.zero_grad()
                pred = model.forward(xw[idx], xc[idx], record=True)
                model.backward(2.0 * (pred - y[idx]) / idx.size)
                sgd_adam_step(params, optimizer)
            train_loss = model.loss(xw, xc, y)
            val_loss = model.loss(vw, vc, vy) if vy.size else None
            monitored = val_loss if val_loss is not None else train_loss
            if not np.isfinite(monitored) or not np.isfinite(train_loss):
                raise NumericalError(f"loss became non-finite at epoch {epoch}")
        except NumericalError as err:
            model.set_flat(last_good)
            raise TrainingAborted(str(err), epoch, [last_good]) from err

        if monitored < best:
            best, best_epoch, wait = monitored, epoch, 0
            best_params = model.get_flat()
        else:
            wait += 1
        history.append(EpochRecord(epoch, train_loss, val_loss, best))
        _LOG.debug("epoch %d train=%.6g val=%s best=%.6g", epoch, train_loss, val_loss, best)
        if wait >= config.patience:
            stopped_early = True
            _LOG.info("Early stop at epoch %d (best epoch %s)", epoch, best_epoch)
            break

    if config.restore_best and best_params is not None:
        model.set_flat(best_params)
    model.metadata = {
        "epochs_run": len(history),
        "best_epoch": best_epoch,
        "final_train_loss": history[-1].train_loss if history else None,
        "final_val_loss": history[-1].val_loss if history else None,
        "train_seed": config.seed,
        "model_seed": model.spec.seed,
    }
    return TrainResult(model, history, best_epoch, stopped_early)


def to_hours(raw: Union[Tensor, float], rul_cap_h: float = RUL_CAP_H) -> Union[Tensor, float]:
    """Denormalize network output and clamp below at 0 h."""
    return np.maximum(np.asarray(raw, dtype=np.float64) * rul_cap_h, 0.0)


def predict_rul(
    model: Model, samples: Sequence[Sample], stats: Optional[NormalizationStats] = None
) -> np.ndarray:
    """Predicted RUL in hours, in input order, normalized with the model's own statistics."""
    if model.stats is None:
        raise UsageError("model carries no normalization statistics; train it or load a checkpoint")
    if stats is not None and stats.fingerprint() != model.stats.fingerprint():
        raise UsageError(
            f"normalization statistics fingerprint {stats.fingerprint()[:12]} does not match "
            f"the model's {model.stats.fingerprint()[:12]}"
        )
    windows, conditions, _ = normalize_batch(samples, model.stats)
    return to_hours(model.predict_normalized(windows, conditions), model.stats.rul_cap_h)


@dataclass
class Checkpoint:
    spec: ModelSpec
    stats: Optional[NormalizationStats]
    parameters: Tensor
    metadata: dict[str, Any] = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT_VERSION


def save(model: Model, path: Path) -> Path:
    values = model.get_flat()
    lines = [
        CHECKPOINT_MAGIC,
        f"format_version: {CHECKPOINT_FORMAT_VERSION}",
        f"spec: {json.dumps(model.spec.to_dict(), sort_keys=True)}",
        f"stats: {json.dumps(model.stats.to_dict() if model.stats else None, sort_keys=True)}",
        f"metadata: {json.dumps(model.metadata, sort_keys=True)}",
        f"parameter_count: {values.size}",
        "parameters:",
    ]
    lines.extend(repr(float(v)) for v in values)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_checkpoint(path: Path) -> Checkpoint:
    header, values = parse_checkpoint(path.read_text(encoding="utf-8"), str(path))
    if header["format_version"] != str(CHECKPOINT_FORMAT_VERSION):
        raise ParseError(
            f"{path}: unsupported format_version {header['format_version']!r} "
            f"(this build reads {CHECKPOINT_FORMAT_VERSION})"
        )
    docs = {}
    for key in ("spec", "stats", "metadata"):
        try:
            docs[key] = json.loads(header[key])
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: field {key!r} is not valid JSON: {err.msg}") from None
    try:
        spec = ModelSpec.from_dict(docs["spec"])
        spec.validate()
        spec.head_input_width()
    except (ConfigurationError, TypeError, ValueError) as err:
        raise ParseError(f"{path}: field 'spec' is not a usable model spec: {err}") from None
    stats_doc, metadata = docs["stats"], docs["metadata"]
    if stats_doc is not None and not isinstance(stats_doc, dict):
        raise ParseError(f"{path}: field 'stats' must be an object or null, got {type(stats_doc).__name__}")
    if not isinstance(metadata, dict):
        raise ParseError(f"{path}: field 'metadata' must be an object, got {type(metadata).__name__}")
    stats = NormalizationStats.from_dict(stats_doc) if stats_doc is not None else None
    return Checkpoint(spec, stats, np.array(values, dtype=np.float64), metadata)


def load(path: Path) -> Model:
    checkpoint = read_checkpoint(path)
    model = Model(checkpoint.spec, checkpoint.stats)
    if checkpoint.parameters.size != model.parameter_count:
        raise ParseError(
            f"{path}: field 'parameter_count' is {checkpoint.parameters.size}, "
            f"a {checkpoint.spec.variant} model with this spec has {model.parameter_count}"
        )
    model.set_flat(checkpoint.parameters)
    model.metadata = checkpoint.metadata
    return model
