from dataclasses import replace

import numpy as np
import pytest

from vcsel_rul.dataset import Sample, SplitDataset, assign_devices, fit_normalize, normalize_batch
from vcsel_rul.errors import ConfigurationError, ParseError, TrainingAborted, UsageError
from vcsel_rul.model import ModelSpec, TrainConfig, build, load, predict_rul, read_checkpoint, save, to_hours, train


def _toy_samples(n_devices=5, per_device=4, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for d in range(n_devices):
        conditions = tuple(float(v) for v in rng.uniform([4, 100, 6, 85, 10, 50], [8, 170, 12, 150, 60, 200]))
        p0 = float(rng.uniform(1.0, 3.0))
        for k in range(per_device):
            t_end = 100.0 + 50.0 * k + 25.0 * d
            drop = 0.02 * (k + 1) + 0.01 * d
            window = (p0 * (1 - drop + 0.01), p0 * (1 - drop + 0.005), p0 * (1 - drop))
            samples.append(Sample(f"D{d:04d}", window, t_end, conditions, 1500.0 - 300.0 * k - 40.0 * d, p0))
    return samples


def _toy_dataset(samples=None):
    samples = samples or _toy_samples()
    return SplitDataset(samples, samples[:4], fit_normalize(samples), 0)


def test_default_hybrid_shapes():
    spec = ModelSpec()
    assert spec.conv_output_width() == 16
    assert spec.head_input_width() == 26
    model = build(spec)
    assert model.parameter_count == 19417
    assert model.get_flat().size == model.parameter_count


@pytest.mark.parametrize("variant,width", [("cnn_only", 16), ("lstm_only", 10), ("mlp", 9)])
def test_ablation_head_widths(variant, width):
    assert ModelSpec(variant=variant).head_input_width() == width
    assert build(ModelSpec(variant=variant)).hidden.n_in == width


def test_shape_inconsistent_spec_names_stage():
    with pytest.raises(ConfigurationError, match="stage 3"):
        build(ModelSpec(pool_after=(0, 1, 2)))


def test_invalid_spec_values():
    with pytest.raises(ConfigurationError):
        build(ModelSpec(variant="transformer"))
    with pytest.raises(ConfigurationError):
        build(ModelSpec(conv_kernel=4))


def test_forward_shape_and_no_tape_by_default():
    model = build(ModelSpec())
    y = model.forward(np.zeros((5, 3)), np.zeros((5, 6)))
    assert y.shape == (5,)
    with pytest.raises(UsageError):
        model.backward(np.ones(5))


def test_build_is_deterministic_per_seed():
    np.testing.assert_array_equal(build(ModelSpec(seed=3)).get_flat(), build(ModelSpec(seed=3)).get_flat())
    assert not np.array_equal(build(ModelSpec(seed=3)).get_flat(), build(ModelSpec(seed=4)).get_flat())


def test_cnn_only_ignores_power_window_and_lstm_only_ignores_conditions():
    rng = np.random.default_rng(0)
    w, c = rng.uniform(size=(4, 3)), rng.uniform(size=(4, 6))
    cnn = build(ModelSpec(variant="cnn_only"))
    np.testing.assert_array_equal(cnn.forward(w, c), cnn.forward(rng.uniform(size=(4, 3)), c))
    lstm = build(ModelSpec(variant="lstm_only"))
    np.testing.assert_array_equal(lstm.forward(w, c), lstm.forward(w, rng.uniform(size=(4, 6))))


def test_to_hours_denormalizes_and_clamps():
    assert to_hours(0.5) == 2500.0
    assert to_hours(-0.02) == 0.0


def test_predict_rul_keeps_input_order_and_checks_stats():
    samples = _toy_samples()
    model = build(ModelSpec(), fit_normalize(samples))
    batch = predict_rul(model, samples)
    assert batch.shape == (len(samples),)
    assert predict_rul(model, samples[3:4])[0] == pytest.approx(batch[3], rel=1e-12)
    assert np.all(batch >= 0)
    with pytest.raises(UsageError):
        predict_rul(model, samples, fit_normalize(samples[:4]))
    with pytest.raises(UsageError):
        predict_rul(build(ModelSpec()), samples)


def test_zero_epochs_leaves_initialization():
    model = build(ModelSpec(seed=1))
    before = model.get_flat()
    result = train(model, _toy_dataset(), TrainConfig(epochs=0))
    np.testing.assert_array_equal(model.get_flat(), before)
    assert result.history == []


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=5, batch_size=4, seed=9)
    first = train(build(ModelSpec(seed=2)), _toy_dataset(), cfg)
    second = train(build(ModelSpec(seed=2)), _toy_dataset(), cfg)
    assert [r.train_loss for r in first.history] == [r.train_loss for r in second.history]
    np.testing.assert_array_equal(first.model.get_flat(), second.model.get_flat())


def test_best_validation_loss_is_non_increasing():
    result = train(build(ModelSpec()), _toy_dataset(), TrainConfig(epochs=30, batch_size=4))
    best = [r.best_val_loss for r in result.history]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert all(r.val_loss is not None for r in result.history)


def test_early_stopping_restores_best_epoch():
    model = build(ModelSpec())
    result = train(model, _toy_dataset(), TrainConfig(epochs=200, batch_size=4, learning_rate=0.05, patience=3))
    assert result.stopped_early
    assert len(result.history) < 200
    best_row = result.history[result.best_epoch - 1]
    assert best_row.val_loss == best_row.best_val_loss == min(r.val_loss for r in result.history)
    _, val_ids = assign_devices({f"D{d:04d}": 4 for d in range(5)}, 0, 0.9)
    vw, vc, vy = normalize_batch([s for s in _toy_samples() if s.device_id in val_ids], model.stats)
    assert model.loss(vw, vc, vy) == pytest.approx(best_row.val_loss, rel=1e-12)


def test_hybrid_overfits_sixteen_samples():
    # five devices of four samples: the device-level validation carve holds one out, leaving 16 to fit
    model = build(ModelSpec(seed=0))
    result = train(
        model,
        _toy_dataset(),
        TrainConfig(epochs=2000, batch_size=4, learning_rate=2e-3, patience=2000, restore_best=False, seed=0),
    )
    assert min(np.sqrt(r.train_loss) for r in result.history) < 0.01


def test_non_finite_loss_aborts_with_last_good_parameters():
    samples = _toy_samples()
    model = build(ModelSpec())
    before = model.get_flat()
    with pytest.raises(TrainingAborted) as info:
        train(model, _toy_dataset(samples), TrainConfig(epochs=5, learning_rate=1e300, optimizer="sgd"))
    assert info.value.epoch == 1
    np.testing.assert_array_equal(model.get_flat(), before)


def test_empty_training_split():
    with pytest.raises(UsageError):
        train(build(ModelSpec()), SplitDataset([], [], fit_normalize(_toy_samples()), 0))


def test_invalid_train_config():
    with pytest.raises(ConfigurationError):
        train(build(ModelSpec()), _toy_dataset(), TrainConfig(validation_fraction=0.5))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(4)
    samples = _toy_samples(n_devices=25, per_device=4, seed=4)
    model = build(ModelSpec(seed=5), fit_normalize(samples))
    model.set_flat(model.get_flat() + 0.01 * rng.standard_normal(model.parameter_count))
    model.metadata = {"epochs_run": 3}
    path = save(model, tmp_path / "model.ckpt")
    loaded = load(path)
    assert loaded.spec == model.spec
    assert loaded.metadata == {"epochs_run": 3}
    np.testing.assert_array_equal(predict_rul(loaded, samples), predict_rul(model, samples))


@pytest.mark.parametrize("variant", ["cnn_only", "lstm_only", "mlp"])
def test_checkpoint_roundtrip_ablations(tmp_path, variant):
    samples = _toy_samples()
    model = build(ModelSpec(variant=variant), fit_normalize(samples))
    loaded = load(save(model, tmp_path / "model.ckpt"))
    assert loaded.spec.variant == variant
    np.testing.assert_array_equal(predict_rul(loaded, samples), predict_rul(model, samples))


def test_truncated_checkpoint_is_rejected(tmp_path):
    path = save(build(ModelSpec(), fit_normalize(_toy_samples())), tmp_path / "model.ckpt")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        load(path)


def test_unknown_checkpoint_version_is_refused(tmp_path):
    path = save(build(ModelSpec(), fit_normalize(_toy_samples())), tmp_path / "model.ckpt")
    path.write_text(path.read_text().replace("format_version: 1", "format_version: 99", 1))
    with pytest.raises(ParseError, match="format_version"):
        read_checkpoint(path)


def test_checkpoint_spec_mismatch_is_rejected(tmp_path):
    path = save(build(ModelSpec(), fit_normalize(_toy_samples())), tmp_path / "model.ckpt")
    text = path.read_text().replace('"head_width": 64', '"head_width": 32', 1)
    path.write_text(text)
    with pytest.raises(ParseError, match="parameter_count"):
        load(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_text("hello\n")
    with pytest.raises(ParseError, match="line 1"):
        load(path)


def test_spec_dict_roundtrip():
    spec = replace(ModelSpec(), conv_filters=(4, 4, 2), lstm_cells=(5,))
    assert ModelSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize(
    "spec_line",
    [
        "spec: [1, 2]",
        'spec: {"variant": "hybrid", "conv_filters": ["a", "b"]}',
        'spec: {"variant": "hybrid", "conv_filters": 32}',
        'spec: {"variant": "hybrid", "head_width": "wide"}',
        'spec: {"variant": "transformer"}',
        "spec: {not json",
    ],
)
def test_corrupt_checkpoint_spec_is_parse_error(tmp_path, spec_line):
    path = save(build(ModelSpec(), fit_normalize(_toy_samples())), tmp_path / "model.ckpt")
    lines = path.read_text().split("\n")
    assert lines[2].startswith("spec: ")
    lines[2] = spec_line
    path.write_text("\n".join(lines))
    with pytest.raises(ParseError, match="field 'spec'"):
        load(path)


def test_checkpoint_metadata_must_be_object(tmp_path):
    path = save(build(ModelSpec(), fit_normalize(_toy_samples())), tmp_path / "model.ckpt")
    path.write_text(path.read_text().replace("metadata: {}", "metadata: [3]", 1))
    with pytest.raises(ParseError, match="field 'metadata'"):
        read_checkpoint(path)


def test_batch_loss_ignores_sample_order():
    samples = _toy_samples()
    windows, conditions, targets = normalize_batch(samples, fit_normalize(samples))
    model = build(ModelSpec())
    perm = np.random.default_rng(9).permutation(len(samples))
    assert model.loss(windows[perm], conditions[perm], targets[perm]) == pytest.approx(
        model.loss(windows, conditions, targets), rel=1e-12
    )
    np.testing.assert_allclose(
        model.predict_normalized(windows[perm], conditions[perm]),
        model.predict_normalized(windows, conditions)[perm],
        rtol=1e-12,
        atol=1e-15,
    )
