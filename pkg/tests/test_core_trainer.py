import math
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from src.core.errors import NonFiniteError, TrainingAbortedError
from src.core.lstm import StandaloneLstm, preset_small
from src.core.models import TrainConfig, TrajectoryDataset
from src.core.trainer import Trainer
from src.utils.calculator import ErrorCalculator


def _snapshot(model):
    return {k: v.copy() for k, v in model.parameters().items()}


def test_zero_learning_rate_keeps_parameters(create_lstm_kf, tiny_dataset, fast_train_config):
    model = create_lstm_kf()
    before = _snapshot(model)
    Trainer(fast_train_config(learning_rate=0.0, epochs=1)).train(model, tiny_dataset)
    for name, value in model.parameters().items():
        assert np.array_equal(value, before[name])


def test_training_changes_parameters(create_lstm_kf, tiny_dataset, fast_train_config):
    model = create_lstm_kf()
    before = _snapshot(model)
    Trainer(fast_train_config(epochs=1)).train(model, tiny_dataset)
    assert any(not np.array_equal(v, before[k]) for k, v in model.parameters().items())


def test_history_shape_and_schedule(create_lstm_kf, tiny_dataset, fast_train_config):
    cfg = fast_train_config(epochs=3, decay=0.5, decay_start=2, learning_rate=1e-3)
    history = Trainer(cfg).train(create_lstm_kf(), tiny_dataset)
    assert [h.epoch for h in history] == [1, 2, 3]
    assert [h.learning_rate for h in history] == pytest.approx([1e-3, 5e-4, 2.5e-4])
    for h in history:
        assert math.isfinite(h.loss) and h.loss > 0
        assert 0.0 < h.mean_gain < 1.0


def test_learning_rate_schedule_presets():
    big = TrainConfig.for_preset("big")
    assert big.learning_rate_at(1) == 1e-5
    assert big.learning_rate_at(2) == pytest.approx(1e-5 * 0.95)
    assert big.learning_rate_at(4) == pytest.approx(1e-5 * 0.95 ** 3)
    small = TrainConfig.for_preset("small")
    assert (small.learning_rate, small.batch_size, small.truncation, small.lam) == (5e-4, 2, 10, 0.8)
    assert (big.truncation, big.decay) == (100, 0.95)
    with pytest.raises(ValueError):
        TrainConfig.for_preset("medium")
    with pytest.raises(ValueError):
        TrainConfig(truncation=0)


def test_training_is_deterministic(create_lstm_kf, tiny_dataset, fast_train_config):
    cfg = fast_train_config(epochs=2)
    a, b = create_lstm_kf(seed=1), create_lstm_kf(seed=1)
    log_a = Trainer(cfg).train(a, tiny_dataset)
    log_b = Trainer(cfg).train(b, tiny_dataset)
    assert log_a == log_b
    for name, value in a.parameters().items():
        assert np.array_equal(value, b.parameters()[name])


def test_uneven_batches_and_lengths(create_lstm_kf, create_dataset, fast_train_config):
    """시퀀스 수가 batch 로 나눠떨어지지 않고 길이가 truncation 배수가 아니어도 동작"""
    data = create_dataset(n_seq=3, T=7)
    history = Trainer(fast_train_config(epochs=1, batch_size=2, truncation=3)).train(create_lstm_kf(), data)
    assert len(history) == 1


def test_std_lstm_has_no_gain(tiny_dataset, fast_train_config):
    model = StandaloneLstm(preset_small(2, seed=0, hidden=3))
    history = Trainer(fast_train_config(epochs=1)).train(model, tiny_dataset)
    assert math.isnan(history[0].mean_gain)
    assert history[0].loss > 0


def test_non_finite_aborts_with_epoch_and_batch(create_lstm_kf, tiny_dataset, fast_train_config):
    model = create_lstm_kf()
    with patch.object(model, "segment_loss", side_effect=NonFiniteError("exp overflow", index=0)):
        with pytest.raises(TrainingAbortedError) as exc:
            Trainer(fast_train_config()).train(model, tiny_dataset)
    assert exc.value.epoch == 1
    assert exc.value.batch == 1


def test_empty_dataset_rejected(create_lstm_kf, fast_train_config):
    with pytest.raises(ValueError):
        Trainer(fast_train_config()).train(create_lstm_kf(), TrajectoryDataset([]))
    with pytest.raises(ValueError):
        Trainer(fast_train_config()).evaluate(create_lstm_kf(), TrajectoryDataset([]))


def test_epoch_progress_is_logged(create_lstm_kf, tiny_dataset, fast_train_config):
    logger = MagicMock()
    Trainer(fast_train_config(epochs=2), logger).train(create_lstm_kf(), tiny_dataset)
    messages = [call.args[0] for call in logger.info.call_args_list]
    assert any(m.startswith("[Train] epoch 1:") for m in messages)
    assert any(m.startswith("[Train] epoch 2:") for m in messages)
    logger.debug.assert_called()


def test_evaluate_summary(create_lstm_kf, tiny_dataset, fast_train_config):
    model = create_lstm_kf()
    summary = Trainer(fast_train_config()).evaluate(model, tiny_dataset)
    expected = ErrorCalculator().mean_error([s.truth for s in tiny_dataset.sequences],
                                            [model.run(s.measurements) for s in tiny_dataset.sequences])
    assert summary.mean_error == pytest.approx(expected)
    assert summary.steps == 4 * 12
    assert 0.0 < summary.mean_gain < 1.0
