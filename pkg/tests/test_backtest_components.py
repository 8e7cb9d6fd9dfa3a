# tests/test_backtest_components.py
import numpy as np
import pytest
from unittest.mock import MagicMock

from src.backtest.components import GridSearchedMethod, LearnedMethod, MeasurementsMethod, baseline_methods
from src.core.kalman import estimate_with
from src.core.lstm import StandaloneLstm, preset_small
from src.core.models import EpochLog, TrajectoryDataset


@pytest.fixture
def grids():
    return {"q": [0.001, 0.01, 0.1], "r": [0.05, 0.1, 0.5], "window": [1, 2, 4]}


def test_measurements_method_returns_copy(tiny_dataset):
    """[Measurements] 입력을 그대로 돌려주되 원본 배열과 공유하지 않음"""
    z = tiny_dataset.sequences[0].measurements
    method = MeasurementsMethod()
    method.fit(tiny_dataset.sequences)
    out = method.run(z)
    assert np.array_equal(out, z)
    out[0, 0] += 1.0
    assert out[0, 0] != z[0, 0]


def test_grid_method_requires_fit(tiny_dataset):
    method = GridSearchedMethod("kalman_vel", [0.01], [0.1])
    with pytest.raises(RuntimeError, match="fit"):
        method.run(tiny_dataset.sequences[0].measurements)


def test_grid_method_uses_train_optimum(tiny_dataset, grids):
    """[GridSearch] fit 으로 고른 점 그대로 estimate_with 를 부르는지"""
    logger = MagicMock()
    method = GridSearchedMethod("kalman_acc", grids["q"], grids["r"], logger=logger)
    method.fit(tiny_dataset.sequences)

    best = method.result.best
    assert set(best) == {"q", "r"}
    assert best["q"] in grids["q"] and best["r"] in grids["r"]

    z = tiny_dataset.sequences[2].measurements
    assert np.array_equal(method.run(z), estimate_with("kalman_acc", z, **best))
    assert logger.info.call_args.args[0].startswith("[Eval] kalman_acc grid optimum")


def test_ema_method_picks_window(tiny_dataset, grids):
    method = GridSearchedMethod("ema", window_grid=grids["window"])
    method.fit(tiny_dataset.sequences)
    assert method.result.best["window"] in grids["window"]
    assert len(method.result.table) == 3


def test_learned_method_without_trainer_keeps_weights(tiny_dataset):
    model = StandaloneLstm(preset_small(2, seed=1, hidden=3))
    before = {k: v.copy() for k, v in model.parameters().items()}
    method = LearnedMethod(model)
    method.fit(tiny_dataset.sequences)

    assert method.name == "std_lstm"
    assert method.history == []
    for name, value in model.parameters().items():
        assert np.array_equal(value, before[name])
    z = tiny_dataset.sequences[0].measurements
    assert np.array_equal(method.run(z), model.run(z))


def test_learned_method_trains_on_fit(tiny_dataset, create_lstm_kf):
    """[Learned] trainer 가 있으면 학습 split 전체로 train 호출"""
    trainer = MagicMock()
    trainer.train.return_value = [EpochLog(1, 0.5, 0.3, 1e-3)]
    model = create_lstm_kf()
    method = LearnedMethod(model, trainer)

    method.fit(tiny_dataset.sequences)

    trainer.train.assert_called_once()
    called_model, called_data = trainer.train.call_args.args
    assert called_model is model
    assert isinstance(called_data, TrajectoryDataset)
    assert len(called_data) == len(tiny_dataset)
    assert method.history[0].loss == 0.5


def test_baseline_methods_keys(grids):
    methods = baseline_methods(grids, dt=0.5)
    assert list(methods) == ["measurements", "kalman_vel", "kalman_acc", "ema"]
    assert all(m.name == key for key, m in methods.items())
    assert methods["kalman_vel"].dt == 0.5
    assert methods["ema"].window_grid == [1, 2, 4]
