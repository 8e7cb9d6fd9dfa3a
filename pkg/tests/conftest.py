# tests/conftest.py
import numpy as np
import pytest

from src.core.lstm import build_module
from src.core.lstm_kf import LstmKf, LstmKfParams
from src.core.models import TrainConfig, TrajectoryDataset, TrajectorySequence
from src.infra.data import gen_linear_cv, gen_oscillator
from src.utils.logger import BenchLogger


@pytest.fixture
def create_dataset():
    """원하는 generator / 크기로 작은 데이터셋을 만드는 팩토리 함수"""
    def _create(generator="linear_cv", d=2, T=12, n_seq=4, seed=0, q=0.01, r=0.1):
        if generator == "linear_cv":
            return gen_linear_cv(d, T, n_seq, q=q, r=r, dt=1.0, seed=seed)
        return gen_oscillator(d, T, n_seq, amplitude=1.0, frequency=0.2, r=r, seed=seed, dt=0.1)
    return _create


@pytest.fixture
def tiny_dataset(create_dataset):
    """d=2, T=12, 4 시퀀스"""
    return create_dataset()


@pytest.fixture
def create_lstm_kf():
    """hidden 이 작은 LSTM-KF (빠른 테스트용)"""
    def _create(dim=2, hidden=3, seed=0, lam=0.8):
        return LstmKf.from_preset("small", dim, seed=seed, hidden=hidden, lam=lam)
    return _create


@pytest.fixture
def zero_f_params():
    """
    f 모듈 출력이 항상 0 이 되도록 FC 가중치를 0 으로 둔 파라미터.
    q 모듈도 출력 0 -> Q = I. zero_r 면 R = I, 아니면 r 모듈 가중치를 흔들어 step 마다 다른 R
    """
    def _create(dim=2, hidden=3, zero_r=True, seed=0):
        modules = [build_module(dim, [hidden], [(dim, False)], seed=seed + k) for k in range(3)]
        for key, module in zip("fqr", modules):
            layer = module.linear_layers[-1]
            if key == "r" and not zero_r:
                rng = np.random.default_rng(seed)
                values = {name: v + 0.5 * rng.standard_normal(v.shape) for name, v in module.parameters().items()}
                module.load_parameters(values)
            else:
                layer.weight = np.zeros_like(layer.weight)
        return LstmKfParams(*modules)
    return _create


@pytest.fixture
def fast_train_config():
    """몇 epoch 만 도는 학습 설정"""
    def _create(**overrides):
        values = dict(learning_rate=5e-3, truncation=4, batch_size=2, epochs=2, lam=0.8, clip_norm=5.0, seed=0)
        values.update(overrides)
        return TrainConfig(**values)
    return _create


@pytest.fixture
def constant_sequence():
    def _create(T=5, d=2, value=1.0, noise=0.0):
        truth = np.full((T, d), value)
        return TrajectorySequence(truth, truth + noise)
    return _create


@pytest.fixture
def single_dataset(constant_sequence):
    return TrajectoryDataset([constant_sequence()], {"generator": "manual"})


@pytest.fixture
def logger(tmp_path):
    return BenchLogger(log_dir=str(tmp_path / "logs"))
