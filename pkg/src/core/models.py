from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from src.core.errors import ShapeError


class Method(Enum):
    MEASUREMENTS = "measurements"
    KALMAN_VEL = "kalman_vel"
    KALMAN_ACC = "kalman_acc"
    EMA = "ema"
    STD_LSTM = "std_lstm"
    LSTM_KF = "lstm_kf"


# 비교표 행 순서 (측정값 -> 고정모델 -> 학습모델)
METHOD_ORDER = [m.value for m in Method]


@dataclass
class GaussianBelief:
    """필터 상태: 평균 (n x 1) + 공분산 (n x n)"""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1, 1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ShapeError(f"GaussianBelief: mean {self.mean.shape} vs cov {self.cov.shape}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class LinearKfModel:
    """고정 Kalman 구성요소 (baseline 용)"""
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.A, self.H, self.Q, self.R = (np.asarray(m, dtype=np.float64) for m in (self.A, self.H, self.Q, self.R))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ShapeError(f"LinearKfModel: A must be square, got {self.A.shape}")
        if self.H.ndim != 2 or self.H.shape[1] != n:
            raise ShapeError(f"LinearKfModel: H {self.H.shape} vs state dim {n}")
        if self.Q.shape != (n, n):
            raise ShapeError(f"LinearKfModel: Q {self.Q.shape} vs A {self.A.shape}")
        m = self.H.shape[0]
        if self.R.shape != (m, m):
            raise ShapeError(f"LinearKfModel: R {self.R.shape} vs H {self.H.shape}")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]


@dataclass
class LstmLayerState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class LstmState:
    """LSTM 층별 (h, c)"""
    layers: List[LstmLayerState]


@dataclass
class LstmKfRuntimeState:
    belief: GaussianBelief
    f_state: LstmState
    q_state: LstmState
    r_state: LstmState
    time_index: int = 0


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    decay: float = 1.0
    decay_start: int = 2          # 이 epoch 부터 decay 적용 (1-indexed)
    truncation: int = 10
    batch_size: int = 2
    epochs: int = 120
    lam: float = 0.8
    clip_norm: Optional[float] = 5.0   # None 이면 clipping 안 함
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"TrainConfig: lam must be >= 0, got {self.lam}")
        if self.truncation < 1:
            raise ValueError(f"TrainConfig: truncation must be >= 1, got {self.truncation}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("TrainConfig: batch_size and epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError(f"TrainConfig: learning_rate must be >= 0, got {self.learning_rate}")

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> "TrainConfig":
        presets = {
            # 작은 데이터셋: batch 2, lr 5e-4, 10 step BPTT
            "small": dict(learning_rate=5e-4, decay=1.0, truncation=10, batch_size=2, epochs=120),
            # 큰 데이터셋: lr 1e-5, 2 epoch 부터 0.95 decay, 100 step BPTT
            "big": dict(learning_rate=1e-5, decay=0.95, decay_start=2, truncation=100, batch_size=2, epochs=10),
        }
        if preset not in presets:
            raise ValueError(f"unknown preset: {preset}")
        values = {**presets[preset], **{k: v for k, v in overrides.items() if v is not None}}
        return cls(**values)

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay ** max(0, epoch - self.decay_start + 1)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    loss: float
    mean_gain: float
    learning_rate: float


@dataclass
class TrajectorySequence:
    truth: np.ndarray          # T x d
    measurements: np.ndarray   # T x d

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=np.float64)
        self.measurements = np.asarray(self.measurements, dtype=np.float64)
        if self.truth.ndim != 2 or self.truth.shape != self.measurements.shape:
            raise ShapeError(f"TrajectorySequence: truth {self.truth.shape} vs measurements {self.measurements.shape}")

    @property
    def length(self) -> int:
        return self.truth.shape[0]

    @property
    def dim(self) -> int:
        return self.truth.shape[1]


@dataclass
class TrajectoryDataset:
    sequences: List[TrajectorySequence]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.sequences[0].dim if self.sequences else 0

    @property
    def length(self) -> int:
        return max((s.length for s in self.sequences), default=0)

    def __len__(self) -> int:
        return len(self.sequences)

    def subset(self, indices: List[int]) -> "TrajectoryDataset":
        meta = {**self.metadata, "subset": [int(i) for i in indices]}
        return TrajectoryDataset([self.sequences[i] for i in indices], meta)


@dataclass
class BurstSpec:
    """측정 노이즈 폭증 구간 (1-indexed, 양끝 포함)"""
    starts: List[int]
    ends: List[int]
    scale: float = 10.0

    def intervals(self) -> List[tuple]:
        return list(zip(self.starts, self.ends))

    def validate(self, length: int):
        if len(self.starts) != len(self.ends):
            raise ValueError("BurstSpec: starts and ends differ in length")
        if self.scale <= 0:
            raise ValueError(f"BurstSpec: scale must be positive, got {self.scale}")
        prev_end = 0
        for start, end in sorted(self.intervals()):
            if not (1 <= start <= end <= length):
                raise ValueError(f"BurstSpec: interval [{start}, {end}] outside [1, {length}]")
            if start <= prev_end:
                raise ValueError(f"BurstSpec: interval [{start}, {end}] overlaps previous one")
            prev_end = end

    def mask(self, length: int) -> np.ndarray:
        """0-indexed step 별 burst 여부"""
        inside = np.zeros(length, dtype=bool)
        for start, end in self.intervals():
            inside[start - 1:end] = True
        return inside


@dataclass
class MetricsRow:
    method: str
    mean_error: float
    median_error: float
    rmse: List[float]
    improvement_pct: float = 0.0
