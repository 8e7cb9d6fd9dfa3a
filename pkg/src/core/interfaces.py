from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.core.autodiff import Tape, Var
from src.core.models import TrajectoryDataset, TrajectorySequence


@dataclass
class SegmentResult:
    """truncated BPTT 한 구간의 결과"""
    loss: Var
    carry: Any                       # 다음 구간으로 넘길 값 (gradient 끊긴 numpy)
    gains: List[float] = field(default_factory=list)  # step 별 diag(K) 평균 (LSTM-KF 만)


class ISequenceModel(ABC):
    """Trainer 가 학습시키는 순차 모델 (LSTM-KF, Std. LSTM)"""
    name: str = ""

    @abstractmethod
    def parameters(self) -> Dict[str, np.ndarray]: ...
    @abstractmethod
    def load_parameters(self, values: Dict[str, np.ndarray]) -> None: ...
    @abstractmethod
    def initial_carry(self, first_measurement: np.ndarray) -> Any: ...
    @abstractmethod
    def segment_loss(self, tape: Tape, bound: Dict[str, Var], truth: np.ndarray, measurements: np.ndarray,
                     carry: Any, training: bool, rng: Optional[np.random.Generator]) -> SegmentResult: ...
    @abstractmethod
    def run(self, measurements: np.ndarray) -> np.ndarray: ...


class IFilterMethod(ABC):
    """평가 대상 방법 (baseline + 학습 모델 어댑터)"""
    name: str = ""

    @abstractmethod
    def fit(self, train: List[TrajectorySequence]) -> None: ...
    @abstractmethod
    def run(self, measurements: np.ndarray) -> np.ndarray: ...


class IDataProvider(ABC):
    @abstractmethod
    def fetch_split(self) -> Tuple[TrajectoryDataset, TrajectoryDataset]: ...
