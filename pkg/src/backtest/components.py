# src/backtest/components.py
"""
평가 대상 방법들을 IFilterMethod 하나로 감싼 어댑터.
fit 은 학습 split 을 받아 필요한 것(grid search / 학습)을 하고, run 은 측정 시퀀스 -> 추정 시퀀스.
"""
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.core.interfaces import IFilterMethod, ISequenceModel
from src.core.kalman import GridSearchResult, estimate_with, grid_search
from src.core.models import TrajectoryDataset, TrajectorySequence


class MeasurementsMethod(IFilterMethod):
    """측정값을 그대로 추정값으로 사용 (하한선 비교용)"""
    name = "measurements"

    def fit(self, train: List[TrajectorySequence]) -> None:
        pass

    def run(self, measurements: np.ndarray) -> np.ndarray:
        return np.asarray(measurements, dtype=np.float64).copy()


class GridSearchedMethod(IFilterMethod):
    """kalman_vel / kalman_acc / ema. fit 에서 학습 split 으로 격자 탐색"""

    def __init__(self, family: str, q_grid: Sequence[float] = (), r_grid: Sequence[float] = (),
                 window_grid: Sequence[int] = (), dt: float = 1.0, logger=None):
        self.name = family
        self.q_grid = list(q_grid)
        self.r_grid = list(r_grid)
        self.window_grid = list(window_grid)
        self.dt = dt
        self.logger = logger
        self.result: Optional[GridSearchResult] = None

    def fit(self, train: List[TrajectorySequence]) -> None:
        self.result = grid_search(train, self.name, self.q_grid, self.r_grid, self.window_grid, dt=self.dt)
        if self.logger:
            self.logger.info(f"[Eval] {self.name} grid optimum {self.result.best} "
                             f"(train error {self.result.best_error:.4f})")

    def run(self, measurements: np.ndarray) -> np.ndarray:
        if self.result is None:
            raise RuntimeError(f"{self.name}: fit() must run before run()")
        return estimate_with(self.name, np.asarray(measurements, dtype=np.float64), dt=self.dt, **self.result.best)


class LearnedMethod(IFilterMethod):
    """
    학습 모델 (lstm_kf / std_lstm).
    trainer 가 있으면 fit 에서 학습하고, 없으면 이미 학습된 가중치를 그대로 쓴다.
    """

    def __init__(self, model: ISequenceModel, trainer=None):
        self.model = model
        self.name = model.name
        self.trainer = trainer
        self.history = []

    def fit(self, train: List[TrajectorySequence]) -> None:
        if self.trainer is not None:
            self.history = self.trainer.train(self.model, TrajectoryDataset(list(train)))

    def run(self, measurements: np.ndarray) -> np.ndarray:
        return self.model.run(np.asarray(measurements, dtype=np.float64))


def baseline_methods(grids: Dict[str, Sequence], dt: float = 1.0, logger=None) -> Dict[str, IFilterMethod]:
    """
    grids: {"q": [...], "r": [...], "window": [...]}
    """
    return {
        "measurements": MeasurementsMethod(),
        "kalman_vel": GridSearchedMethod("kalman_vel", grids["q"], grids["r"], dt=dt, logger=logger),
        "kalman_acc": GridSearchedMethod("kalman_acc", grids["q"], grids["r"], dt=dt, logger=logger),
        "ema": GridSearchedMethod("ema", window_grid=grids["window"], dt=dt, logger=logger),
    }