# src/backtest/runner.py
from dataclasses import replace
from typing import Callable, Dict, List, Tuple

import numpy as np

from src.core.interfaces import IFilterMethod
from src.core.models import METHOD_ORDER, MetricsRow, TrajectoryDataset
from src.utils.calculator import ErrorCalculator

# fold 번호 -> 새로 만든 방법들 (학습 모델은 fold 마다 새로 초기화해야 함)
MethodFactory = Callable[[int], Dict[str, IFilterMethod]]


class EvalRunner:
    def __init__(self, logger=None):
        self.logger = logger
        self.calculator = ErrorCalculator()

    def _log(self, msg: str):
        if self.logger:
            self.logger.info(msg)

    def evaluate(self, methods: Dict[str, IFilterMethod], train: TrajectoryDataset,
                 test: TrajectoryDataset) -> List[MetricsRow]:
        """방법마다 fit(train) -> run(test). 행 순서는 METHOD_ORDER"""
        if len(test) == 0:
            raise ValueError("EvalRunner: empty test split")
        unknown = sorted(set(methods) - set(METHOD_ORDER))
        if unknown:
            raise ValueError(f"EvalRunner: unknown methods {unknown}")

        truths = [seq.truth for seq in test.sequences]
        rows = []
        for name in [m for m in METHOD_ORDER if m in methods]:
            method = methods[name]
            method.fit(train.sequences)
            estimates = [method.run(seq.measurements) for seq in test.sequences]
            row = self.calculator.summarize(name, truths, estimates)
            self._log(f"[Eval] {name}: mean={row.mean_error:.4f} median={row.median_error:.4f}")
            rows.append(row)
        return _with_improvement(rows)

    def cross_validate(self, dataset: TrajectoryDataset, factory: MethodFactory,
                       folds: int = 2) -> Tuple[List[List[MetricsRow]], List[MetricsRow]]:
        """
        시퀀스를 순서대로 folds 등분, fold k 를 test 로 두고 나머지로 학습.
        반환: (fold 별 표, 방법별 fold 평균 표)
        """
        n = len(dataset)
        if folds < 2 or n < folds or n % folds:
            raise ValueError(f"cross_validate: {n} sequences cannot be split into {folds} equal folds")
        size = n // folds
        per_fold = []
        for k in range(folds):
            test_idx = list(range(k * size, (k + 1) * size))
            train_idx = [i for i in range(n) if i not in test_idx]
            self._log(f"[Eval] fold {k + 1}/{folds}: train {train_idx} test {test_idx}")
            per_fold.append(self.evaluate(factory(k), dataset.subset(train_idx), dataset.subset(test_idx)))
        return per_fold, _average(per_fold)


def _with_improvement(rows: List[MetricsRow]) -> List[MetricsRow]:
    base = next((r.mean_error for r in rows if r.method == "measurements"), None)
    if base is None or base <= 0:
        return rows
    return [replace(r, improvement_pct=100.0 * (base - r.mean_error) / base) for r in rows]


def _average(per_fold: List[List[MetricsRow]]) -> List[MetricsRow]:
    averaged = []
    for rows in zip(*per_fold):
        averaged.append(MetricsRow(
            method=rows[0].method,
            mean_error=float(np.mean([r.mean_error for r in rows])),
            median_error=float(np.mean([r.median_error for r in rows])),
            rmse=[float(v) for v in np.mean([r.rmse for r in rows], axis=0)],
        ))
    return _with_improvement(averaged)
