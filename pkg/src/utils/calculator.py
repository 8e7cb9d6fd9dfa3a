# src/utils/calculator.py
from typing import List, Sequence

import numpy as np
import pandas as pd

from src.core.models import MetricsRow


class ErrorCalculator:
    def euclidean_errors(self, truths: Sequence[np.ndarray], estimates: Sequence[np.ndarray]) -> np.ndarray:
        """
        시퀀스 묶음의 step 별 유클리드 거리를 한 줄로 이어붙여 반환
        truths / estimates: 각각 T x d 배열의 리스트 (순서 동일)
        """
        if len(truths) != len(estimates):
            raise ValueError(f"Sequence count mismatch: {len(truths)} truths vs {len(estimates)} estimates")
        errors = []
        for y, y_hat in zip(truths, estimates):
            y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
            if y.shape != y_hat.shape:
                raise ValueError(f"Shape mismatch: truth {y.shape} vs estimate {y_hat.shape}")
            errors.append(np.linalg.norm(y - y_hat, axis=1))
        return np.concatenate(errors) if errors else np.zeros(0)

    def mean_error(self, truths, estimates) -> float:
        errors = self.euclidean_errors(truths, estimates)
        if errors.size == 0:
            raise ValueError("No steps to evaluate.")
        return float(np.mean(errors))

    def summarize(self, method: str, truths, estimates) -> MetricsRow:
        errors = self.euclidean_errors(truths, estimates)
        if errors.size == 0:
            raise ValueError("No steps to evaluate.")
        stacked_y = np.concatenate([np.asarray(y) for y in truths])
        stacked_hat = np.concatenate([np.asarray(e) for e in estimates])
        rmse = np.sqrt(np.mean((stacked_y - stacked_hat) ** 2, axis=0))
        return MetricsRow(
            method=method,
            mean_error=float(np.mean(errors)),
            median_error=float(np.median(errors)),
            rmse=[float(v) for v in rmse],
        )

    def to_frame(self, rows: List[MetricsRow]) -> pd.DataFrame:
        """
        방법별 한 행. 측정값 행이 있으면 그 대비 개선율(%) 을 채움
        """
        base = next((r.mean_error for r in rows if r.method == "measurements"), None)
        records = []
        for r in rows:
            record = {"method": r.method, "mean_error": r.mean_error, "median_error": r.median_error}
            for k, v in enumerate(r.rmse, start=1):
                record[f"rmse_{k}"] = v
            if base is not None and base > 0:
                record["improvement_pct"] = 100.0 * (base - r.mean_error) / base
            else:
                record["improvement_pct"] = r.improvement_pct
            records.append(record)
        return pd.DataFrame(records)
