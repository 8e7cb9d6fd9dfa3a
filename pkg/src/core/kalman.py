# src/core/kalman.py
"""
고전 Kalman filter 와 baseline 들 (Kalman Vel / Kalman Acc / EMA) + grid search.

CV/CA 모델의 Q 는 최고차 미분 블록에만 q_scale * I 를 둔다
(white-noise acceleration / jerk). 위치/속도 블록은 0.
"""
import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.core.autodiff import as_matrix, spd_solve
from src.core.errors import ShapeError, StepError
from src.core.models import GaussianBelief, LinearKfModel, TrajectorySequence
from src.utils.calculator import ErrorCalculator


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def kf_predict(belief: GaussianBelief, model: LinearKfModel) -> GaussianBelief:
    if belief.dim != model.state_dim:
        raise ShapeError(f"kf_predict: belief dim {belief.dim} vs A {model.A.shape}")
    A = model.A
    return GaussianBelief(A @ belief.mean, _sym(A @ belief.cov @ A.T + model.Q))


def kf_update(belief: GaussianBelief, z, model: LinearKfModel) -> GaussianBelief:
    z = as_matrix(z)
    if z.shape != (model.meas_dim, 1):
        raise ShapeError(f"kf_update: measurement {z.shape} vs H {model.H.shape}")
    if belief.dim != model.state_dim:
        raise ShapeError(f"kf_update: belief dim {belief.dim} vs H {model.H.shape}")
    H, P = model.H, belief.cov
    S = H @ P @ H.T + model.R
    # K = P H^T S^-1 = (S^-1 H P)^T  (P, S 대칭)
    K = spd_solve(S, H @ P).T
    mean = belief.mean + K @ (z - H @ belief.mean)
    cov = (np.eye(belief.dim) - K @ H) @ P
    return GaussianBelief(mean, _sym(cov))


def kf_filter(measurements, model: LinearKfModel, init: GaussianBelief) -> List[GaussianBelief]:
    z = np.asarray(measurements, dtype=np.float64)
    if z.size == 0:
        return []
    if z.ndim != 2:
        raise ShapeError(f"kf_filter: measurements must be T x m, got {z.shape}")
    beliefs, belief = [], init
    for t in range(z.shape[0]):
        try:
            belief = kf_update(kf_predict(belief, model), z[t], model)
        except Exception as e:
            raise StepError(t, e) from e
        beliefs.append(belief)
    return beliefs


# ==========================================
# 운동 모델 빌더
# ==========================================

def _kinematic_model(pose_dim: int, order: int, dt: float, q_scale: float, r_scale: float) -> LinearKfModel:
    if pose_dim < 1 or dt <= 0 or q_scale < 0 or r_scale < 0:
        raise ValueError(f"invalid kinematic model parameters: pose_dim={pose_dim}, dt={dt}, q={q_scale}, r={r_scale}")
    eye = np.eye(pose_dim)
    n = order * pose_dim
    A = np.zeros((n, n))
    # 블록 (i, j) = dt^(j-i) / (j-i)!  (j >= i)
    for i in range(order):
        for j in range(i, order):
            k = j - i
            A[i * pose_dim:(i + 1) * pose_dim, j * pose_dim:(j + 1) * pose_dim] = eye * dt ** k / math.factorial(k)
    H = np.zeros((pose_dim, n))
    H[:, :pose_dim] = eye
    Q = np.zeros((n, n))
    Q[-pose_dim:, -pose_dim:] = q_scale * eye
    return LinearKfModel(A=A, H=H, Q=Q, R=r_scale * eye)


def build_cv_model(pose_dim: int, dt: float, q_scale: float, r_scale: float) -> LinearKfModel:
    """state = [pose; velocity]"""
    return _kinematic_model(pose_dim, 2, dt, q_scale, r_scale)


def build_ca_model(pose_dim: int, dt: float, q_scale: float, r_scale: float) -> LinearKfModel:
    """state = [pose; velocity; acceleration]"""
    return _kinematic_model(pose_dim, 3, dt, q_scale, r_scale)


def initial_belief(first_measurement, model: LinearKfModel) -> GaussianBelief:
    """첫 측정값을 pose 블록에 넣고 미분 항은 0, 공분산은 I"""
    z = as_matrix(first_measurement)
    mean = np.zeros((model.state_dim, 1))
    mean[:model.meas_dim] = z
    return GaussianBelief(mean, np.eye(model.state_dim))


def run_kalman(measurements: np.ndarray, model: LinearKfModel) -> np.ndarray:
    """측정 시퀀스 -> pose 추정 (T x m)"""
    z = np.asarray(measurements, dtype=np.float64)
    if len(z) == 0:
        return np.zeros_like(z)
    beliefs = kf_filter(z, model, initial_belief(z[0], model))
    return np.stack([(model.H @ b.mean).ravel() for b in beliefs])


# ==========================================
# EMA
# ==========================================

def ema_filter(measurements, window: int) -> np.ndarray:
    """alpha = 2 / (window + 1), out_1 = z_1, out_t = alpha z_t + (1 - alpha) out_{t-1}"""
    if window < 1:
        raise ValueError(f"ema_filter: window must be >= 1, got {window}")
    z = np.asarray(measurements, dtype=np.float64)
    out = np.empty_like(z)
    if len(z) == 0:
        return out
    alpha = 2.0 / (window + 1.0)
    out[0] = z[0]
    for t in range(1, len(z)):
        out[t] = alpha * z[t] + (1.0 - alpha) * out[t - 1]
    return out


# ==========================================
# Grid search
# ==========================================

@dataclass
class GridSearchResult:
    best: Dict[str, float]
    best_error: float
    table: pd.DataFrame


MODEL_FAMILIES = ("kalman_vel", "kalman_acc", "ema")


def estimate_with(family: str, measurements: np.ndarray, dt: float = 1.0, q: Optional[float] = None,
                  r: Optional[float] = None, window: Optional[int] = None) -> np.ndarray:
    if family == "ema":
        return ema_filter(measurements, int(window))
    builder = {"kalman_vel": build_cv_model, "kalman_acc": build_ca_model}.get(family)
    if builder is None:
        raise ValueError(f"unknown model family: {family}")
    return run_kalman(measurements, builder(measurements.shape[1], dt, q, r))


def grid_search(train_pairs: Sequence[TrajectorySequence], model_family: str, q_grid: Sequence[float] = (),
                r_grid: Sequence[float] = (), window_grid: Sequence[int] = (), dt: float = 1.0) -> GridSearchResult:
    """
    격자 전체를 평가해 평균 유클리드 오차가 가장 작은 점을 고른다.
    동률이면 q, r, window 가 작은 쪽 (사전식).
    """
    if not train_pairs:
        raise ValueError("grid_search: empty training data")
    if model_family == "ema":
        if not window_grid:
            raise ValueError("grid_search: empty window grid")
        points = [{"window": int(w)} for w in sorted(window_grid)]
    elif model_family in MODEL_FAMILIES:
        if not q_grid or not r_grid:
            raise ValueError("grid_search: empty q/r grid")
        points = [{"q": float(q), "r": float(r)} for q, r in itertools.product(sorted(q_grid), sorted(r_grid))]
    else:
        raise ValueError(f"unknown model family: {model_family}")

    calculator = ErrorCalculator()
    rows = []
    for point in points:
        estimates = [estimate_with(model_family, seq.measurements, dt=dt, **point) for seq in train_pairs]
        error = calculator.mean_error([seq.truth for seq in train_pairs], estimates)
        rows.append({**point, "mean_error": error})

    table = pd.DataFrame(rows)
    keys = [k for k in ("q", "r", "window") if k in table.columns]
    # 정렬은 안정적이므로 (오차, q, r, window) 사전식 argmin
    ranked = table.sort_values(["mean_error", *keys], kind="mergesort")
    best_row = ranked.iloc[0]
    best = {k: (int(best_row[k]) if k == "window" else float(best_row[k])) for k in keys}
    return GridSearchResult(best=best, best_error=float(best_row["mean_error"]), table=table)
