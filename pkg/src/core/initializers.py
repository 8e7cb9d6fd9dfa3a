# src/core/initializers.py
import numpy as np

from src.utils.rng import make_rng, standard_normal, uniform


def init_orthogonal(rows: int, cols: int, seed: int) -> np.ndarray:
    """
    Gaussian 행렬의 QR 분해로 만든 (준)직교 행렬.
    R 의 대각이 양수가 되도록 Q 의 열 부호를 보정한다.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"init_orthogonal: invalid shape ({rows}, {cols})")
    tall, narrow = max(rows, cols), min(rows, cols)
    a = standard_normal(make_rng(seed), (tall, narrow))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    return q if rows >= cols else q.T.copy()


def init_uniform(rows: int, cols: int, bound: float, seed: int) -> np.ndarray:
    if bound <= 0:
        raise ValueError(f"init_uniform: bound must be positive, got {bound}")
    return uniform(make_rng(seed), -bound, bound, (rows, cols))


def init_xavier(rows: int, cols: int, seed: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return init_uniform(rows, cols, bound, seed)
