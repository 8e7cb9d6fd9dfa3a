# src/core/gradcheck.py
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from src.core.autodiff import Tape, Var, bind, collect_grads
from src.core.errors import NonFiniteError, ShapeError

FD_STEP = 1e-5
# 기울기가 거의 0인 원소는 상대오차 대신 이 값으로 나눈다
REL_ERROR_FLOOR = 1e-4

LossFunction = Callable[[Tape, Dict[str, Var]], Var]


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _evaluate(function: LossFunction, params: Dict[str, np.ndarray]) -> float:
    tape = Tape()
    out = function(tape, bind(tape, params))
    if out.shape != (1, 1):
        raise ShapeError(f"gradient_check: loss must be 1x1, got {out.shape}")
    value = float(out.value[0, 0])
    if not np.isfinite(value):
        raise NonFiniteError("gradient_check: loss is not finite", index=0)
    return value


def analytic_gradient(function: LossFunction, params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    tape = Tape()
    bound = bind(tape, params)
    out = function(tape, bound)
    if not np.all(np.isfinite(out.value)):
        raise NonFiniteError("gradient_check: loss is not finite", index=0)
    return collect_grads(tape.backward(out), bound)


def numeric_gradient(function: LossFunction, params: Dict[str, np.ndarray], step: float = FD_STEP) -> Dict[str, np.ndarray]:
    """중앙 차분"""
    result = {}
    for name, value in params.items():
        grad = np.zeros_like(value, dtype=np.float64)
        for idx in np.ndindex(value.shape):
            shifted = dict(params)
            plus = value.astype(np.float64).copy()
            plus[idx] += step
            shifted[name] = plus
            f_plus = _evaluate(function, shifted)

            minus = value.astype(np.float64).copy()
            minus[idx] -= step
            shifted[name] = minus
            f_minus = _evaluate(function, shifted)
            grad[idx] = (f_plus - f_minus) / (2.0 * step)
        result[name] = grad
    return result


def gradient_check(function: LossFunction, params: Dict[str, np.ndarray], tolerance: float = 1e-4,
                   step: float = FD_STEP) -> GradCheckReport:
    analytic = analytic_gradient(function, params)
    numeric = numeric_gradient(function, params, step)

    errors = {}
    for name in params:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_ERROR_FLOOR)
        errors[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    worst = max(errors.values()) if errors else 0.0
    return GradCheckReport(max_rel_error=worst, tolerance=tolerance, errors=errors)
