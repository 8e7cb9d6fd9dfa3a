# src/core/optim.py
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

from src.core.errors import ShapeError

Params = Dict[str, np.ndarray]


@dataclass
class AdamState:
    """Adam 누적값. beta/eps 기본값은 표준 Adam 기본값"""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def adam_step(params: Params, grads: Params, state: AdamState) -> Tuple[Params, AdamState]:
    """
    bias correction 포함 Adam 1스텝.
    입력은 건드리지 않고 새 params / state 를 돌려준다.
    """
    if set(params) != set(grads):
        raise ShapeError(f"adam_step: parameter names differ {sorted(set(params) ^ set(grads))}")

    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeError(f"adam_step: {name} param {value.shape} vs grad {g.shape}")
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))

        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)

        new_params[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v

    return new_params, replace(state, step=t, m=new_m, v=new_v)


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Params, max_norm: float) -> Tuple[Params, float]:
    """전체 L2 norm 기준 clipping. (clip 된 grads, clip 전 norm)"""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm
