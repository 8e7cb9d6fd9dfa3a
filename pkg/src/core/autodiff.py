# src/core/autodiff.py
"""
Reverse-mode 미분 테이프.

모든 값은 2차원 float64 행렬이고 벡터는 n x 1 열벡터로 다룬다.
연산마다 forward 값과 backward 함수(상류 gradient g -> 입력별 gradient)를
Tape 에 기록하고, backward 는 기록 역순으로 한 번씩만 재생한다.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import NonFiniteError, ShapeError, SingularMatrixError

SPD_PIVOT_TOL = 1e-12

Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected matrix, got array with shape {arr.shape}")
    return arr


def _check_finite(value: np.ndarray, what: str):
    bad = ~np.isfinite(value)
    if bad.any():
        raise NonFiniteError(f"{what} produced non-finite value", index=int(np.flatnonzero(bad)[0]))


class Var:
    """Tape 위의 노드"""
    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", node_id: int, value: np.ndarray):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def __add__(self, other: "Var") -> "Var":
        return add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return sub(self, other)

    def __mul__(self, other: "Var") -> "Var":
        return hadamard(self, other)

    def __matmul__(self, other: "Var") -> "Var":
        return matmul(self, other)

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


@dataclass
class _Op:
    output: int
    inputs: Tuple[int, ...]
    backward: Backward


class Tape:
    def __init__(self):
        self._next_id = 0
        self._ops: List[_Op] = []

    @property
    def size(self) -> int:
        """기록된 연산 개수 (부분 재생의 시작점으로 사용)"""
        return len(self._ops)

    def leaf(self, value) -> Var:
        arr = as_matrix(value)
        _check_finite(arr, "leaf")
        return self._new(arr)

    # 상수도 leaf 와 동일하다. gradient 가 계산되더라도 아무도 읽지 않는다.
    constant = leaf

    def record(self, value: np.ndarray, inputs: Sequence[Var], backward: Backward, name: str = "op") -> Var:
        for v in inputs:
            if v.tape is not self:
                raise ValueError(f"{name}: input {v} belongs to a different tape")
        _check_finite(value, name)
        out = self._new(value)
        self._ops.append(_Op(out.id, tuple(v.id for v in inputs), backward))
        return out

    def backward(self, output: Var, seed: Optional[np.ndarray] = None, since: int = 0) -> Dict[int, np.ndarray]:
        """
        output 에서 시작해 기록 역순으로 gradient 전파.
        since 이전에 기록된 연산은 재생하지 않는다 (그 입력 노드는 leaf 처럼 취급).
        """
        if seed is None:
            seed = np.ones_like(output.value)
        seed = as_matrix(seed)
        if seed.shape != output.shape:
            raise ShapeError(f"backward seed {seed.shape} vs output {output.shape}")

        grads: Dict[int, np.ndarray] = {output.id: seed}
        for op in reversed(self._ops[since:]):
            g = grads.get(op.output)
            if g is None:
                continue
            for node_id, ig in zip(op.inputs, op.backward(g)):
                if ig is None:
                    continue
                if node_id in grads:
                    grads[node_id] = grads[node_id] + ig
                else:
                    grads[node_id] = ig
        return grads

    def _new(self, value: np.ndarray) -> Var:
        v = Var(self, self._next_id, value)
        self._next_id += 1
        return v


def _same_shape(name: str, *args: Var):
    shapes = {a.shape for a in args}
    if len(shapes) != 1:
        raise ShapeError(f"{name}: shape mismatch {[a.shape for a in args]}")


# ==========================================
# Primitive ops
# ==========================================

def matmul(a: Var, b: Var) -> Var:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record(av @ bv, [a, b], lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return a.tape.record(a.value + b.value, [a, b], lambda g: (g, g), "add")


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return a.tape.record(a.value - b.value, [a, b], lambda g: (g, -g), "sub")


def hadamard(a: Var, b: Var) -> Var:
    _same_shape("hadamard", a, b)
    av, bv = a.value, b.value
    return a.tape.record(av * bv, [a, b], lambda g: (g * bv, g * av), "hadamard")


def sigmoid(a: Var) -> Var:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape.record(y, [a], lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape.record(y, [a], lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a: Var) -> Var:
    y = np.exp(a.value)
    return a.tape.record(y, [a], lambda g: (g * y,), "exp")


def relu(a: Var) -> Var:
    mask = (a.value > 0.0).astype(np.float64)
    return a.tape.record(a.value * mask, [a], lambda g: (g * mask,), "relu")


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "relu": relu,
    "hadamard": hadamard,
    "add": add,
    "sub": sub,
}


def elementwise(op: str, *args: Var) -> Var:
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op: {op}")
    return _ELEMENTWISE[op](*args)


def transpose(a: Var) -> Var:
    return a.tape.record(a.value.T.copy(), [a], lambda g: (g.T,), "transpose")


def scale(a: Var, factor: float) -> Var:
    return a.tape.record(a.value * factor, [a], lambda g: (g * factor,), "scale")


def clamp(a: Var, low: float, high: float) -> Var:
    inside = ((a.value > low) & (a.value < high)).astype(np.float64)
    return a.tape.record(np.clip(a.value, low, high), [a], lambda g: (g * inside,), "clamp")


def diag(v: Var) -> Var:
    """열벡터 -> 대각행렬"""
    if v.shape[1] != 1:
        raise ShapeError(f"diag: expected column vector, got {v.shape}")
    return v.tape.record(np.diagflat(v.value), [v], lambda g: (np.diag(g).reshape(-1, 1).copy(),), "diag")


def sum_squares(a: Var) -> Var:
    av = a.value
    return a.tape.record(np.array([[np.sum(av * av)]]), [a], lambda g: (2.0 * g[0, 0] * av,), "sum_squares")


def symmetrize(a: Var) -> Var:
    """(A + A^T) / 2"""
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"symmetrize: matrix must be square, got {a.shape}")
    return scale(add(a, transpose(a)), 0.5)


# ==========================================
# SPD solve
# ==========================================

def cholesky(m: np.ndarray) -> np.ndarray:
    """대칭화한 m 의 Cholesky 인자. 실패하면 문제 pivot 을 찾아 SingularMatrixError"""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"solve_spd: matrix must be square, got {m.shape}")
    sym = 0.5 * (m + m.T)
    try:
        lower = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("symmetric factorization failed", pivot=_failing_pivot(sym)) from None
    pivots = np.diag(lower) ** 2
    small = np.flatnonzero(pivots < SPD_PIVOT_TOL)
    if small.size:
        raise SingularMatrixError("non-positive pivot in symmetric factorization", pivot=int(small[0]))
    return lower


def _failing_pivot(sym: np.ndarray) -> int:
    # 앞쪽 주소행렬부터 분해해 보면서 처음 실패하는 위치 = pivot
    for k in range(1, sym.shape[0] + 1):
        try:
            lower = np.linalg.cholesky(sym[:k, :k])
        except np.linalg.LinAlgError:
            return k - 1
        if lower[k - 1, k - 1] ** 2 < SPD_PIVOT_TOL:
            return k - 1
    return sym.shape[0] - 1


def spd_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """numpy 수준의 SPD 풀이 (kalman-core 와 tape op 가 공유). Cholesky 는 SPD / pivot 검사에만 사용"""
    rhs = as_matrix(rhs)
    lower = cholesky(m)
    if rhs.shape[0] != lower.shape[0]:
        raise ShapeError(f"solve_spd: {lower.shape} vs rhs {rhs.shape}")
    m = as_matrix(m)
    return np.linalg.solve(0.5 * (m + m.T), rhs)


def solve_spd(m: Var, rhs: Var) -> Var:
    x = spd_solve(m.value, rhs.value)
    mv = m.value

    def backward(g):
        d_rhs = spd_solve(mv, g)
        d_sym = -d_rhs @ x.T
        # forward 가 (m + m^T)/2 를 풀기 때문에 gradient 도 대칭으로 나눠준다
        return 0.5 * (d_sym + d_sym.T), d_rhs

    return m.tape.record(x, [m, rhs], backward, "solve_spd")


# ==========================================
# Helpers
# ==========================================

def bind(tape: Tape, params: Dict[str, np.ndarray]) -> Dict[str, Var]:
    """파라미터 dict 를 tape 의 leaf 로 올림"""
    return {name: tape.leaf(value) for name, value in params.items()}


def collect_grads(grads: Dict[int, np.ndarray], bound: Dict[str, Var]) -> Dict[str, np.ndarray]:
    return {name: grads.get(var.id, np.zeros_like(var.value)) for name, var in bound.items()}
