# src/core/lstm_kf.py
"""
LSTM Kalman Filter.

  predict : y' = f(y_prev),  F = df/dy (y_prev),  Q = diag(exp(q(y'))),  P' = F P F^T + Q
  update  : R = diag(exp(r(z))),  K = P' (P' + R)^-1,  y = y' + K (z - y'),  P = (I - K) P'

H = I 고정. F 는 backward 에서 상수 취급 (2차 미분 없음).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core import autodiff as ad
from src.core.autodiff import Tape, Var
from src.core.errors import ShapeError, StepError
from src.core.interfaces import ISequenceModel, SegmentResult
from src.core.lstm import NetModule, detach_state, preset_big_f, preset_big_noise, preset_small, state_on
from src.core.models import GaussianBelief, LstmKfRuntimeState, LstmState
from src.utils.rng import derive_seed

LOG_CLAMP = 10.0
MODULE_KEYS = ("f", "q", "r")
# 초기 log 분산: Q 는 +offset, R 은 -offset 에서 출발 → 초기 gain ≈ σ(2·offset)
NOISE_LOG_OFFSET = 1.0

VarState = List[Tuple[Var, Var]]


@dataclass
class LstmKfParams:
    f_module: NetModule
    q_module: NetModule
    r_module: NetModule

    def __post_init__(self):
        d = self.f_module.out_dim
        for key, module in self.modules().items():
            if module.in_dim != d or module.out_dim != d:
                raise ShapeError(f"LstmKfParams: {key}_module maps {module.in_dim} -> {module.out_dim}, expected {d} -> {d}")

    @property
    def dim(self) -> int:
        return self.f_module.out_dim

    def modules(self) -> Dict[str, NetModule]:
        return {"f": self.f_module, "q": self.q_module, "r": self.r_module}

    def parameters(self) -> Dict[str, np.ndarray]:
        """모듈 파라미터를 'f.' / 'q.' / 'r.' 접두사로 합친 dict"""
        params = {}
        for key, module in self.modules().items():
            for name, value in module.parameters().items():
                params[f"{key}.{name}"] = value
        return params

    def load_parameters(self, values: Dict[str, np.ndarray]):
        for key, module in self.modules().items():
            module.load_parameters(_strip(values, key))


def _strip(bound: Dict, key: str) -> Dict:
    prefix = f"{key}."
    return {name[len(prefix):]: v for name, v in bound.items() if name.startswith(prefix)}


@dataclass
class FilterTrace:
    """step 별 진단값. 벡터는 d x 1, 행렬은 d x d"""
    y_hat: List[np.ndarray] = field(default_factory=list)
    y_pred: List[np.ndarray] = field(default_factory=list)
    K: List[np.ndarray] = field(default_factory=list)
    Q: List[np.ndarray] = field(default_factory=list)
    R: List[np.ndarray] = field(default_factory=list)
    P: List[np.ndarray] = field(default_factory=list)
    P_pred: List[np.ndarray] = field(default_factory=list)
    F: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y_hat)

    def estimates(self) -> np.ndarray:
        return np.stack([y.ravel() for y in self.y_hat]) if self.y_hat else np.zeros((0, 0))

    def predictions(self) -> np.ndarray:
        return np.stack([y.ravel() for y in self.y_pred]) if self.y_pred else np.zeros((0, 0))

    def gains(self) -> List[float]:
        return [float(np.mean(np.diag(k))) for k in self.K]

    def mean_gain(self) -> float:
        return float(np.mean(self.gains())) if self.K else 0.0

    def noise_diagonals(self, which: str = "R") -> np.ndarray:
        """T x d, Q 또는 R 의 대각 성분"""
        mats = self.R if which == "R" else self.Q
        return np.stack([np.diag(m) for m in mats]) if mats else np.zeros((0, 0))


# ==========================================
# Tape 위의 한 step
# ==========================================

def _jacobian(tape: Tape, y_pred: Var, y_prev: Var, since: int) -> np.ndarray:
    """since 이후 기록(f 모듈 forward)만 재생해 출력 성분마다 한 번씩 역전파"""
    d_out, d_in = y_pred.shape[0], y_prev.shape[0]
    F = np.zeros((d_out, d_in))
    for i in range(d_out):
        seed = np.zeros((d_out, 1))
        seed[i, 0] = 1.0
        grads = tape.backward(y_pred, seed, since=since)
        g = grads.get(y_prev.id)
        if g is not None:
            F[i] = g.ravel()
    return F


@dataclass
class _Prediction:
    y_pred: Var
    P_pred: Var
    Q: Var
    F: np.ndarray
    f_state: VarState
    q_state: VarState


@dataclass
class _Correction:
    y_hat: Var
    P: Var
    K: Var
    R: Var
    r_state: VarState


def _log_diag_cov(raw: Var) -> Var:
    return ad.diag(ad.exp(ad.clamp(raw, -LOG_CLAMP, LOG_CLAMP)))


def predict_on(tape: Tape, bound: Dict[str, Var], params: LstmKfParams, y_prev: Var, P_prev: Var,
               f_state: VarState, q_state: VarState, jacobian: Optional[np.ndarray] = None,
               training: bool = False, rng: Optional[np.random.Generator] = None) -> _Prediction:
    mark = tape.size
    y_pred, f_state = params.f_module.forward_on(_strip(bound, "f"), y_prev, f_state, training, rng)
    F = _jacobian(tape, y_pred, y_prev, mark) if jacobian is None else np.asarray(jacobian, dtype=np.float64)
    if F.shape != (params.dim, params.dim):
        raise ShapeError(f"predict: Jacobian {F.shape} vs state dim {params.dim}")

    q_raw, q_state = params.q_module.forward_on(_strip(bound, "q"), y_pred, q_state, training, rng)
    Q = _log_diag_cov(q_raw)
    Fc = tape.constant(F)
    P_pred = ad.symmetrize(Fc @ P_prev @ Fc.T + Q)
    return _Prediction(y_pred, P_pred, Q, F, f_state, q_state)


def update_on(tape: Tape, bound: Dict[str, Var], params: LstmKfParams, y_pred: Var, P_pred: Var, z: Var,
              r_state: VarState, training: bool = False, rng: Optional[np.random.Generator] = None) -> _Correction:
    if z.shape != y_pred.shape:
        raise ShapeError(f"update: measurement {z.shape} vs prediction {y_pred.shape}")
    r_raw, r_state = params.r_module.forward_on(_strip(bound, "r"), z, r_state, training, rng)
    R = _log_diag_cov(r_raw)
    # K = P' S^-1 = (S^-1 P')^T  (P', S 대칭)
    K = ad.transpose(ad.solve_spd(P_pred + R, P_pred))
    y_hat = y_pred + K @ (z - y_pred)
    eye = tape.constant(np.eye(params.dim))
    P = ad.symmetrize((eye - K) @ P_pred)
    return _Correction(y_hat, P, K, R, r_state)


# ==========================================
# numpy API
# ==========================================

def initial_state(first_measurement, params: LstmKfParams) -> LstmKfRuntimeState:
    """mean = z_1, cov = I, 순환 상태 0"""
    z = ad.as_matrix(first_measurement)
    if z.shape != (params.dim, 1):
        raise ShapeError(f"initial_state: measurement {z.shape} vs state dim {params.dim}")
    return LstmKfRuntimeState(
        belief=GaussianBelief(z.copy(), np.eye(params.dim)),
        f_state=params.f_module.zero_state(),
        q_state=params.q_module.zero_state(),
        r_state=params.r_module.zero_state(),
        time_index=0,
    )


def _predict_step(state: LstmKfRuntimeState, params: LstmKfParams, jacobian: Optional[np.ndarray] = None
                  ) -> Tuple[_Prediction, LstmKfRuntimeState]:
    if state.belief.dim != params.dim:
        raise ShapeError(f"predict: belief dim {state.belief.dim} vs state dim {params.dim}")
    tape = Tape()
    bound = ad.bind(tape, params.parameters())
    pred = predict_on(tape, bound, params, tape.leaf(state.belief.mean), tape.constant(state.belief.cov),
                      state_on(tape, state.f_state), state_on(tape, state.q_state), jacobian)
    next_state = LstmKfRuntimeState(
        belief=GaussianBelief(pred.y_pred.value, pred.P_pred.value),
        f_state=detach_state(pred.f_state),
        q_state=detach_state(pred.q_state),
        r_state=state.r_state,
        time_index=state.time_index,
    )
    return pred, next_state


def predict(state: LstmKfRuntimeState, params: LstmKfParams, jacobian: Optional[np.ndarray] = None
            ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, LstmKfRuntimeState]:
    """
    반환 state' 의 belief 는 예측 belief (y', P'), f/q 순환 상태는 한 step 진행.
    r 상태와 time_index 는 update 이후에 바뀐다.
    """
    pred, next_state = _predict_step(state, params, jacobian)
    return pred.y_pred.value, pred.P_pred.value, pred.Q.value, next_state


def update(y_pred, P_pred, z, r_state: LstmState, params: LstmKfParams
           ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, LstmState]:
    tape = Tape()
    bound = ad.bind(tape, params.parameters())
    corr = update_on(tape, bound, params, tape.constant(y_pred), tape.constant(P_pred), tape.constant(z),
                     state_on(tape, r_state))
    return corr.y_hat.value, corr.P.value, corr.K.value, corr.R.value, detach_state(corr.r_state)


def filter_sequence(measurements, params: LstmKfParams, init: Optional[LstmKfRuntimeState] = None,
                    jacobians: Optional[Sequence[np.ndarray]] = None) -> FilterTrace:
    """
    init 이 없으면 initial_state(z_1). 첫 측정값도 포함해 T 개 전부 처리한다.
    jacobians 를 주면 해당 step 의 F 로 사용 (gradient check 용)
    """
    z = np.asarray(measurements, dtype=np.float64)
    if z.ndim != 2 or (z.size and z.shape[1] != params.dim):
        raise ShapeError(f"filter_sequence: measurements must be T x {params.dim}, got {z.shape}")
    trace = FilterTrace()
    if len(z) == 0:
        return trace
    state = init if init is not None else initial_state(z[0], params)
    for t in range(len(z)):
        try:
            F = jacobians[t] if jacobians is not None else None
            pred, state = _predict_step(state, params, F)
            y_pred, P_pred, Q = pred.y_pred.value, pred.P_pred.value, pred.Q.value
            y_hat, P, K, R, r_state = update(y_pred, P_pred, z[t], state.r_state, params)
        except Exception as e:
            raise StepError(t, e) from e
        trace.F.append(pred.F)
        state = LstmKfRuntimeState(GaussianBelief(y_hat, P), state.f_state, state.q_state, r_state,
                                   state.time_index + 1)
        trace.y_pred.append(y_pred)
        trace.P_pred.append(P_pred)
        trace.Q.append(Q)
        trace.y_hat.append(y_hat)
        trace.P.append(P)
        trace.K.append(K)
        trace.R.append(R)
    return trace


def loss(truth, trace: FilterTrace, lam: float = 0.8) -> float:
    """(1/T) sum_t |y - y_hat|^2 + lam |y - y_pred|^2"""
    y = np.asarray(truth, dtype=np.float64)
    if len(y) != len(trace):
        raise ShapeError(f"loss: truth length {len(y)} vs trace length {len(trace)}")
    if lam < 0:
        raise ValueError(f"loss: lam must be >= 0, got {lam}")
    if len(y) == 0:
        return 0.0
    est, pred = trace.estimates(), trace.predictions()
    per_step = np.sum((y - est) ** 2, axis=1) + lam * np.sum((y - pred) ** 2, axis=1)
    return float(np.mean(per_step))


# ==========================================
# 학습 가능한 모델
# ==========================================

class LstmKf(ISequenceModel):
    name = "lstm_kf"

    def __init__(self, params: LstmKfParams, lam: float = 0.8):
        if lam < 0:
            raise ValueError(f"LstmKf: lam must be >= 0, got {lam}")
        self.params = params
        self.lam = lam

    @classmethod
    def from_preset(cls, preset: str, dim: int, seed: int = 0, hidden: Optional[int] = None,
                    lam: float = 0.8, noise_offset: float = NOISE_LOG_OFFSET) -> "LstmKf":
        """
        small: 세 모듈 모두 LSTM(hidden, 기본 16) + 선형 FC
        big  : f = 3 x LSTM(1024) + FC, Q/R = LSTM(256) + FC

        q / r 마지막 FC bias 를 +noise_offset / -noise_offset 로 두어 학습 초기에는 측정값을 주로 따른다.
        """
        seeds = [derive_seed(seed, k) for k in range(len(MODULE_KEYS))]
        if preset == "small":
            kwargs = {} if hidden is None else {"hidden": hidden}
            modules = [preset_small(dim, seed=s, **kwargs) for s in seeds]
        elif preset == "big":
            modules = [preset_big_f(dim, seed=seeds[0]), preset_big_noise(dim, seed=seeds[1]),
                       preset_big_noise(dim, seed=seeds[2])]
        else:
            raise ValueError(f"unknown preset: {preset}")
        for module, sign in ((modules[1], 1.0), (modules[2], -1.0)):
            head = module.linear_layers[-1]
            head.bias = np.full_like(head.bias, sign * noise_offset)
        return cls(LstmKfParams(*modules), lam=lam)

    @property
    def dim(self) -> int:
        return self.params.dim

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.params.parameters()

    def load_parameters(self, values: Dict[str, np.ndarray]) -> None:
        self.params.load_parameters(values)

    def initial_carry(self, first_measurement: np.ndarray) -> LstmKfRuntimeState:
        return initial_state(first_measurement, self.params)

    def segment_steps(self, tape: Tape, bound: Dict[str, Var], measurements: np.ndarray,
                      carry: LstmKfRuntimeState, training: bool = False,
                      rng: Optional[np.random.Generator] = None,
                      jacobians: Optional[Sequence[np.ndarray]] = None
                      ) -> Tuple[List[_Prediction], List[_Correction], LstmKfRuntimeState]:
        """carry 에서 출발해 한 구간을 tape 위에서 전개. 반환 carry 는 gradient 가 끊긴 값"""
        y = tape.constant(carry.belief.mean)
        P = tape.constant(carry.belief.cov)
        f_state, q_state, r_state = (state_on(tape, carry.f_state), state_on(tape, carry.q_state),
                                     state_on(tape, carry.r_state))
        preds, corrs = [], []
        for t in range(measurements.shape[0]):
            try:
                F = jacobians[t] if jacobians is not None else None
                pred = predict_on(tape, bound, self.params, y, P, f_state, q_state, F, training, rng)
                corr = update_on(tape, bound, self.params, pred.y_pred, pred.P_pred,
                                 tape.constant(measurements[t]), r_state, training, rng)
            except Exception as e:
                raise StepError(carry.time_index + t, e) from e
            preds.append(pred)
            corrs.append(corr)
            y, P = corr.y_hat, corr.P
            f_state, q_state, r_state = pred.f_state, pred.q_state, corr.r_state

        next_carry = LstmKfRuntimeState(
            belief=GaussianBelief(y.value.copy(), P.value.copy()),
            f_state=detach_state(f_state),
            q_state=detach_state(q_state),
            r_state=detach_state(r_state),
            time_index=carry.time_index + measurements.shape[0],
        )
        return preds, corrs, next_carry

    def segment_loss(self, tape: Tape, bound: Dict[str, Var], truth: np.ndarray, measurements: np.ndarray,
                     carry: LstmKfRuntimeState, training: bool, rng: Optional[np.random.Generator],
                     jacobians: Optional[Sequence[np.ndarray]] = None) -> SegmentResult:
        if len(truth) != len(measurements):
            raise ShapeError(f"segment_loss: truth length {len(truth)} vs measurements {len(measurements)}")
        preds, corrs, next_carry = self.segment_steps(tape, bound, measurements, carry, training, rng, jacobians)
        total = None
        for t, (pred, corr) in enumerate(zip(preds, corrs)):
            y = tape.constant(truth[t])
            err = ad.sum_squares(y - corr.y_hat) + ad.scale(ad.sum_squares(y - pred.y_pred), self.lam)
            total = err if total is None else total + err
        gains = [float(np.mean(np.diag(corr.K.value))) for corr in corrs]
        return SegmentResult(loss=ad.scale(total, 1.0 / len(corrs)), carry=next_carry, gains=gains)

    def trace(self, measurements: np.ndarray) -> FilterTrace:
        return filter_sequence(measurements, self.params)

    def run(self, measurements: np.ndarray) -> np.ndarray:
        return self.trace(measurements).estimates()
