# src/core/lstm.py
"""
forget gate 가 있는 LSTM 셀, 다층 스택, FC head, 그리고 small / big preset.

  f = σ(W_fh h + W_fx x + b_f)
  i = σ(W_ih h + W_ix x + b_i)
  o = σ(W_oh h + W_ox x + b_o)
  c~ = tanh(W_ch h + W_cx x + b_c)
  c = f ⊙ c_prev + i ⊙ c~
  h = o ⊙ tanh(c)
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.core import autodiff as ad
from src.core.autodiff import Tape, Var
from src.core.errors import ShapeError
from src.core.interfaces import ISequenceModel, SegmentResult
from src.core.initializers import init_orthogonal, init_uniform, init_xavier
from src.core.models import LstmLayerState, LstmState
from src.utils.rng import derive_seed

GATES = ("f", "i", "o", "c")
INPUT_INIT_BOUND = 0.01
FORGET_BIAS = 1.0


@dataclass
class LstmLayerParams:
    W_fh: np.ndarray
    W_fx: np.ndarray
    W_ih: np.ndarray
    W_ix: np.ndarray
    W_oh: np.ndarray
    W_ox: np.ndarray
    W_ch: np.ndarray
    W_cx: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        hidden, inputs = self.W_fx.shape
        for g in GATES:
            if getattr(self, f"W_{g}h").shape != (hidden, hidden):
                raise ShapeError(f"LSTM W_{g}h {getattr(self, f'W_{g}h').shape} vs hidden {hidden}")
            if getattr(self, f"W_{g}x").shape != (hidden, inputs):
                raise ShapeError(f"LSTM W_{g}x {getattr(self, f'W_{g}x').shape} vs ({hidden}, {inputs})")
            if getattr(self, f"b_{g}").shape != (hidden, 1):
                raise ShapeError(f"LSTM b_{g} {getattr(self, f'b_{g}').shape} vs ({hidden}, 1)")

    @property
    def hidden_size(self) -> int:
        return self.W_fx.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_fx.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden: int) -> "LstmLayerParams":
        values = {}
        for g in GATES:
            values[f"W_{g}h"] = np.zeros((hidden, hidden))
            values[f"W_{g}x"] = np.zeros((hidden, input_size))
            values[f"b_{g}"] = np.zeros((hidden, 1))
        return cls(**values)

    @classmethod
    def initialized(cls, input_size: int, hidden: int, seed: int) -> "LstmLayerParams":
        """state-to-state 는 직교, 입력 행렬은 U[-0.01, 0.01], forget bias 1.0, 나머지 bias 0"""
        values = {}
        for k, g in enumerate(GATES):
            values[f"W_{g}h"] = init_orthogonal(hidden, hidden, derive_seed(seed, k, 0))
            values[f"W_{g}x"] = init_uniform(hidden, input_size, INPUT_INIT_BOUND, derive_seed(seed, k, 1))
            values[f"b_{g}"] = np.full((hidden, 1), FORGET_BIAS if g == "f" else 0.0)
        return cls(**values)

    def named(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class LinearLayer:
    weight: np.ndarray      # out x in
    bias: np.ndarray        # out x 1
    relu: bool = False

    def __post_init__(self):
        if self.bias.shape != (self.weight.shape[0], 1):
            raise ShapeError(f"LinearLayer: weight {self.weight.shape} vs bias {self.bias.shape}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


# ==========================================
# 셀 / 모듈 연산 (tape 위)
# ==========================================

def lstm_cell_on(x: Var, h_prev: Var, c_prev: Var, p: Dict[str, Var]) -> Tuple[Var, Var]:
    def gate(g: str) -> Var:
        return p[f"W_{g}h"] @ h_prev + p[f"W_{g}x"] @ x + p[f"b_{g}"]

    f = ad.sigmoid(gate("f"))
    i = ad.sigmoid(gate("i"))
    o = ad.sigmoid(gate("o"))
    c_tilde = ad.tanh(gate("c"))
    c = f * c_prev + i * c_tilde
    h = o * ad.tanh(c)
    return h, c


def lstm_cell(x, state: LstmLayerState, params: LstmLayerParams) -> Tuple[np.ndarray, np.ndarray]:
    x = ad.as_matrix(x)
    if x.shape != (params.input_size, 1):
        raise ShapeError(f"lstm_cell: input {x.shape} vs expected ({params.input_size}, 1)")
    h_prev, c_prev = ad.as_matrix(state.h), ad.as_matrix(state.c)
    if h_prev.shape != (params.hidden_size, 1) or c_prev.shape != (params.hidden_size, 1):
        raise ShapeError(f"lstm_cell: state {h_prev.shape}/{c_prev.shape} vs hidden {params.hidden_size}")
    tape = Tape()
    h, c = lstm_cell_on(tape.leaf(x), tape.leaf(h_prev), tape.leaf(c_prev), ad.bind(tape, params.named()))
    return h.value, c.value


class NetModule:
    """
    LSTM 층들 + FC 층들.
    dropout 은 각 LSTM 층 출력에 inverted 방식으로 (training 일 때만) 적용
    """
    def __init__(self, lstm_layers: List[LstmLayerParams], linear_layers: List[LinearLayer], keep_prob: float = 1.0):
        if not lstm_layers or not linear_layers:
            raise ShapeError("NetModule: needs at least one LSTM layer and one linear layer")
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"NetModule: keep_prob must be in (0, 1], got {keep_prob}")
        for prev, nxt in zip(lstm_layers, lstm_layers[1:]):
            if prev.hidden_size != nxt.input_size:
                raise ShapeError(f"NetModule: LSTM hidden {prev.hidden_size} -> next input {nxt.input_size}")
        width = lstm_layers[-1].hidden_size
        for layer in linear_layers:
            if layer.in_dim != width:
                raise ShapeError(f"NetModule: linear input {layer.in_dim} vs previous width {width}")
            width = layer.out_dim
        self.lstm_layers = lstm_layers
        self.linear_layers = linear_layers
        self.keep_prob = keep_prob

    @property
    def in_dim(self) -> int:
        return self.lstm_layers[0].input_size

    @property
    def out_dim(self) -> int:
        return self.linear_layers[-1].out_dim

    @property
    def hidden_sizes(self) -> List[int]:
        return [p.hidden_size for p in self.lstm_layers]

    # ---- 파라미터 ----
    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for k, layer in enumerate(self.lstm_layers):
            for name, value in layer.named().items():
                params[f"lstm{k}.{name}"] = value
        for k, layer in enumerate(self.linear_layers):
            params[f"fc{k}.weight"] = layer.weight
            params[f"fc{k}.bias"] = layer.bias
        return params

    def load_parameters(self, values: Dict[str, np.ndarray]):
        current = self.parameters()
        missing = sorted(set(current) - set(values))
        if missing:
            raise ShapeError(f"NetModule: missing parameters {missing}")
        for name, old in current.items():
            new = np.asarray(values[name], dtype=np.float64)
            if new.shape != old.shape:
                raise ShapeError(f"NetModule: parameter {name} expects {old.shape}, got {new.shape}")
        for k, layer in enumerate(self.lstm_layers):
            for name in layer.named():
                setattr(layer, name, np.array(values[f"lstm{k}.{name}"], dtype=np.float64))
        for k, layer in enumerate(self.linear_layers):
            layer.weight = np.array(values[f"fc{k}.weight"], dtype=np.float64)
            layer.bias = np.array(values[f"fc{k}.bias"], dtype=np.float64)

    def architecture(self) -> Dict[str, Any]:
        return {
            "input": self.in_dim,
            "lstm": self.hidden_sizes,
            "linear": [[layer.out_dim, layer.relu] for layer in self.linear_layers],
            "keep_prob": self.keep_prob,
        }

    @classmethod
    def from_architecture(cls, arch: Dict[str, Any]) -> "NetModule":
        """구조만 복원 (값은 0). 이후 load_parameters 로 채움"""
        lstm_layers, width = [], int(arch["input"])
        for hidden in arch["lstm"]:
            lstm_layers.append(LstmLayerParams.zeros(width, int(hidden)))
            width = int(hidden)
        linear_layers = []
        for out_dim, relu in arch["linear"]:
            linear_layers.append(LinearLayer(np.zeros((int(out_dim), width)), np.zeros((int(out_dim), 1)), bool(relu)))
            width = int(out_dim)
        return cls(lstm_layers, linear_layers, float(arch.get("keep_prob", 1.0)))

    def zero_state(self) -> LstmState:
        return LstmState([LstmLayerState(np.zeros((h, 1)), np.zeros((h, 1))) for h in self.hidden_sizes])

    def check_state(self, state: LstmState):
        if len(state.layers) != len(self.lstm_layers):
            raise ShapeError(f"NetModule: state has {len(state.layers)} layers, module has {len(self.lstm_layers)}")
        for layer_state, hidden in zip(state.layers, self.hidden_sizes):
            if layer_state.h.shape != (hidden, 1) or layer_state.c.shape != (hidden, 1):
                raise ShapeError(f"NetModule: state {layer_state.h.shape} vs hidden ({hidden}, 1)")

    # ---- forward ----
    def forward_on(self, bound: Dict[str, Var], x: Var, state: List[Tuple[Var, Var]],
                   training: bool = False, rng: Optional[np.random.Generator] = None
                   ) -> Tuple[Var, List[Tuple[Var, Var]]]:
        """
        bound: 이 모듈 파라미터의 tape leaf (parameters() 와 같은 이름)
        state: 층별 (h, c) Var
        """
        if x.shape != (self.in_dim, 1):
            raise ShapeError(f"NetModule: input {x.shape} vs expected ({self.in_dim}, 1)")
        tape = x.tape
        use_dropout = training and self.keep_prob < 1.0
        if use_dropout and rng is None:
            raise ValueError("NetModule: training with dropout needs an rng")

        out, new_state = x, []
        for k, (h_prev, c_prev) in enumerate(state):
            layer_params = {name: bound[f"lstm{k}.{name}"] for name in LstmLayerParams.__dataclass_fields__}
            h, c = lstm_cell_on(out, h_prev, c_prev, layer_params)
            new_state.append((h, c))
            out = h
            if use_dropout:
                mask = (rng.random(h.shape) < self.keep_prob).astype(np.float64) / self.keep_prob
                out = out * tape.constant(mask)

        for k, layer in enumerate(self.linear_layers):
            out = bound[f"fc{k}.weight"] @ out + bound[f"fc{k}.bias"]
            if layer.relu:
                out = ad.relu(out)
        return out, new_state

    def forward(self, x, state: LstmState, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, LstmState]:
        self.check_state(state)
        tape = Tape()
        bound = ad.bind(tape, self.parameters())
        vars_state = [(tape.constant(s.h), tape.constant(s.c)) for s in state.layers]
        y, new_state = self.forward_on(bound, tape.leaf(x), vars_state, training, rng)
        return y.value, detach_state(new_state)


def module_forward(module: NetModule, x, state: LstmState, training: bool = False,
                   rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, LstmState]:
    return module.forward(x, state, training, rng)


def state_on(tape: Tape, state: LstmState) -> List[Tuple[Var, Var]]:
    return [(tape.constant(s.h), tape.constant(s.c)) for s in state.layers]


def detach_state(state: List[Tuple[Var, Var]]) -> LstmState:
    return LstmState([LstmLayerState(h.value.copy(), c.value.copy()) for h, c in state])


# ==========================================
# Presets
# ==========================================

def build_module(in_dim: int, lstm_hidden: List[int], linear: List[Tuple[int, bool]],
                 keep_prob: float = 1.0, seed: int = 0) -> NetModule:
    lstm_layers, width = [], in_dim
    for k, hidden in enumerate(lstm_hidden):
        lstm_layers.append(LstmLayerParams.initialized(width, hidden, derive_seed(seed, 1, k)))
        width = hidden
    linear_layers = []
    for k, (out_dim, relu) in enumerate(linear):
        weight = init_xavier(out_dim, width, derive_seed(seed, 2, k))
        linear_layers.append(LinearLayer(weight, np.zeros((out_dim, 1)), relu))
        width = out_dim
    return NetModule(lstm_layers, linear_layers, keep_prob)


def preset_big_f(out_dim: int, in_dim: Optional[int] = None, seed: int = 0) -> NetModule:
    """3 x LSTM(1024), dropout keep 0.7, FC 1024 -> 1024 -> out (마지막 제외 ReLU)"""
    _check_out_dim(out_dim)
    return build_module(in_dim or out_dim, [1024, 1024, 1024],
                        [(1024, True), (1024, True), (out_dim, False)], keep_prob=0.7, seed=seed)


def preset_big_noise(out_dim: int, in_dim: Optional[int] = None, seed: int = 0) -> NetModule:
    """LSTM(256) + FC -> out"""
    _check_out_dim(out_dim)
    return build_module(in_dim or out_dim, [256], [(out_dim, False)], seed=seed)


def preset_small(out_dim: int, in_dim: Optional[int] = None, seed: int = 0, hidden: int = 16) -> NetModule:
    """LSTM(16) + 비선형 없는 FC -> out"""
    _check_out_dim(out_dim)
    return build_module(in_dim or out_dim, [hidden], [(out_dim, False)], seed=seed)


def _check_out_dim(out_dim: int):
    if out_dim < 1:
        raise ValueError(f"preset: out_dim must be >= 1, got {out_dim}")


# ==========================================
# Std. LSTM baseline
# ==========================================

def standalone_lstm_filter(measurements, module: NetModule) -> np.ndarray:
    """z_t 를 순서대로 모듈에 넣고 step 별 출력을 그대로 추정값으로 사용"""
    z = np.asarray(measurements, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"standalone_lstm_filter: measurements must be T x d, got {z.shape}")
    if module.in_dim != z.shape[1] or module.out_dim != z.shape[1]:
        raise ShapeError(f"standalone_lstm_filter: module {module.in_dim}->{module.out_dim} vs measurement dim {z.shape[1]}")
    state = module.zero_state()
    out = np.zeros_like(z)
    for t in range(z.shape[0]):
        y, state = module.forward(z[t], state)
        out[t] = y.ravel()
    return out


class StandaloneLstm(ISequenceModel):
    """예측/갱신을 암묵적으로 한 번에 학습하는 일반 LSTM. 손실은 순수 MSE"""
    name = "std_lstm"

    def __init__(self, module: NetModule):
        self.module = module

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.module.parameters()

    def load_parameters(self, values: Dict[str, np.ndarray]) -> None:
        self.module.load_parameters(values)

    def initial_carry(self, first_measurement: np.ndarray) -> LstmState:
        return self.module.zero_state()

    def segment_loss(self, tape: Tape, bound: Dict[str, Var], truth: np.ndarray, measurements: np.ndarray,
                     carry: LstmState, training: bool, rng: Optional[np.random.Generator]) -> SegmentResult:
        state = state_on(tape, carry)
        total = None
        for t in range(measurements.shape[0]):
            y, state = self.module.forward_on(bound, tape.constant(measurements[t]), state, training, rng)
            err = ad.sum_squares(y - tape.constant(truth[t]))
            total = err if total is None else total + err
        loss = ad.scale(total, 1.0 / measurements.shape[0])
        return SegmentResult(loss=loss, carry=detach_state(state))

    def run(self, measurements: np.ndarray) -> np.ndarray:
        return standalone_lstm_filter(measurements, self.module)
