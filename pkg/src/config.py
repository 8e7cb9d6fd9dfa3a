import os
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from src.core.errors import ConfigError
from src.core.models import METHOD_ORDER, TrainConfig

# .env 파일 로드
load_dotenv()


class Config:
    def __init__(self):
        # 인스턴스 생성 시점에 환경변수 읽기
        self.LOG_PATH = os.getenv("LSTMKF_LOG_PATH", "logs")
        self.OUT_DIR = os.getenv("LSTMKF_OUT_DIR", "docs/data")


# ==========================================
# Run config (YAML)
# ==========================================

@dataclass
class GenerateConfig:
    generator: str = "oscillator"     # linear_cv | oscillator
    dim: int = 2
    length: int = 100
    n_train: int = 20
    n_test: int = 10
    q: float = 0.01                   # 공정 노이즈 분산 (linear_cv)
    r: float = 0.05                   # 측정 노이즈 분산
    dt: float = 0.1
    amplitude: float = 1.0
    frequency: float = 0.2
    bursts: Optional[Dict[str, Any]] = None   # {starts: [...], ends: [...], scale: 10}
    seed: int = 0

    def validate(self):
        if self.generator not in ("linear_cv", "oscillator"):
            raise ConfigError(f"generate.generator must be linear_cv or oscillator, got {self.generator!r}")
        if min(self.dim, self.length, self.n_train, self.n_test) < 1:
            raise ConfigError("generate: dim, length, n_train, n_test must be >= 1")
        if self.bursts is not None:
            unknown = set(self.bursts) - {"starts", "ends", "scale"}
            if unknown or not {"starts", "ends"} <= set(self.bursts):
                raise ConfigError(f"generate.bursts needs starts/ends (and optional scale), got {sorted(self.bursts)}")


@dataclass
class TrainSection:
    model: str = "lstm_kf"            # lstm_kf | std_lstm
    preset: str = "small"             # small | big
    hidden: Optional[int] = None      # small preset 의 hidden 크기 (기본 16)
    # 아래 값들이 None 이면 preset 기본값
    learning_rate: Optional[float] = None
    decay: Optional[float] = None
    decay_start: Optional[int] = None
    truncation: Optional[int] = None
    batch_size: Optional[int] = None
    epochs: Optional[int] = None
    lam: Optional[float] = None
    clip_norm: Optional[float] = 5.0  # 0 이하 또는 null 이면 clipping 끔
    seed: int = 0

    def validate(self):
        if self.model not in ("lstm_kf", "std_lstm"):
            raise ConfigError(f"train.model must be lstm_kf or std_lstm, got {self.model!r}")
        if self.preset not in ("small", "big"):
            raise ConfigError(f"train.preset must be small or big, got {self.preset!r}")

    def to_train_config(self) -> TrainConfig:
        overrides = {f.name: getattr(self, f.name) for f in fields(TrainConfig)
                     if f.name not in ("clip_norm", "seed")}
        try:
            cfg = TrainConfig.for_preset(self.preset, **overrides)
        except ValueError as e:
            raise ConfigError(f"train: {e}") from None
        clip = self.clip_norm if self.clip_norm is not None and self.clip_norm > 0 else None
        return replace(cfg, clip_norm=clip, seed=self.seed)


@dataclass
class EvalConfig:
    methods: List[str] = field(default_factory=lambda: list(METHOD_ORDER))
    q_grid: List[float] = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    r_grid: List[float] = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0, 10.0])
    window_grid: List[int] = field(default_factory=lambda: [1, 2, 3, 5, 8, 13, 21])
    dt: Optional[float] = None        # None 이면 데이터셋 metadata 의 dt

    def validate(self):
        unknown = sorted(set(self.methods) - set(METHOD_ORDER))
        if unknown or not self.methods:
            raise ConfigError(f"eval.methods must be a non-empty subset of {METHOD_ORDER}, got {self.methods}")
        if not self.q_grid or not self.r_grid or not self.window_grid:
            raise ConfigError("eval: grids must not be empty")

    def grids(self) -> Dict[str, list]:
        return {"q": self.q_grid, "r": self.r_grid, "window": self.window_grid}


@dataclass
class NoiseTraceConfig:
    index: int = 0

    def validate(self):
        if self.index < 0:
            raise ConfigError(f"noise_trace.index must be >= 0, got {self.index}")


@dataclass
class CrossvalConfig:
    folds: int = 2
    sequences: int = 4               # 앞에서부터 사용할 시퀀스 수 (folds 로 나눠떨어져야 함)
    methods: List[str] = field(default_factory=lambda: list(METHOD_ORDER))

    def validate(self):
        if self.folds < 2 or self.sequences < self.folds or self.sequences % self.folds:
            raise ConfigError(f"crossval: {self.sequences} sequences cannot form {self.folds} equal folds")
        unknown = sorted(set(self.methods) - set(METHOD_ORDER))
        if unknown:
            raise ConfigError(f"crossval.methods has unknown entries {unknown}")


SECTIONS = {
    "generate": GenerateConfig,
    "train": TrainSection,
    "eval": EvalConfig,
    "noise_trace": NoiseTraceConfig,
    "crossval": CrossvalConfig,
}


@dataclass
class RunConfig:
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    noise_trace: NoiseTraceConfig = field(default_factory=NoiseTraceConfig)
    crossval: CrossvalConfig = field(default_factory=CrossvalConfig)

    @classmethod
    def from_dict(cls, raw: Optional[Dict[str, Any]]) -> "RunConfig":
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
        unknown = sorted(set(raw) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        sections = {name: _build_section(name, kind, raw.get(name)) for name, kind in SECTIONS.items()}
        return cls(**sections)

    @classmethod
    def from_yaml(cls, path: Optional[str]) -> "RunConfig":
        """path 가 None 이면 전부 기본값"""
        if path is None:
            return cls()
        try:
            with open(path, 'r', encoding='utf-8') as f:
                raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from None
        return cls.from_dict(raw)

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        """--seed 는 생성과 학습 시드를 함께 덮어쓴다"""
        if seed is None:
            return self
        return replace(self, generate=replace(self.generate, seed=seed), train=replace(self.train, seed=seed))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _build_section(name: str, kind, raw):
    if raw is None:
        section = kind()
    else:
        if not isinstance(raw, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        known = {f.name for f in fields(kind)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown keys in '{name}': {unknown}")
        hints = typing.get_type_hints(kind)
        values = {key: _coerce(f"{name}.{key}", value, hints[key]) for key, value in raw.items()}
        section = kind(**values)
    section.validate()
    return section


def _coerce(where: str, value, hint):
    """YAML 값을 dataclass 필드 타입으로 변환 ('5e-4' 같은 문자열도 float 로)"""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(where, value, inner[0])
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(f"{where}[{i}]", v, args[0]) for i, v in enumerate(value)]
    if origin in (dict, Dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {value!r}")
        return dict(value)
    try:
        if hint is bool:
            if isinstance(value, bool):
                return value
            raise ValueError
        if hint is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if hint is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if hint is str:
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot use {value!r} as {hint.__name__}") from None
    return value
