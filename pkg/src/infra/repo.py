# src/infra/repo.py
"""
파일 포맷.

데이터셋 (plain text):
    # lstmkf-dataset v1 sequences=<N>
    {metadata JSON 한 줄}
    [sequence 0]
    t,y_1,...,y_d,z_1,...,z_d
    1,<%.17g>,...
    [end]
    ... (시퀀스마다 반복)

가중치 컨테이너 (JSON):
    {"format": "lstmkf-weights", "version": 1, "byte_order": "little", "model": "lstm_kf" | "std_lstm",
     "modules": {<key>: {"architecture": {...}, "arrays": {<name>: {"shape": [...], "data": [...]}}}},
     "train_config": {...}, "seed": <int>}
    float 는 JSON repr (최단 왕복 표현) 이라 손실 없음.
"""
import io
import json
import os
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from src.core.errors import DatasetParseError, ShapeError
from src.core.interfaces import ISequenceModel
from src.core.lstm import NetModule, StandaloneLstm
from src.core.lstm_kf import LstmKf, LstmKfParams
from src.core.models import EpochLog, MetricsRow, TrainConfig, TrajectoryDataset, TrajectorySequence
from src.utils.calculator import ErrorCalculator

DATASET_MAGIC = "# lstmkf-dataset v1"
WEIGHTS_FORMAT = "lstmkf-weights"
WEIGHTS_VERSION = 1
LOG_COLUMNS = ["epoch", "loss", "mean_gain", "learning_rate"]
BANNER = "SYNTHETIC DATA: desk-scale benchmark on generated trajectories, not the original datasets."


def _fmt(v: float) -> str:
    return f"{v:.17g}"


# ==========================================
# Dataset
# ==========================================

def save_dataset(dataset: TrajectoryDataset, path: str):
    lines = [f"{DATASET_MAGIC} sequences={len(dataset)}", json.dumps(dataset.metadata, sort_keys=True)]
    for k, seq in enumerate(dataset.sequences):
        d = seq.dim
        lines.append(f"[sequence {k}]")
        lines.append(",".join(["t"] + [f"y_{i}" for i in range(1, d + 1)] + [f"z_{i}" for i in range(1, d + 1)]))
        for t in range(seq.length):
            lines.append(",".join([str(t + 1)] + [_fmt(v) for v in seq.truth[t]] + [_fmt(v) for v in seq.measurements[t]]))
        lines.append("[end]")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path: str) -> TrajectoryDataset:
    """전부 읽고 검증한 뒤에만 반환 (부분 데이터셋 없음)"""
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()

    if not lines or not lines[0].startswith(DATASET_MAGIC):
        raise DatasetParseError("missing dataset header", line=1)
    try:
        expected = int(lines[0].rsplit("sequences=", 1)[1])
    except (IndexError, ValueError):
        raise DatasetParseError("header has no sequence count", line=1) from None
    if len(lines) < 2:
        raise DatasetParseError("missing metadata line", line=2)
    try:
        metadata = json.loads(lines[1])
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"bad metadata JSON: {e.msg}", line=2) from None

    sequences, i = [], 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        if lines[i] != f"[sequence {len(sequences)}]":
            raise DatasetParseError(f"expected '[sequence {len(sequences)}]', got '{lines[i]}'", line=i + 1)
        seq, i = _parse_block(lines, i + 1)
        sequences.append(seq)

    if len(sequences) != expected:
        raise DatasetParseError(f"expected {expected} sequences, found {len(sequences)}", line=len(lines))
    return TrajectoryDataset(sequences, metadata)


def _parse_block(lines: List[str], start: int) -> Tuple[TrajectorySequence, int]:
    """start = CSV 헤더 줄 index. (시퀀스, [end] 다음 줄 index)"""
    if start >= len(lines):
        raise DatasetParseError("truncated sequence block: missing CSV header", line=start + 1)
    header = lines[start].split(",")
    if len(header) < 3 or header[0] != "t" or (len(header) - 1) % 2:
        raise DatasetParseError(f"bad CSV header '{lines[start]}'", line=start + 1)
    d = (len(header) - 1) // 2

    end = start + 1
    while end < len(lines) and lines[end] != "[end]":
        if lines[end].count(",") != 2 * d:
            raise DatasetParseError(f"expected {2 * d + 1} fields", line=end + 1)
        end += 1
    if end >= len(lines):
        raise DatasetParseError("truncated sequence block: missing [end]", line=len(lines))
    if end == start + 1:
        raise DatasetParseError("empty sequence block", line=end + 1)

    try:
        frame = pd.read_csv(io.StringIO("\n".join(lines[start:end])), float_precision="round_trip")
        values = frame.to_numpy(dtype=np.float64)
    except (ValueError, pd.errors.ParserError) as e:
        raise DatasetParseError(f"bad numeric value: {e}", line=start + 2) from None
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        raise DatasetParseError("non-numeric or missing value", line=start + 2 + int(bad[0][0]))
    expected_t = np.arange(1, len(values) + 1)
    if not np.array_equal(values[:, 0], expected_t):
        row = int(np.flatnonzero(values[:, 0] != expected_t)[0])
        raise DatasetParseError("time column out of order", line=start + 2 + row)
    return TrajectorySequence(values[:, 1:1 + d], values[:, 1 + d:]), end + 1


# ==========================================
# 결과 저장소
# ==========================================

class BenchRepository:
    def __init__(self, root_path: str = "docs/data"):
        self.root = root_path
        os.makedirs(self.root, exist_ok=True)

        self.train_file = os.path.join(self.root, "train.dataset")
        self.test_file = os.path.join(self.root, "test.dataset")
        self.checkpoint_file = os.path.join(self.root, "checkpoint.json")
        self.log_file = os.path.join(self.root, "training_log.csv")
        self.table_csv = os.path.join(self.root, "metrics.csv")
        self.table_txt = os.path.join(self.root, "metrics.txt")
        self.gain_curve_file = os.path.join(self.root, "gain_curve.csv")
        self.noise_trace_file = os.path.join(self.root, "noise_trace.csv")
        self.config_file = os.path.join(self.root, "config.yaml")

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    # ---- 데이터셋 ----
    def save_split(self, train: TrajectoryDataset, test: TrajectoryDataset):
        save_dataset(train, self.train_file)
        save_dataset(test, self.test_file)

    # ---- 체크포인트 ----
    def save_checkpoint(self, model: ISequenceModel, config: TrainConfig, seed: int, path: Optional[str] = None):
        modules = _model_modules(model)
        payload = {
            "format": WEIGHTS_FORMAT,
            "version": WEIGHTS_VERSION,
            "byte_order": "little",
            "model": model.name,
            "lam": getattr(model, "lam", None),
            "modules": {
                key: {
                    "architecture": module.architecture(),
                    "arrays": {name: {"shape": list(v.shape), "data": v.ravel().tolist()}
                               for name, v in module.parameters().items()},
                }
                for key, module in modules.items()
            },
            "train_config": asdict(config),
            "seed": int(seed),
        }
        self._save_json(path or self.checkpoint_file, payload)

    def load_checkpoint(self, path: Optional[str] = None) -> Tuple[ISequenceModel, Dict[str, Any]]:
        """(모델, 체크포인트 메타데이터). 모양이 맞지 않으면 ShapeError"""
        path = path or self.checkpoint_file
        payload = self._load_json(path)
        if payload is None:
            raise FileNotFoundError(f"checkpoint not found or unreadable: {path}")
        if payload.get("format") != WEIGHTS_FORMAT or payload.get("version") != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weight container: {payload.get('format')} v{payload.get('version')}")

        kind = payload.get("model")
        required = {LstmKf.name: ("f", "q", "r"), StandaloneLstm.name: ("net",)}.get(kind)
        if required is None:
            raise ValueError(f"unknown model kind in checkpoint: {kind}")
        entries = payload.get("modules")
        if not isinstance(entries, dict):
            raise ValueError(f"checkpoint has no 'modules' mapping: {path}")
        missing = [key for key in required if key not in entries]
        if missing:
            raise ValueError(f"checkpoint is missing modules {missing}: {path}")

        modules = {key: self._module_from_entry(key, entries[key]) for key in required}
        if kind == LstmKf.name:
            lam = payload.get("lam")
            model = LstmKf(LstmKfParams(modules["f"], modules["q"], modules["r"]),
                           lam=0.8 if lam is None else float(lam))
        else:
            model = StandaloneLstm(modules["net"])
        meta = {"train_config": payload.get("train_config", {}), "seed": payload.get("seed")}
        return model, meta

    @staticmethod
    def _module_from_entry(key: str, entry: Any) -> NetModule:
        if not isinstance(entry, dict) or "architecture" not in entry or "arrays" not in entry:
            raise ValueError(f"checkpoint: module '{key}' needs 'architecture' and 'arrays'")
        try:
            module = NetModule.from_architecture(entry["architecture"])
            values = {}
            for name, arr in entry["arrays"].items():
                shape = tuple(int(s) for s in arr["shape"])
                data = np.asarray(arr["data"], dtype=np.float64)
                if data.size != int(np.prod(shape)):
                    raise ShapeError(f"checkpoint: array {key}.{name} declares {shape} but holds {data.size} values")
                values[name] = data.reshape(shape)
        except (KeyError, TypeError, AttributeError) as e:
            raise ValueError(f"checkpoint: malformed module '{key}': {e!r}") from None
        module.load_parameters(values)
        return module

    # ---- 학습 로그 ----
    def write_training_log(self, history: List[EpochLog], path: Optional[str] = None):
        frame = pd.DataFrame([asdict(h) for h in history], columns=LOG_COLUMNS)
        frame.to_csv(path or self.log_file, index=False, float_format="%.17g")

    def read_training_log(self, path: Optional[str] = None) -> pd.DataFrame:
        path = path or self.log_file
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except pd.errors.EmptyDataError:
            raise DatasetParseError("training log is empty", line=1) from None
        except pd.errors.ParserError as e:
            raise DatasetParseError(f"malformed training log: {e}", line=1) from None
        if list(frame.columns) != LOG_COLUMNS:
            raise DatasetParseError(f"training log columns {list(frame.columns)} != {LOG_COLUMNS}", line=1)
        try:
            frame["epoch"] = frame["epoch"].astype(int)
            frame[LOG_COLUMNS[1:]] = frame[LOG_COLUMNS[1:]].astype(float)
        except (ValueError, TypeError) as e:
            raise DatasetParseError(f"malformed training log value: {e}", line=2) from None
        if not frame["epoch"].is_monotonic_increasing or frame["epoch"].duplicated().any():
            raise DatasetParseError("training log epochs not strictly increasing", line=2)
        return frame

    # ---- 표 / 곡선 ----
    def write_table(self, rows: List[MetricsRow], csv_path: Optional[str] = None,
                    txt_path: Optional[str] = None) -> pd.DataFrame:
        frame = ErrorCalculator().to_frame(rows)
        frame.to_csv(csv_path or self.table_csv, index=False, float_format="%.17g")
        with open(txt_path or self.table_txt, 'w', encoding='utf-8') as f:
            f.write(render_table(frame) + "\n")
        return frame

    def write_frame(self, frame: pd.DataFrame, path: str):
        frame.to_csv(path, index=False, float_format="%.17g")

    def write_config(self, resolved: Dict[str, Any]):
        with open(self.config_file, 'w', encoding='utf-8') as f:
            yaml.safe_dump(resolved, f, sort_keys=True)

    def _load_json(self, path: str, default=None):
        if not os.path.exists(path):
            return default
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError):
            return default

    def _save_json(self, path: str, data):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=1)


def render_table(frame: pd.DataFrame) -> str:
    """정렬된 텍스트 표 + 합성 데이터 배너"""
    body = frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")
    return f"{BANNER}\n{body}"


def _model_modules(model: ISequenceModel) -> Dict[str, NetModule]:
    if isinstance(model, LstmKf):
        return model.params.modules()
    if isinstance(model, StandaloneLstm):
        return {"net": model.module}
    raise ValueError(f"cannot serialize model of type {type(model).__name__}")
