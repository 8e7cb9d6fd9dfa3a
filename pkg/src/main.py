# src/main.py
import argparse
import os
import sys
import traceback
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

# 모듈 경로 설정
sys.path.append(os.path.dirname(os.path.abspath(__file__)) + "/..")

from src.backtest.components import LearnedMethod, baseline_methods
from src.backtest.runner import EvalRunner
from src.config import Config, RunConfig
from src.core.errors import ConfigError, LstmKfError
from src.core.interfaces import IFilterMethod, ISequenceModel
from src.core.lstm import StandaloneLstm, preset_big_f, preset_small
from src.core.lstm_kf import LstmKf, filter_sequence
from src.core.models import TrajectoryDataset
from src.core.trainer import Trainer
from src.infra.data import SyntheticDataGenerator, noise_stats
from src.infra.repo import BenchRepository, load_dataset, render_table
from src.utils.logger import BenchLogger

LEARNED = ("std_lstm", "lstm_kf")


def build_model(kind: str, preset: str, dim: int, seed: int, hidden: Optional[int] = None,
                lam: float = 0.8) -> ISequenceModel:
    if kind == "lstm_kf":
        return LstmKf.from_preset(preset, dim, seed=seed, hidden=hidden, lam=lam)
    if kind == "std_lstm":
        # LSTM_f 와 같은 구조
        if preset == "big":
            return StandaloneLstm(preset_big_f(dim, seed=seed))
        return StandaloneLstm(preset_small(dim, seed=seed, **({} if hidden is None else {"hidden": hidden})))
    raise ConfigError(f"unknown model kind: {kind}")


class BenchRunner:
    def __init__(self, run_config: RunConfig, out_dir: Optional[str] = None, logger: Optional[BenchLogger] = None):
        # 1. 설정 및 로거 초기화
        self.env = Config()
        self.config = run_config
        self.logger = logger or BenchLogger(self.env.LOG_PATH)
        self.repo = BenchRepository(out_dir or self.env.OUT_DIR)
        self.logger.info(f"[CLI] output directory: {self.repo.root}")

    def _echo_config(self):
        self.repo.write_config(self.config.to_dict())

    def _checkpoint_path(self, kind: str, override: Optional[str] = None) -> str:
        return override or self.repo.path(f"checkpoint_{kind}.json")

    def _load(self, path: Optional[str], default: str) -> TrajectoryDataset:
        path = path or default
        self.logger.info(f"[Data] loading {path}")
        return load_dataset(path)

    # ==========================================
    # Commands
    # ==========================================

    def cmd_generate(self) -> Dict[str, float]:
        cfg = self.config.generate
        train, test = SyntheticDataGenerator(cfg, self.logger).fetch_split()
        self.repo.save_split(train, test)
        self._echo_config()
        stats = noise_stats(test)
        print(f"generated {cfg.generator}: train={len(train)} test={len(test)} T={cfg.length} d={cfg.dim} "
              f"noise_var={stats['noise_var']:.6f} measurement_error={stats['measurement_error']:.6f}")
        return {"train": len(train), "test": len(test), "T": cfg.length, "d": cfg.dim, **stats}

    def cmd_train(self, dataset: Optional[str] = None, checkpoint: Optional[str] = None,
                  log: Optional[str] = None):
        section = self.config.train
        train_cfg = section.to_train_config()
        train = self._load(dataset, self.repo.train_file)
        model = build_model(section.model, section.preset, train.dim, train_cfg.seed, section.hidden, train_cfg.lam)

        history = Trainer(train_cfg, self.logger).train(model, train)

        ckpt = self._checkpoint_path(section.model, checkpoint)
        self.repo.save_checkpoint(model, train_cfg, train_cfg.seed, ckpt)
        self.repo.write_training_log(history, log or self.repo.log_file)
        self._echo_config()
        last = history[-1]
        print(f"trained {model.name}: epochs={len(history)} loss={last.loss:.6f} mean_gain={last.mean_gain:.4f}")
        self.logger.info(f"[Train] checkpoint written to {ckpt}")
        return history

    def cmd_eval(self, dataset: Optional[str] = None, checkpoints: Optional[List[str]] = None) -> pd.DataFrame:
        cfg = self.config.eval
        train = self._load(None, self.repo.train_file)
        test = self._load(dataset, self.repo.test_file)
        dt = cfg.dt if cfg.dt is not None else float(test.metadata.get("dt", 1.0))

        methods = self._methods(cfg.methods, cfg.grids(), dt, checkpoints)
        rows = EvalRunner(self.logger).evaluate(methods, train, test)
        frame = self.repo.write_table(rows)
        self._echo_config()
        print(render_table(frame))
        return frame

    def _methods(self, names: List[str], grids, dt: float, checkpoints: Optional[List[str]]) -> Dict[str, IFilterMethod]:
        baselines = baseline_methods(grids, dt=dt, logger=self.logger)
        by_kind = {}
        for path in checkpoints or []:
            model, _ = self.repo.load_checkpoint(path)
            by_kind[model.name] = model
        methods = {}
        for name in names:
            if name in LEARNED:
                model = by_kind.get(name)
                if model is None:
                    model, _ = self.repo.load_checkpoint(self._checkpoint_path(name))
                methods[name] = LearnedMethod(model)
            else:
                methods[name] = baselines[name]
        return methods

    def cmd_gain_curve(self, log: Optional[str] = None) -> pd.DataFrame:
        frame = self.repo.read_training_log(log)[["epoch", "loss", "mean_gain"]]
        self.repo.write_frame(frame, self.repo.gain_curve_file)
        self._echo_config()
        print(f"gain curve: {len(frame)} epochs -> {self.repo.gain_curve_file}")
        return frame

    def cmd_noise_trace(self, checkpoint: Optional[str] = None, dataset: Optional[str] = None,
                        index: Optional[int] = None) -> pd.DataFrame:
        model, _ = self.repo.load_checkpoint(self._checkpoint_path("lstm_kf", checkpoint))
        if not isinstance(model, LstmKf):
            raise ConfigError(f"noise-trace needs an lstm_kf checkpoint, got {model.name}")
        data = self._load(dataset, self.repo.test_file)
        idx = self.config.noise_trace.index if index is None else index
        if not 0 <= idx < len(data):
            raise ConfigError(f"sequence index {idx} out of range [0, {len(data)})")

        trace = filter_sequence(data.sequences[idx].measurements, model.params)
        r_norm = np.linalg.norm(trace.noise_diagonals("R"), axis=1)
        q_norm = np.linalg.norm(trace.noise_diagonals("Q"), axis=1)
        frame = pd.DataFrame({
            "t": np.arange(1, len(trace) + 1),
            "r_norm": r_norm,
            "q_norm": q_norm,
            "r_norm_normalized": _min_max(r_norm),
            "q_norm_normalized": _min_max(q_norm),
        })
        self.repo.write_frame(frame, self.repo.noise_trace_file)
        self._echo_config()
        print(f"noise trace: sequence {idx}, {len(frame)} steps -> {self.repo.noise_trace_file}")
        return frame

    def cmd_crossval(self, dataset: Optional[str] = None) -> pd.DataFrame:
        """앞쪽 sequences 개 시퀀스로 k-fold (학습 모델은 fold 마다 새로 초기화 후 학습)"""
        cv = self.config.crossval
        data = self._load(dataset, self.repo.train_file)
        if len(data) < cv.sequences:
            raise ConfigError(f"crossval needs {cv.sequences} sequences, dataset has {len(data)}")
        data = data.subset(list(range(cv.sequences)))
        section = self.config.train
        train_cfg = section.to_train_config()
        dt = self.config.eval.dt if self.config.eval.dt is not None else float(data.metadata.get("dt", 1.0))

        def factory(fold: int) -> Dict[str, IFilterMethod]:
            baselines = baseline_methods(self.config.eval.grids(), dt=dt, logger=self.logger)
            methods = {}
            for name in cv.methods:
                if name in LEARNED:
                    model = build_model(name, section.preset, data.dim, train_cfg.seed, section.hidden, train_cfg.lam)
                    methods[name] = LearnedMethod(model, Trainer(train_cfg, self.logger))
                else:
                    methods[name] = baselines[name]
            return methods

        per_fold, averaged = EvalRunner(self.logger).cross_validate(data, factory, folds=cv.folds)
        for k, rows in enumerate(per_fold, start=1):
            self.repo.write_table(rows, self.repo.path(f"crossval_fold{k}.csv"), self.repo.path(f"crossval_fold{k}.txt"))
        frame = self.repo.write_table(averaged, self.repo.path("crossval_mean.csv"), self.repo.path("crossval_mean.txt"))
        self._echo_config()
        print(render_table(frame))
        return frame


def _min_max(values: np.ndarray) -> np.ndarray:
    span = float(values.max() - values.min()) if values.size else 0.0
    if span == 0.0:
        return np.zeros_like(values)
    return (values - values.min()) / span


def _one_line(e: Exception) -> str:
    text = str(e).strip()
    return text.splitlines()[0] if text else type(e).__name__


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lstmkf", description="LSTM Kalman Filter desk-scale benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="run config YAML")
        p.add_argument("--seed", type=int, default=None, help="overrides generate/train seeds")
        p.add_argument("--out", default=None, help="output directory")
        return p

    common(sub.add_parser("generate", help="write train/test synthetic datasets"))
    p = common(sub.add_parser("train", help="train lstm_kf or std_lstm"))
    p.add_argument("--dataset", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--log", default=None)
    p = common(sub.add_parser("eval", help="metrics table over the test split"))
    p.add_argument("--dataset", default=None)
    p.add_argument("--checkpoint", action="append", default=None, help="repeatable")
    p = common(sub.add_parser("gain-curve", help="epoch/loss/mean_gain CSV from a training log"))
    p.add_argument("--log", default=None)
    p = common(sub.add_parser("noise-trace", help="per-step |diag(R)| and |diag(Q)| CSV"))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--index", type=int, default=None)
    p = common(sub.add_parser("crossval", help="k-fold low-data protocol"))
    p.add_argument("--dataset", default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logger = BenchLogger(Config().LOG_PATH)
    try:
        run_config = RunConfig.from_yaml(args.config).with_seed(args.seed)
        runner = BenchRunner(run_config, args.out, logger)
        if args.command == "generate":
            runner.cmd_generate()
        elif args.command == "train":
            runner.cmd_train(args.dataset, args.checkpoint, args.log)
        elif args.command == "eval":
            runner.cmd_eval(args.dataset, args.checkpoint)
        elif args.command == "gain-curve":
            runner.cmd_gain_curve(args.log)
        elif args.command == "noise-trace":
            runner.cmd_noise_trace(args.checkpoint, args.dataset, args.index)
        elif args.command == "crossval":
            runner.cmd_crossval(args.dataset)
    except ConfigError as e:
        logger.error(f"[CLI] {args.command} failed:\n{traceback.format_exc()}")
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return 2
    except (LstmKfError, OSError, ValueError) as e:
        logger.error(f"[CLI] {args.command} failed:\n{traceback.format_exc()}")
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
