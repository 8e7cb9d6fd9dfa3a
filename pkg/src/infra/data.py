# src/infra/data.py
"""
시드 고정 합성 궤적 생성기.

- 시퀀스 i 의 난수 스트림: make_rng(derive_seed(seed, i))
- burst 재샘플링 스트림:   make_rng(derive_seed(burst_seed, BURST_LABEL, i))
- q, r 은 분산. burst 구간에서는 측정 노이즈 표준편차에 scale 을 곱한다.
metadata 만으로 regenerate_dataset 이 같은 데이터를 비트 단위로 다시 만든다.
"""
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.core.interfaces import IDataProvider
from src.core.kalman import build_cv_model, initial_belief, kf_predict, kf_update
from src.core.models import BurstSpec, LinearKfModel, TrajectoryDataset, TrajectorySequence
from src.utils.calculator import ErrorCalculator
from src.utils.rng import derive_seed, make_rng, standard_normal

GENERATORS = ("linear_cv", "oscillator")
BURST_LABEL = 7
TRAIN_LABEL, TEST_LABEL = 0, 1


def _check_counts(d: int, T: int, n_seq: int):
    if d < 1 or T < 1 or n_seq < 1:
        raise ValueError(f"generator: d, T, n_seq must be >= 1, got d={d}, T={T}, n_seq={n_seq}")


def gen_linear_cv(d: int, T: int, n_seq: int, q: float, r: float, dt: float = 1.0, seed: int = 0) -> TrajectoryDataset:
    """
    build_cv_model 을 그대로 시뮬레이션.
    x_1 ~ N(0, I), x_{t+1} = A x_t + w (w 는 속도 블록에만 분산 q), z_t = pose_t + N(0, r I)
    """
    _check_counts(d, T, n_seq)
    if q < 0 or r < 0:
        raise ValueError(f"gen_linear_cv: q, r must be >= 0, got q={q}, r={r}")
    model = build_cv_model(d, dt, q, r)
    sequences = []
    for i in range(n_seq):
        rng = make_rng(derive_seed(seed, i))
        x = standard_normal(rng, 2 * d)
        process = np.sqrt(q) * standard_normal(rng, (T, d))
        noise = np.sqrt(r) * standard_normal(rng, (T, d))
        truth = np.empty((T, d))
        for t in range(T):
            if t > 0:
                x = model.A @ x
                x[d:] += process[t]
            truth[t] = x[:d]
        sequences.append(TrajectorySequence(truth, truth + noise))
    meta = {"generator": "linear_cv", "d": d, "T": T, "n_seq": n_seq, "q": q, "r": r, "dt": dt, "seed": int(seed)}
    return TrajectoryDataset(sequences, meta)


def gen_oscillator(d: int, T: int, n_seq: int, amplitude: float, frequency: float, r: float, seed: int = 0,
                   dt: float = 0.1) -> TrajectoryDataset:
    """
    축 k 마다 amplitude * sin(2π f m_k t dt + φ_k), m_k = 1, 2, 1, 2, ... (Lissajous).
    φ_k ~ U[0, 2π) 는 시퀀스마다 새로 뽑는다.
    """
    _check_counts(d, T, n_seq)
    if amplitude <= 0 or frequency <= 0:
        raise ValueError(f"gen_oscillator: amplitude and frequency must be > 0, got {amplitude}, {frequency}")
    if r < 0 or dt <= 0:
        raise ValueError(f"gen_oscillator: r must be >= 0 and dt > 0, got r={r}, dt={dt}")
    multipliers = np.array([k % 2 + 1 for k in range(d)], dtype=np.float64)
    steps = np.arange(T, dtype=np.float64)[:, None] * dt
    sequences = []
    for i in range(n_seq):
        rng = make_rng(derive_seed(seed, i))
        phases = 2.0 * np.pi * rng.random(d)
        truth = amplitude * np.sin(2.0 * np.pi * frequency * multipliers * steps + phases)
        noise = np.sqrt(r) * standard_normal(rng, (T, d))
        sequences.append(TrajectorySequence(truth, truth + noise))
    meta = {"generator": "oscillator", "d": d, "T": T, "n_seq": n_seq, "amplitude": amplitude,
            "frequency": frequency, "r": r, "dt": dt, "seed": int(seed)}
    return TrajectoryDataset(sequences, meta)


def apply_bursts(dataset: TrajectoryDataset, spec: BurstSpec, seed: int = 0) -> TrajectoryDataset:
    """측정 노이즈를 새로 뽑되 burst 구간에서는 표준편차 x scale. truth 는 그대로"""
    if "r" not in dataset.metadata:
        raise ValueError("apply_bursts: dataset metadata has no measurement noise 'r'")
    spec.validate(dataset.length)
    r = float(dataset.metadata["r"])
    sequences = []
    for i, seq in enumerate(dataset.sequences):
        spec.validate(seq.length)
        rng = make_rng(derive_seed(seed, BURST_LABEL, i))
        std = np.where(spec.mask(seq.length), spec.scale, 1.0)[:, None] * np.sqrt(r)
        noise = std * standard_normal(rng, (seq.length, seq.dim))
        sequences.append(TrajectorySequence(seq.truth.copy(), seq.truth + noise))
    meta = {**dataset.metadata,
            "bursts": {"starts": list(spec.starts), "ends": list(spec.ends), "scale": spec.scale, "seed": int(seed)}}
    return TrajectoryDataset(sequences, meta)


def burst_spec_from(metadata: Dict[str, Any]) -> Optional[BurstSpec]:
    bursts = metadata.get("bursts")
    if not bursts:
        return None
    return BurstSpec([int(s) for s in bursts["starts"]], [int(e) for e in bursts["ends"]], float(bursts["scale"]))


def regenerate_dataset(metadata: Dict[str, Any]) -> TrajectoryDataset:
    """metadata -> 동일 데이터셋"""
    try:
        generator = metadata["generator"]
        if generator == "linear_cv":
            dataset = gen_linear_cv(int(metadata["d"]), int(metadata["T"]), int(metadata["n_seq"]),
                                    float(metadata["q"]), float(metadata["r"]), float(metadata["dt"]),
                                    int(metadata["seed"]))
        elif generator == "oscillator":
            dataset = gen_oscillator(int(metadata["d"]), int(metadata["T"]), int(metadata["n_seq"]),
                                     float(metadata["amplitude"]), float(metadata["frequency"]),
                                     float(metadata["r"]), int(metadata["seed"]), float(metadata["dt"]))
        else:
            raise ValueError(f"unknown generator: {generator}")
    except KeyError as e:
        raise ValueError(f"regenerate_dataset: metadata missing {e}") from None
    spec = burst_spec_from(metadata)
    if spec is not None:
        dataset = apply_bursts(dataset, spec, int(metadata["bursts"]["seed"]))
    extra = {k: v for k, v in metadata.items() if k not in dataset.metadata}
    dataset.metadata.update(extra)
    return dataset


def oracle_error(dataset: TrajectoryDataset) -> float:
    """
    참 모델 (A, Q, R) 로 돌린 고전 KF 의 평균 유클리드 오차 (달성 가능한 하한).
    burst 가 있으면 해당 step 의 R 도 scale^2 배.
    """
    meta = dataset.metadata
    if meta.get("generator") != "linear_cv":
        raise ValueError("oracle_error: dataset metadata does not identify a linear_cv model")
    try:
        d, q, r, dt = int(meta["d"]), float(meta["q"]), float(meta["r"]), float(meta["dt"])
    except KeyError as e:
        raise ValueError(f"oracle_error: metadata missing {e}") from None

    truths = [seq.truth for seq in dataset.sequences]
    if r == 0.0:
        # 측정이 곧 참값
        return ErrorCalculator().mean_error(truths, [seq.measurements for seq in dataset.sequences])

    model = build_cv_model(d, dt, q, r)
    spec = burst_spec_from(meta)
    estimates = []
    for seq in dataset.sequences:
        scales = np.where(spec.mask(seq.length), spec.scale ** 2, 1.0) if spec else np.ones(seq.length)
        belief = initial_belief(seq.measurements[0], model)
        out = np.empty_like(seq.measurements)
        for t in range(seq.length):
            step_model = model if scales[t] == 1.0 else LinearKfModel(model.A, model.H, model.Q, model.R * scales[t])
            belief = kf_update(kf_predict(belief, step_model), seq.measurements[t], step_model)
            out[t] = (model.H @ belief.mean).ravel()
        estimates.append(out)
    return ErrorCalculator().mean_error(truths, estimates)


def generate(generator: str, d: int, T: int, n_seq: int, seed: int, q: float = 0.01, r: float = 1.0,
             dt: float = 1.0, amplitude: float = 1.0, frequency: float = 0.05) -> TrajectoryDataset:
    if generator == "linear_cv":
        return gen_linear_cv(d, T, n_seq, q, r, dt, seed)
    if generator == "oscillator":
        return gen_oscillator(d, T, n_seq, amplitude, frequency, r, seed, dt)
    raise ValueError(f"unknown generator: {generator} (expected one of {GENERATORS})")


class SyntheticDataGenerator(IDataProvider):
    def __init__(self, config, logger):
        """
        :param config: src.config.GenerateConfig
        :param logger: src.utils.logger.BenchLogger
        """
        self.config = config
        self.logger = logger

    def _make(self, n_seq: int, label: int, split: str) -> TrajectoryDataset:
        cfg = self.config
        dataset = generate(cfg.generator, cfg.dim, cfg.length, n_seq, derive_seed(cfg.seed, label),
                           q=cfg.q, r=cfg.r, dt=cfg.dt, amplitude=cfg.amplitude, frequency=cfg.frequency)
        if cfg.bursts:
            spec = BurstSpec(list(cfg.bursts["starts"]), list(cfg.bursts["ends"]), float(cfg.bursts.get("scale", 10.0)))
            dataset = apply_bursts(dataset, spec, derive_seed(cfg.seed, label, BURST_LABEL))
        dataset.metadata["split"] = split
        return dataset

    def fetch_split(self) -> Tuple[TrajectoryDataset, TrajectoryDataset]:
        cfg = self.config
        self.logger.info(f"[Data] Generating {cfg.generator}: d={cfg.dim}, T={cfg.length}, "
                         f"train={cfg.n_train}, test={cfg.n_test}, seed={cfg.seed}")
        try:
            train = self._make(cfg.n_train, TRAIN_LABEL, "train")
            test = self._make(cfg.n_test, TEST_LABEL, "test")
        except ValueError as e:
            self.logger.error(f"[Data] ❌ Generation failed: {e}")
            raise
        self.logger.info(f"[Data] ✅ Generated {len(train)} train / {len(test)} test sequences")
        return train, test


def noise_stats(dataset: TrajectoryDataset) -> Dict[str, float]:
    """측정 오차 (z - y) 요약"""
    errors: List[np.ndarray] = [seq.measurements - seq.truth for seq in dataset.sequences]
    stacked = np.concatenate(errors) if errors else np.zeros((0, 1))
    return {
        "noise_var": float(np.var(stacked)) if stacked.size else 0.0,
        "measurement_error": ErrorCalculator().mean_error(
            [seq.truth for seq in dataset.sequences], [seq.measurements for seq in dataset.sequences]),
    }
