# src/utils/rng.py
"""
재현 가능한 난수 스트림.

- 비트 생성기: numpy Philox (Random123 Philox-4x64, counter-based)
- 정규분포: Box-Muller 변환. u1, u2 = Generator.random() 두 묶음,
  z = concat(r*cos(2πu2), r*sin(2πu2)), r = sqrt(-2 ln(1-u1))
- 시드 파생: SeedSequence([seed, *labels]) 의 첫 64bit 워드
"""
from typing import Tuple, Union

import numpy as np

Shape = Union[int, Tuple[int, ...]]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(seed: int, *labels: int) -> int:
    """(seed, label...) 조합으로 독립 스트림용 시드 생성"""
    state = np.random.SeedSequence([int(seed), *[int(x) for x in labels]]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def standard_normal(rng: np.random.Generator, shape: Shape) -> np.ndarray:
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1] -> log 안전
    u2 = rng.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]
    return z.reshape(shape)


def uniform(rng: np.random.Generator, low: float, high: float, shape: Shape) -> np.ndarray:
    return low + (high - low) * rng.random(shape)
