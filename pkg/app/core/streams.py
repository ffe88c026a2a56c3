"""确定性随机子流

所有随机数都来自计数器型 Philox 生成器，子流由 (主种子, 用途, 子流号, 块号)
唯一确定。同一组键在任何并行度下都得到完全相同的随机序列。
"""

import os
from typing import Tuple

import numpy as np

from app.core.config import settings

# 用途编号，避免不同模块的子流重叠
STREAM_SPHERE = 1
STREAM_SIMULATE = 2
STREAM_SUBORDINATOR = 3
STREAM_CHECKS = 4
STREAM_LYAPUNOV = 5
STREAM_TV = 6


def substream(seed: int, *keys: int) -> np.random.Generator:
    """返回由种子和键序列确定的 Philox 生成器"""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def chunk_bounds(n_items: int, chunk: int = None) -> Tuple[Tuple[int, int], ...]:
    """按固定块大小切分区间，块划分与工作线程数无关"""
    chunk = chunk or settings.SIM_CHUNK_PATHS
    return tuple((start, min(start + chunk, n_items)) for start in range(0, n_items, chunk))


def resolve_workers(workers: int = None) -> int:
    """0 或 None 表示使用全部 CPU 核"""
    workers = settings.WORKERS if workers is None else workers
    if not workers or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def random_directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n 个均匀分布的单位方向，形状 (n, d)"""
    if d == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    dirs = rng.standard_normal((n, d))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def ball_points(d: int, center: np.ndarray, radius: float, n: int, rng: np.random.Generator,
                inner: float = 0.0) -> np.ndarray:
    """半径在 [inner, radius] 上分层、方向随机的采样点"""
    radii = inner + (radius - inner) * (np.arange(n) + rng.random(n)) / n
    return np.asarray(center, dtype=float) + radii[:, None] * random_directions(d, n, rng)
