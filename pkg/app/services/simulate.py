"""Euler–Maruyama 模拟服务

路径按固定大小分块，块 c 使用子流 (seed, STREAM_SIMULATE, stream_id, c)，
块划分与线程数无关，所以任意并行度下结果逐位相同。
超过溢出保护 |x| > 1e8 或出现非有限值的路径被丢弃，不参与任何记录时刻的统计。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import binomtest

from app.core.config import settings
from app.core.exceptions import DomainError, PreconditionError, SimulationException
from app.core.logging import simulate_logger as logger
from app.core.streams import STREAM_SIMULATE, chunk_bounds, resolve_workers, substream
from app.schemas.simulation import HittingEstimate, SimConfig
from app.services.coeff_dsl import ModelSpec


@dataclass(frozen=True, eq=False)
class ChunkResult:
    records: np.ndarray  # (J, n, d)，丢弃的路径为 NaN
    dropped: np.ndarray  # (n,)
    hit: np.ndarray  # (n,)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """各记录时刻的终点样本，只含未丢弃的路径"""

    times: np.ndarray
    samples: np.ndarray  # (J, N_alive, d)
    n_paths: int
    n_dropped: int
    seed: int
    stream_id: int

    @property
    def valid(self) -> bool:
        return self.n_dropped <= settings.MAX_DROP_FRACTION * self.n_paths

    def at(self, j: int) -> np.ndarray:
        return self.samples[j]


def _coefficients(m: ModelSpec, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(b, σ, ok)；求值定义域错误的点标为失败，其余点照常求值"""
    ok = np.ones(X.shape[0], dtype=bool)
    while True:
        idx = np.flatnonzero(ok)
        try:
            b = np.full((X.shape[0], m.d), np.nan)
            s = np.full((X.shape[0], m.d, m.n), np.nan)
            if idx.size:
                b[idx] = m.drift_at(X[idx], strict=False)
                s[idx] = m.diffusion_at(X[idx], strict=False)
            return b, s, ok
        except DomainError as exc:
            if exc.index is None:
                raise
            ok[idx[exc.index]] = False


def _record_events(record: np.ndarray) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """记录步号 → (时刻下标, 路径下标)"""
    J, n = record.shape
    flat = record.ravel()
    steps, inverse = np.unique(flat, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    splits = np.cumsum(np.bincount(inverse, minlength=steps.size))[:-1]
    events = {}
    for step, members in zip(steps.tolist(), np.split(order, splits)):
        events[int(step)] = (members // n, members % n)
    return events


def run_chunk(m: ModelSpec, x_init: np.ndarray, n: int, dt: float, n_steps: int, record: np.ndarray,
              rng: np.random.Generator, ball: Optional[Tuple[np.ndarray, float]] = None,
              stop_on_hit: bool = False) -> ChunkResult:
    """模拟一块 n 条路径

    record: (J, n) 整数数组，record[j, k] 为第 k 条路径在第 j 个记录时刻对应的步号。
    ball:   (中心, 半径)，给出时每一步检查是否进入开球。
    """
    d = m.d
    X = np.tile(np.asarray(x_init, dtype=float), (n, 1))
    J = record.shape[0]
    out = np.full((J, n, d), np.nan)
    active = np.ones(n, dtype=bool)
    dropped = np.zeros(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    events = _record_events(record)
    sqdt = np.sqrt(dt)
    guard = settings.OVERFLOW_GUARD

    for step in range(n_steps + 1):
        if step > 0:
            dW = rng.standard_normal((n, m.n)) * sqdt
            idx = np.flatnonzero(active)
            if idx.size:
                Xa = X[idx]
                b, s, ok = _coefficients(m, Xa)
                with np.errstate(all="ignore"):
                    Xn = Xa + b * dt + np.einsum("kij,kj->ki", s, dW[idx])
                    blow = ~ok | ~np.isfinite(Xn).all(axis=1) | (np.linalg.norm(Xn, axis=1) > guard)
                X[idx] = np.where(blow[:, None], Xa, Xn)
                dropped[idx[blow]] = True
                active[idx[blow]] = False
        if ball is not None:
            center, radius = ball
            inside = active & (np.linalg.norm(X - center, axis=1) < radius)
            hit |= inside
            if stop_on_hit:
                active &= ~inside
        if step in events:
            jj, kk = events[step]
            out[jj, kk] = X[kk]
    out[:, dropped] = np.nan
    return ChunkResult(records=out, dropped=dropped, hit=hit)


def run_chunks(m: ModelSpec, x_init: np.ndarray, n_paths: int, dt: float, n_steps: int,
               record_fn, seed: int, stream_id: int, workers: Optional[int] = None,
               ball=None, stop_on_hit: bool = False) -> List[ChunkResult]:
    bounds = chunk_bounds(n_paths)

    def work(item):
        c, (start, end) = item
        rng = substream(seed, STREAM_SIMULATE, stream_id, c)
        return run_chunk(m, x_init, end - start, dt, n_steps, record_fn(start, end), rng, ball, stop_on_hit)

    n_workers = min(resolve_workers(workers), len(bounds))
    if n_workers <= 1:
        return [work(item) for item in enumerate(bounds)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(work, enumerate(bounds)))


def _check_start(m: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != m.d:
        raise PreconditionError(f"起点维数 {x.size} 与模型维数 {m.d} 不一致", "x")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("起点坐标必须是有限数", "x")
    return x


def em_ensemble(m: ModelSpec, x_init: Sequence[float], cfg: SimConfig, stream_id: int = 0,
                workers: Optional[int] = None) -> EnsembleResult:
    """从同一起点出发的 n_paths 条独立 Euler–Maruyama 路径，记录各 checkpoint 的终点"""
    x = _check_start(m, x_init)
    steps = np.asarray(cfg.checkpoint_steps(), dtype=int)

    def record_fn(start, end):
        return np.repeat(steps[:, None], end - start, axis=1)

    chunks = run_chunks(m, x, cfg.n_paths, cfg.dt, int(steps[-1]), record_fn, cfg.seed, stream_id, workers)
    times = np.asarray(cfg.checkpoints, dtype=float)
    return assemble_ensemble(chunks, times, cfg.n_paths, cfg.seed, stream_id, m.name)


def assemble_ensemble(chunks: List[ChunkResult], times: np.ndarray, n_paths: int, seed: int, stream_id: int,
                      name: str) -> EnsembleResult:
    records = np.concatenate([c.records for c in chunks], axis=1)
    dropped = np.concatenate([c.dropped for c in chunks])
    result = EnsembleResult(times=times, samples=records[:, ~dropped], n_paths=n_paths,
                            n_dropped=int(dropped.sum()), seed=seed, stream_id=stream_id)
    if result.n_dropped:
        level = "INFO" if result.valid else "WARNING"
        logger.log(level, f"[{name}] 子流 {stream_id}: 丢弃 {result.n_dropped}/{n_paths} 条溢出路径")
    if result.samples.shape[1] == 0:
        raise SimulationException(f"[{name}] 所有路径都溢出，请减小 dt", {"n_paths": n_paths})
    return result


def ensemble_stats(result: EnsembleResult) -> pd.DataFrame:
    """各记录时刻的样本均值、方差和标准误差"""
    rows = []
    n = result.samples.shape[1]
    for j, t in enumerate(result.times):
        S = result.samples[j]
        mean = S.mean(axis=0)
        var = S.var(axis=0, ddof=1)
        row = {"t": float(t), "n_alive": n, "n_dropped": result.n_dropped}
        for i in range(S.shape[1]):
            row[f"mean_{i + 1}"] = float(mean[i])
            row[f"var_{i + 1}"] = float(var[i])
            row[f"se_{i + 1}"] = float(np.sqrt(var[i] / n))
        rows.append(row)
    return pd.DataFrame(rows)


def hitting_mc(m: ModelSpec, x: Sequence[float], T: float, cfg: SimConfig, r0: Optional[float] = None,
               stream_id: int = 0, workers: Optional[int] = None) -> HittingEstimate:
    """到时刻 T 为止进入 B_{r0}(x0) 的路径比例，逐步离散检查，附 Wilson 置信区间"""
    x = _check_start(m, x)
    r0 = m.r0 if r0 is None else float(r0)
    center = m.center
    if not np.linalg.norm(x - center) > r0:
        raise PreconditionError(f"起点必须在 B_{{r0}}(x0) 之外: |x-x0|={np.linalg.norm(x - center):.6g}", "x")
    n_steps = int(np.ceil(T / cfg.dt - 1e-9))

    def record_fn(start, end):
        return np.full((1, end - start), n_steps, dtype=int)

    chunks = run_chunks(m, x, cfg.n_paths, cfg.dt, n_steps, record_fn, cfg.seed, stream_id, workers,
                         ball=(center, r0), stop_on_hit=True)
    dropped = np.concatenate([c.dropped for c in chunks])
    hit = np.concatenate([c.hit for c in chunks])
    # 先进入球再溢出的路径已经停止，不会被标为丢弃
    n_valid = int((~dropped).sum())
    n_hit = int((hit & ~dropped).sum())
    if n_valid == 0:
        raise SimulationException("所有路径都溢出，无法估计进入概率", {"n_paths": cfg.n_paths})
    ci = binomtest(n_hit, n_valid).proportion_ci(confidence_level=0.95, method="wilson")
    est = HittingEstimate(
        x=[float(v) for v in x], r0=r0, T=float(T), n_paths=n_valid, n_hit=n_hit,
        n_dropped=int(dropped.sum()), p_hat=n_hit / n_valid, ci_low=float(ci.low), ci_high=float(ci.high),
    )
    logger.info(f"[{m.name}] x={est.x}: 进入概率 {est.p_hat:.4f} [{est.ci_low:.4f}, {est.ci_high:.4f}]")
    return est
