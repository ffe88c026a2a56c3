"""从属子与从属过程 X(S(t))

- stable(α):  增量 Δ^{1/α}·S1，S1 由 Kanter 表示生成:
              S1 = sin(αU)/(sin U)^{1/α} · (sin((1-α)U)/E)^{(1-α)/α}，U ~ Unif(0,π)，E ~ Exp(1)
- compound_poisson(λ, m): 区间内跳数 ~ Poisson(λΔ)，指数跳之和 ~ Gamma(跳数, m)
- drift_compound(θ, λ, m): θΔ 加上复合 Poisson 部分

从属过程逐路径做时间变换：在同一步长网格上模拟到随机时刻 S(t)。
"""

from typing import Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import PreconditionError
from app.core.logging import subordinator_logger as logger
from app.core.streams import STREAM_SUBORDINATOR, substream
from app.schemas.simulation import SimConfig, SubordinatorSpec
from app.services.coeff_dsl import ModelSpec
from app.services.simulate import assemble_ensemble, run_chunks
from app.services.tv import TVCurve, curve_from_ensembles


def stable_variates(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """E[e^{-βS}] = e^{-β^α} 的单侧稳定变量"""
    if not (0 < alpha < 1):
        raise PreconditionError(f"稳定指数 alpha_s={alpha} 必须在 (0,1) 内", "alpha_s")
    U = np.pi * rng.random(size)
    E = rng.exponential(1.0, size)
    with np.errstate(divide="ignore", over="ignore"):
        t1 = np.sin(alpha * U) / np.sin(U) ** (1.0 / alpha)
        t2 = (np.sin((1.0 - alpha) * U) / E) ** ((1.0 - alpha) / alpha)
    return t1 * t2


def _compound(rate: float, mean: float, dt: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    counts = rng.poisson(rate * dt[None, :], size=(n, dt.size))
    return rng.gamma(shape=counts, scale=mean)


def subordinator_paths(s: SubordinatorSpec, cfg: SimConfig, n_paths: Optional[int] = None,
                       stream_id: int = 0) -> np.ndarray:
    """各 checkpoint 处的 S(t)，形状 (n_paths, J)，每行非降且从 0 出发"""
    n = n_paths or cfg.n_paths
    times = np.asarray(cfg.checkpoints, dtype=float)
    dt = np.diff(np.concatenate(([0.0], times)))
    rng = substream(cfg.seed, STREAM_SUBORDINATOR, stream_id)
    if s.kind == "stable":
        inc = dt[None, :] ** (1.0 / s.alpha_s) * stable_variates(s.alpha_s, (n, dt.size), rng)
    elif s.kind == "compound_poisson":
        inc = _compound(s.jump_rate, s.jump_mean, dt, n, rng)
    else:
        inc = np.broadcast_to(s.drift * dt, (n, dt.size)).copy()
        if s.jump_rate > 0:
            inc += _compound(s.jump_rate, s.jump_mean, dt, n, rng)
    return np.cumsum(np.maximum(inc, 0.0), axis=1)


def laplace_exponent(s: SubordinatorSpec, beta: float) -> float:
    """φ(β)，E[e^{-βS(t)}] = e^{-tφ(β)}"""
    if beta < 0:
        raise PreconditionError("β 必须非负", "beta")
    if s.kind == "stable":
        return float(beta ** s.alpha_s)
    jump = s.jump_rate * s.jump_mean * beta / (1.0 + s.jump_mean * beta)
    if s.kind == "compound_poisson":
        return float(jump)
    return float(s.drift * beta + jump)


def subordinate_tv(m: ModelSpec, s: SubordinatorSpec, start_grid, x_ref, cfg: SimConfig,
                   bins: Optional[int] = None, workers: Optional[int] = None) -> TVCurve:
    """X(S(t)) 的一致 TV 曲线

    同一组从属子样本在参考起点和所有起点之间共享；S(t) 超过 SUBORDINATE_HORIZON_FACTOR·T
    的路径按上限截断并计数。
    """
    starts = np.atleast_2d(np.asarray(start_grid, dtype=float))
    if starts.size == 0:
        raise PreconditionError("起点网格不能为空", "start_grid")
    starts = starts.reshape(-1, m.d)
    x_ref = np.asarray(x_ref, dtype=float).reshape(m.d)

    S = subordinator_paths(s, cfg)
    cap = settings.SUBORDINATE_HORIZON_FACTOR * cfg.T
    n_capped = int((S > cap).sum())
    record = np.rint(np.minimum(S, cap) / cfg.dt).astype(int).T  # (J, n_paths)
    n_steps = int(record.max())
    if n_capped:
        logger.warning(f"[{m.name}] {n_capped} 个 S(t) 样本超过上限 {cap:.6g}，已截断")

    def record_fn(start, end):
        return record[:, start:end]

    times = np.asarray(cfg.checkpoints, dtype=float)

    def ensemble(x, stream_id):
        chunks = run_chunks(m, x, cfg.n_paths, cfg.dt, n_steps, record_fn, cfg.seed, stream_id, workers)
        return assemble_ensemble(chunks, times, cfg.n_paths, cfg.seed, stream_id, m.name)

    ref = ensemble(x_ref, 0)
    ensembles = [ensemble(x, i + 1) for i, x in enumerate(starts)]
    extra = {
        "subordinator": s.model_dump(),
        "subordinator_stream": 0,
        "paired_subordinator": True,
        "horizon_cap": cap,
        "n_capped": n_capped,
        "mean_S": [float(v) for v in np.minimum(S, cap).mean(axis=0)],
    }
    return curve_from_ensembles(m, starts, x_ref, ref, ensembles, cfg, bins, extra)
