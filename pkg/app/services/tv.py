"""全变差（TV）距离估计与一致衰减曲线

d ≤ 3: 两样本在公共网格上的直方图 ½·L1 距离，每维按合并样本的 Freedman–Diaconis 规则分箱
d > 3: 固定随机投影上一维直方图 TV 的最大值，只是下界诊断

TV(P, Q) = ½ Σ_i |P_i - Q_i|
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.exceptions import FitRefused, PreconditionError
from app.core.logging import tv_logger as logger
from app.core.streams import STREAM_TV, random_directions, substream
from app.schemas.simulation import ExpFit, SimConfig, TVMetadata
from app.services.coeff_dsl import ModelSpec
from app.services.simulate import em_ensemble


_MAX_CELLS = 2 ** 18


def noise_floor(n_a: int, n_b: int, n_bins: int) -> float:
    """同分布两样本的直方图 TV 期望上界 ½·sqrt(2B(1/n_a + 1/n_b)/π)"""
    return 0.5 * float(np.sqrt(2.0 * n_bins * (1.0 / n_a + 1.0 / n_b) / np.pi))


def _check_samples(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a.reshape(-1, 1) if a.ndim == 1 else a
    b = b.reshape(-1, 1) if b.ndim == 1 else b
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise PreconditionError("TV 估计的样本不能为空", "samples")
    if a.shape[1] != b.shape[1]:
        raise PreconditionError(f"样本维数不一致: {a.shape[1]} vs {b.shape[1]}", "samples")
    n_min = settings.TV_MIN_SAMPLES
    if min(a.shape[0], b.shape[0]) < n_min:
        raise PreconditionError(f"TV 估计每个样本至少需要 {n_min} 个点", "samples")
    return a, b


def _edges(pooled: np.ndarray, bins: Optional[int], cap: int) -> np.ndarray:
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        return np.array([lo - 0.5, hi + 0.5])
    if bins is not None:
        return np.linspace(lo, hi, int(bins) + 1)
    edges = np.histogram_bin_edges(pooled, bins="fd")
    if edges.size - 1 > cap:
        edges = np.linspace(lo, hi, cap + 1)
    return edges


def _histogram_tv(a: np.ndarray, b: np.ndarray, bins: Optional[int]) -> Tuple[float, list, int]:
    d = a.shape[1]
    cap = min(settings.TV_MAX_BINS, int(_MAX_CELLS ** (1.0 / d)))
    pooled = np.vstack([a, b])
    edges = [_edges(pooled[:, i], bins, cap) for i in range(d)]
    ha, _ = np.histogramdd(a, bins=edges)
    hb, _ = np.histogramdd(b, bins=edges)
    p = ha.ravel() / a.shape[0]
    q = hb.ravel() / b.shape[0]
    occupied = int(np.count_nonzero((p > 0) | (q > 0)))
    value = 0.5 * float(np.abs(p - q).sum())
    return min(max(value, 0.0), 1.0), [e.size - 1 for e in edges], occupied


def estimate_tv(sample_a, sample_b, bins: Optional[int] = None, n_projections: Optional[int] = None,
                seed: Optional[int] = None) -> Tuple[float, TVMetadata]:
    """TV 估计值和估计量元数据"""
    a, b = _check_samples(sample_a, sample_b)
    d = a.shape[1]
    if d <= 3:
        value, n_bins, occupied = _histogram_tv(a, b, bins)
        meta = TVMetadata(method="histogram", bins=n_bins, n_a=a.shape[0], n_b=b.shape[0],
                          noise_floor=noise_floor(a.shape[0], b.shape[0], max(occupied, 1)))
        return value, meta

    n_projections = n_projections or settings.TV_PROJECTIONS
    rng = substream(settings.SEED if seed is None else seed, STREAM_TV, d)
    U = random_directions(d, n_projections, rng)
    best, best_bins, best_occ = 0.0, [1], 1
    for u in U:
        value, n_bins, occupied = _histogram_tv((a @ u)[:, None], (b @ u)[:, None], bins)
        if value > best:
            best, best_bins, best_occ = value, n_bins, occupied
    meta = TVMetadata(method="projection", bins=best_bins, n_projections=n_projections, lower_bound=True,
                      n_a=a.shape[0], n_b=b.shape[0],
                      noise_floor=noise_floor(a.shape[0], b.shape[0], max(best_occ, 1)))
    return best, meta


def tv_estimate(sample_a, sample_b, bins: Optional[int] = None, n_projections: Optional[int] = None,
                seed: Optional[int] = None) -> float:
    """两样本 TV 距离估计，取值 [0, 1]"""
    return estimate_tv(sample_a, sample_b, bins, n_projections, seed)[0]


@dataclass(eq=False)
class TVCurve:
    """各起点相对参考起点的 TV 曲线及其上确界"""

    times: np.ndarray
    starts: np.ndarray  # (S, d)
    tv: np.ndarray  # (S, J)
    sup_tv: np.ndarray  # (J,)
    noise_floor: np.ndarray  # (J,)
    metadata: Dict[str, Any] = field(default_factory=dict)
    fit: Optional[ExpFit] = None

    @classmethod
    def from_sup(cls, times: Sequence[float], sup_tv: Sequence[float], noise: float = 0.0) -> "TVCurve":
        """只有上确界曲线的合成曲线"""
        times = np.asarray(times, dtype=float)
        sup = np.asarray(sup_tv, dtype=float)
        return cls(times=times, starts=np.zeros((1, 1)), tv=sup[None, :].copy(), sup_tv=sup,
                   noise_floor=np.full(times.shape, float(noise)), metadata={"synthetic": True})

    def monotone_excess(self, factor: float = 2.0) -> float:
        """sup_tv 相邻时刻的最大上升量减去 factor 倍噪声下限，≤ 0 即视为不增"""
        if self.times.size < 2:
            return 0.0
        rise = np.diff(self.sup_tv) - factor * np.maximum(self.noise_floor[1:], self.noise_floor[:-1])
        return float(rise.max())

    def to_frames(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """(逐起点曲线, 上确界曲线)"""
        rows = []
        S, J = self.tv.shape
        d = self.starts.shape[1]
        for i in range(S):
            for j in range(J):
                row = {"t": float(self.times[j]), "start_index": i}
                for k in range(d):
                    row[f"start_{k + 1}"] = float(self.starts[i, k])
                row["tv"] = float(self.tv[i, j])
                rows.append(row)
        per_start = pd.DataFrame(rows)
        sup = pd.DataFrame({"t": self.times, "sup_tv": self.sup_tv, "noise_floor": self.noise_floor})
        return per_start, sup


def uniform_tv_curve(m: ModelSpec, start_grid: Sequence[Sequence[float]], x_ref: Sequence[float],
                     cfg: SimConfig, bins: Optional[int] = None, workers: Optional[int] = None) -> TVCurve:
    """sup_x TV(p(t,x,·), p(t,x_ref,·)) 在起点网格上的代理

    参考起点用子流 0，第 i 个起点用子流 i+1，噪声相互独立。
    """
    starts = np.atleast_2d(np.asarray(start_grid, dtype=float))
    if starts.size == 0:
        raise PreconditionError("起点网格不能为空", "start_grid")
    if starts.shape[1] != m.d:
        starts = starts.reshape(-1, m.d)
    ref = em_ensemble(m, x_ref, cfg, stream_id=0, workers=workers)
    ensembles = [em_ensemble(m, s, cfg, stream_id=i + 1, workers=workers) for i, s in enumerate(starts)]
    return curve_from_ensembles(m, starts, x_ref, ref, ensembles, cfg, bins, extra={})


def curve_from_ensembles(m: ModelSpec, starts: np.ndarray, x_ref, ref, ensembles, cfg: SimConfig,
                         bins: Optional[int], extra: Dict[str, Any]) -> TVCurve:
    J = len(ref.times)
    S = len(ensembles)
    tv = np.empty((S, J))
    floor = np.zeros(J)
    method = None
    for i, ens in enumerate(ensembles):
        for j in range(J):
            value, meta = estimate_tv(ens.at(j), ref.at(j), bins=bins, seed=cfg.seed)
            tv[i, j] = value
            floor[j] = max(floor[j], meta.noise_floor)
            method = meta
    metadata = {
        "estimator": method.method if method else None,
        "lower_bound": bool(method.lower_bound) if method else False,
        "bins": bins,
        "seed": cfg.seed,
        "streams": {"reference": 0, "starts": list(range(1, S + 1))},
        "x_ref": [float(v) for v in np.asarray(x_ref, dtype=float).reshape(-1)],
        "n_dropped": [ref.n_dropped] + [e.n_dropped for e in ensembles],
        "valid": bool(ref.valid and all(e.valid for e in ensembles)),
        "grid_proxy": True,
    }
    metadata.update(extra)
    curve = TVCurve(times=np.asarray(ref.times, dtype=float), starts=starts, tv=tv, sup_tv=tv.max(axis=0),
                    noise_floor=floor, metadata=metadata)
    logger.info(f"[{m.name}] TV 曲线: sup_tv = {np.array2string(curve.sup_tv, precision=4)}")
    return curve


def fit_exponential(curve: TVCurve) -> ExpFit:
    """在噪声下限以上的点上对 log sup_tv 做线性最小二乘

    Raises:
        FitRefused: 可用点少于 3 个
    """
    t = np.asarray(curve.times, dtype=float)
    y = np.asarray(curve.sup_tv, dtype=float)
    usable = (y > curve.noise_floor) & (y > 0)
    n = int(usable.sum())
    if n < 3:
        raise FitRefused(f"噪声下限以上只有 {n} 个点，至少需要 3 个", n)
    slope, intercept = np.polyfit(t[usable], np.log(y[usable]), 1)
    resid = np.log(y[usable]) - (intercept + slope * t[usable])
    beta = float(-slope)
    fit = ExpFit(
        B_hat=float(np.exp(intercept)),
        beta_hat=beta,
        residual=float(np.sqrt(np.mean(resid ** 2))),
        n_points=n,
        times=[float(v) for v in t[usable]],
        non_decaying=beta <= settings.FIT_FLAT_RATE,
    )
    if fit.non_decaying:
        logger.warning(f"拟合衰减率 β̂={beta:.4g} 不大于 {settings.FIT_FLAT_RATE}，曲线未见衰减")
    return fit
