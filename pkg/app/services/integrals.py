"""Λ 的对数域积分表

内层 J(u) = ∫_u^∞ e^{I(v)}/γ(v) dv，外层被积函数 F(u) = e^{-I(u)} J(u)。
I 在多项式漂移下可达 10^{20} 量级，因此内层以 G = log J - I 的形式递推，
只用局部增量 dI，不做大数相减。截断半径以外的部分由尾部拟合解析外推。
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from app.core.config import settings
from app.core.exceptions import PreconditionError
from app.schemas.certificate import TailModel
from app.services.quadrature import log_segment_integrals
from app.services.radial import RadialProfile


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def classify_tail(samples: Sequence[Tuple[float, float]], exponent: Optional[float] = None,
                  slope_tol: Optional[float] = None, min_samples: Optional[int] = None) -> TailModel:
    """对尾部样本 (r, log f(r)) 做幂律与指数两类最小二乘拟合

    幂律斜率 ≥ -1 - slope_tol 或指数增长判为发散。样本全为 -∞ 时视为零尾部，收敛。

    Raises:
        PreconditionError: 样本少于 min_samples 或跨度不足一个数量级
    """
    slope_tol = settings.TAIL_SLOPE_TOL if slope_tol is None else slope_tol
    min_samples = settings.TAIL_MIN_SAMPLES if min_samples is None else min_samples
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    r, logf = data[:, 0], data[:, 1]
    if r.size < min_samples:
        raise PreconditionError(f"尾部样本数 {r.size} 少于 {min_samples}", "samples")
    if not (r.min() > 0 and r.max() / r.min() >= 10.0 * (1 - 1e-12)):
        raise PreconditionError("尾部样本的半径跨度不足一个数量级", "samples")

    keep = np.isfinite(logf)
    if not keep.any():
        return TailModel(kind="zero", divergent=False, n_samples=int(r.size),
                         r_min=float(r.min()), r_max=float(r.max()))
    r, logf = r[keep], logf[keep]

    X = np.column_stack([np.ones_like(r), np.log(r)])
    coef, *_ = np.linalg.lstsq(X, logf, rcond=None)
    power_res = _rms(logf - X @ coef)
    best = TailModel(
        kind="power", slope=float(coef[1]), intercept=float(coef[0]), residual=power_res,
        power_residual=power_res, divergent=bool(coef[1] >= -1.0 - slope_tol),
        n_samples=int(r.size), r_min=float(r.min()), r_max=float(r.max()),
    )

    if exponent is not None and exponent > 0:
        scale = r.max()
        z = (r / scale) ** exponent
        Z = np.column_stack([np.ones_like(z), z])
        ecoef, *_ = np.linalg.lstsq(Z, logf, rcond=None)
        exp_res = _rms(logf - Z @ ecoef)
        rate = float(ecoef[1] / scale ** exponent)
        best.exp_residual = exp_res
        if exp_res < power_res and rate != 0.0:
            best = TailModel(
                kind="exp-decay" if rate < 0 else "exp-growth",
                rate=rate, exponent=float(exponent), intercept=float(ecoef[0]),
                residual=exp_res, power_residual=power_res, exp_residual=exp_res,
                divergent=bool(rate > 0), n_samples=int(r.size),
                r_min=float(r.min()), r_max=float(r.max()),
            )
    return best


def log_remainder(tail: Optional[TailModel], R: float, log_f_end: float) -> float:
    """log ∫_R^∞ f，f 的尾部按拟合模型外推；发散返回 +∞，无模型返回 -∞（截断）"""
    if tail is None or tail.kind == "zero":
        return -np.inf
    if tail.divergent:
        return np.inf
    if tail.kind == "power":
        return log_f_end + np.log(R) - np.log(-tail.slope - 1.0)
    q = tail.exponent
    return log_f_end - np.log(abs(tail.rate) * q) - (q - 1.0) * np.log(R)


def tail_window(grid: np.ndarray) -> np.ndarray:
    """最后一个数量级 [Rmax/10, Rmax] 内的节点下标"""
    return np.flatnonzero(grid >= grid[-1] / 10.0)


def leading_exponent(grid: np.ndarray, iota: np.ndarray) -> Optional[float]:
    """从 |ι| 的增长估计漂移的主导幂次 q（I ~ r^q）；ι 有界时返回 None"""
    idx = tail_window(grid)
    vals = np.abs(iota[idx])
    ok = vals > 0
    if ok.sum() < 3 or grid[idx][-1] / grid[idx][0] < 2.0:
        return None
    slope = np.polyfit(np.log(grid[idx][ok]), np.log(vals[ok]), 1)[0]
    return float(slope) if slope > 0.25 else None


def try_classify(grid: np.ndarray, logf: np.ndarray, exponent: Optional[float]) -> Optional[TailModel]:
    """窗口不足一个数量级时返回 None"""
    idx = tail_window(grid)
    if idx.size < settings.TAIL_MIN_SAMPLES or grid[idx][-1] / grid[idx][0] < 10.0 * (1 - 1e-12):
        return None
    return classify_tail(np.column_stack([grid[idx], logf[idx]]), exponent)


def _stencil(vals: np.ndarray, h: float) -> np.ndarray:
    """相邻节点之间的对数域区间积分，vals 为 t 空间被积函数的对数"""
    m = vals.size
    a = vals[:-1]
    b = vals[1:]
    c = np.empty(m - 1)
    c[:-1] = vals[2:]
    c[-1] = vals[-3] if m >= 3 else vals[-1]
    last = np.zeros(m - 1, dtype=bool)
    last[-1] = True
    return log_segment_integrals(a, b, c, h, last)


@dataclass(frozen=True, eq=False)
class InnerTable:
    """G_k = log J(r_k) - I(r_k)，J 含截断外的尾部余项"""

    G: np.ndarray
    tail: Optional[TailModel]
    divergent: bool
    exponent: Optional[float]


def inner_table(p: RadialProfile, extrapolate: bool = True) -> InnerTable:
    """预计算内层积分表，之后每次查询 O(1)"""
    t = p.t
    lg = np.log(p.gamma)
    dI = p.dI
    m = p.M

    # 区间 k 的三点对数值，统一相对于 I_k
    a = -lg[:-1] + t[:-1]
    b = dI - lg[1:] + t[1:]
    c = np.empty(m - 1)
    c[:-1] = dI[:-1] + dI[1:] - lg[2:] + t[2:]
    c[-1] = -dI[-2] - lg[-3] + t[-3]
    last = np.zeros(m - 1, dtype=bool)
    last[-1] = True
    seg = log_segment_integrals(a, b, c, p.h, last)

    q = leading_exponent(p.grid, p.iota)
    tail = None
    if extrapolate:
        tail = try_classify(p.grid, p.I - lg, q)
    divergent = bool(tail is not None and tail.divergent)

    G = np.empty(m)
    G[-1] = -np.inf if divergent else log_remainder(tail, p.Rmax, -lg[-1])
    seg_l = seg.tolist()
    dI_l = dI.tolist()
    g = float(G[-1])
    for k in range(m - 2, -1, -1):
        g = float(np.logaddexp(seg_l[k], g + dI_l[k]))
        G[k] = g
    return InnerTable(G=G, tail=tail, divergent=divergent, exponent=q)


def inner_integral(p: RadialProfile, u: float, extrapolate: bool = True,
                   table: Optional[InnerTable] = None) -> float:
    """log J(u)

    extrapolate=False 时返回截断积分 ∫_u^{Rmax}；内层尾部发散时返回 +∞。
    """
    if not (p.grid[0] * (1 - 1e-12) <= u <= p.Rmax * (1 + 1e-12)):
        raise PreconditionError(f"u={u} 超出剖面范围 [{p.grid[0]}, {p.Rmax}]", "u")
    table = table or inner_table(p, extrapolate)
    if table.divergent:
        return float("inf")
    tu = np.log(u)
    G_u = float(np.interp(tu, p.t, table.G))
    return G_u + float(p.I_at(u))


@dataclass(frozen=True, eq=False)
class OuterTable:
    """外层被积函数 log F 以及累积积分 log L̄"""

    logF: np.ndarray
    log_lbar: np.ndarray
    truncated: float
    tail: Optional[TailModel]
    log_remainder: float
    divergent: bool


def outer_table(p: RadialProfile, inner: InnerTable, extrapolate: bool = True) -> OuterTable:
    logF = inner.G
    seg = _stencil(logF + p.t, p.h)
    log_lbar = np.concatenate(([-np.inf], np.logaddexp.accumulate(seg)))
    truncated = float(np.exp(logsumexp(seg)))
    tail = try_classify(p.grid, logF, inner.exponent) if extrapolate else None
    divergent = bool(tail is not None and tail.divergent)
    rem = log_remainder(tail, p.Rmax, float(logF[-1])) if tail is not None else -np.inf
    return OuterTable(logF=logF, log_lbar=log_lbar, truncated=truncated, tail=tail,
                      log_remainder=float(rem), divergent=divergent)
