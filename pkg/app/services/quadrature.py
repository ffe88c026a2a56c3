"""均匀对数网格上的求积工具

网格节点 r_k = r_start · e^{k h}，在 t = ln r 中等距。
- simpson_increments: 每个区间上的二次拟合（Simpson 型）积分增量
- log_segment_integrals: 被积函数以对数给出时的区间积分（对数域）
"""

import numpy as np
from scipy.special import logsumexp


def simpson_increments(y: np.ndarray, h: float) -> np.ndarray:
    """等距节点上逐区间的二次拟合积分

    区间 [t_k, t_{k+1}] 用节点 k, k+1, k+2 的二次插值（最后一个区间用 k-1, k, k+1），
    返回长度 M-1 的增量，累加即得累积积分。
    """
    y = np.asarray(y, dtype=float)
    m = y.size
    if m < 3:
        return 0.5 * h * (y[1:] + y[:-1])
    inc = np.empty(m - 1)
    inc[:-1] = h * (5.0 * y[:-2] + 8.0 * y[1:-1] - y[2:]) / 12.0
    inc[-1] = h * (-y[-3] + 8.0 * y[-2] + 5.0 * y[-1]) / 12.0
    return inc


def cumulative(y: np.ndarray, h: float) -> np.ndarray:
    """从第一个节点开始的累积积分，首项严格为 0"""
    return np.concatenate(([0.0], np.cumsum(simpson_increments(y, h))))


def log_linear_integral(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """对数线性插值下的精确积分 log ∫ exp(a + (b-a)τ/h) dτ"""
    big = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(np.isneginf(big), 0.0, np.abs(b - a))
        factor = np.where(gap > 1e-12, -np.expm1(-gap) / gap, 1.0 - 0.5 * gap)
        return np.log(h) + big + np.log(factor)


def log_segment_integrals(a: np.ndarray, b: np.ndarray, c: np.ndarray, h: float,
                          last: np.ndarray, switch: float = 1.0) -> np.ndarray:
    """对数域中的逐区间积分

    a, b 为区间两端的 log g，c 为第三个节点（一般为右侧下一个，last 为真时为左侧上一个）。
    |b-a| 不超过 switch 时用带符号的 Simpson 权重做 log-sum-exp，否则用对数线性精确积分。
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    last = np.asarray(last, dtype=bool)

    out = log_linear_integral(a, b, h)
    finite = np.isfinite(a) & np.isfinite(b) & np.isfinite(c)
    smooth = finite & (np.abs(b - a) <= switch) & (np.abs(c - b) <= 2.0 * switch)
    if smooth.any():
        wa = np.where(last, 8.0, 5.0)
        wb = np.where(last, 5.0, 8.0)
        # 最后一个区间：-g_{k-1} + 8 g_k + 5 g_{k+1}
        stacked = np.stack([a, b, c], axis=0)[:, smooth]
        weights = np.stack([wa, wb, -np.ones_like(wa)], axis=0)[:, smooth]
        val, sign = logsumexp(stacked, axis=0, b=weights, return_sign=True)
        good = sign > 0
        idx = np.flatnonzero(smooth)[good]
        out[idx] = val[good] + np.log(h / 12.0)
    return out
