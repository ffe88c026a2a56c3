"""径向泛函模块

逐点泛函:
- A(x) = ½ Tr σσᵀ
- B(x) = ⟨x - x0, b(x)⟩
- C(x) = |σᵀ(x - x0)|² / |x - x0|²

球面包络:
- γ(r) = inf_{|x-x0|=r} C(x)
- ι(r) = sup_{|x-x0|=r} (2A - C + 2B) / C
- I(r) = ∫_{r0}^r ι(s)/s ds

d = 1 时球面只有两个点，取精确极值；d ≥ 2 时用 Sobol 准随机高斯方向采样，
再对前 k 个候选做球面坐标下降。非各向同性才需要细化，各向同性模型的样本极差为零。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
import hashlib
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import CubicHermiteSpline
from scipy.stats import norm, qmc

from app.core.config import settings
from app.core.exceptions import AssumptionViolation, PreconditionError
from app.core.logging import radial_logger as logger
from app.core.streams import STREAM_SPHERE, resolve_workers, substream
from app.schemas.radial import SphereOptConfig
from app.services.coeff_dsl import ModelSpec
from app.services.quadrature import cumulative

_NODE_BLOCK = 64


def functionals(m: ModelSpec, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """一批点上的 (A, B, C)，要求所有点都不等于 x0"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X - m.center
    rr = np.einsum("ij,ij->i", Y, Y)
    if np.any(rr == 0):
        raise PreconditionError("C 在中心点 x0 处无定义", "x")
    sigma = m.diffusion_at(X)
    b = m.drift_at(X)
    A = 0.5 * np.einsum("kij,kij->k", sigma, sigma)
    B = np.einsum("ij,ij->i", Y, b)
    v = np.einsum("kij,ki->kj", sigma, Y)
    C = np.einsum("kj,kj->k", v, v) / rr
    return A, B, C


def coeff_A(m: ModelSpec, x) -> float:
    sigma = m.diffusion_at(np.asarray(x, dtype=float).reshape(1, m.d))
    return float(0.5 * np.sum(sigma * sigma))


def coeff_B(m: ModelSpec, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1, m.d)
    return float(np.dot(x[0] - m.center, m.drift_at(x)[0]))


def coeff_C(m: ModelSpec, x) -> float:
    return float(functionals(m, np.asarray(x, dtype=float).reshape(1, m.d))[2][0])


def _objective(m: ModelSpec, X: np.ndarray, kind: str) -> np.ndarray:
    """kind='gamma' 返回 C，kind='iota' 返回 (2A-C+2B)/C；C ≤ 0 视为 (A5) 被违反"""
    A, B, C = functionals(m, X)
    bad = ~(C > 0)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise AssumptionViolation(
            f"σσᵀ 在 |x-x0|={np.linalg.norm(X[idx] - m.center):.6g} 处不是正定的 (C={C[idx]:.6g})",
            "A5", X[idx], {"C": float(C[idx])},
        )
    if kind == "gamma":
        return C
    return (2.0 * A - C + 2.0 * B) / C


@lru_cache(maxsize=32)
def _directions_cached(d: int, n: int, seed: int) -> np.ndarray:
    if d == 1:
        return np.array([[-1.0], [1.0]])
    sampler = qmc.Sobol(d=d, scramble=True, seed=substream(seed, STREAM_SPHERE, d))
    u = sampler.random_base2(m=int(np.ceil(np.log2(max(n, 2)))))[:n]
    z = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    z.setflags(write=False)
    return z


def sphere_directions(d: int, n: int, seed: int) -> np.ndarray:
    """单位球面上的确定性准随机方向"""
    return _directions_cached(int(d), int(n), int(seed))


def _refine(m: ModelSpec, radii: np.ndarray, U: np.ndarray, f: np.ndarray, kind: str,
            minimize: bool, cfg: SphereOptConfig) -> Tuple[np.ndarray, np.ndarray]:
    """球面坐标下降，候选批量推进

    radii: (K,)；U: (K, d) 初始方向；f: (K,) 初始值。
    返回细化后的值和最终步长。
    """
    d = U.shape[1]
    U = U.copy()
    f = f.copy()
    step = np.full(f.shape, 0.25)
    center = m.center
    better = np.less if minimize else np.greater
    eye = np.eye(d)
    moves = np.concatenate([eye, -eye], axis=0)  # (2d, d)

    for _ in range(cfg.max_iter):
        active = np.flatnonzero(step > cfg.tol)
        if active.size == 0:
            break
        trial = U[active, None, :] + step[active, None, None] * moves[None, :, :]
        trial /= np.linalg.norm(trial, axis=2, keepdims=True)
        pts = center + radii[active, None, None] * trial
        vals = _objective(m, pts.reshape(-1, d), kind).reshape(active.size, 2 * d)
        pick = vals.argmin(axis=1) if minimize else vals.argmax(axis=1)
        best = vals[np.arange(active.size), pick]
        improved = better(best, f[active])
        upd = active[improved]
        U[upd] = trial[improved, pick[improved]]
        f[upd] = best[improved]
        shrink = active[~improved]
        step[shrink] *= 0.5
    return f, step


def _node_block(m: ModelSpec, radii: np.ndarray, cfg: SphereOptConfig):
    """一组半径节点上的 γ、ι 及诊断"""
    d = m.d
    U = sphere_directions(d, cfg.n_samples, cfg.seed)
    S = U.shape[0]
    pts = m.center + radii[:, None, None] * U[None, :, :]
    flat = pts.reshape(-1, d)
    C = _objective(m, flat, "gamma").reshape(radii.size, S)
    R = _objective(m, flat, "iota").reshape(radii.size, S)

    gamma = C.min(axis=1)
    iota = R.max(axis=1)
    residual = np.zeros(radii.size)
    if d == 1:
        return gamma, iota, np.full(radii.size, S), residual

    k = min(cfg.n_refine, S)
    for kind, vals, minimize in (("gamma", C, True), ("iota", R, False)):
        spread = vals.max(axis=1) - vals.min(axis=1)
        need = np.flatnonzero(spread > 1e-12 * (1.0 + np.abs(vals).max(axis=1)))
        if need.size == 0:
            continue
        order = np.argsort(vals[need], axis=1)
        top = order[:, :k] if minimize else order[:, -k:]
        cand_U = U[top].reshape(-1, d)
        cand_f = np.take_along_axis(vals[need], top, axis=1).reshape(-1)
        cand_r = np.repeat(radii[need], k)
        f, step = _refine(m, cand_r, cand_U, cand_f, kind, minimize, cfg)
        f = f.reshape(need.size, k)
        step = step.reshape(need.size, k)
        if minimize:
            gamma[need] = np.minimum(gamma[need], f.min(axis=1))
        else:
            iota[need] = np.maximum(iota[need], f.max(axis=1))
        residual[need] = np.maximum(residual[need], step.max(axis=1))
    return gamma, iota, np.full(radii.size, S), residual


def _sphere_extrema(m: ModelSpec, radii: np.ndarray, cfg: SphereOptConfig, workers: Optional[int] = None):
    radii = np.asarray(radii, dtype=float)
    blocks = [radii[i:i + _NODE_BLOCK] for i in range(0, radii.size, _NODE_BLOCK)]
    n_workers = min(resolve_workers(workers), max(len(blocks), 1))
    if n_workers <= 1:
        parts = [_node_block(m, blk, cfg) for blk in blocks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(lambda blk: _node_block(m, blk, cfg), blocks))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def _check_radius(m: ModelSpec, r: float, r_min: Optional[float]):
    lower = m.r0 if r_min is None else r_min
    if not np.isfinite(r) or r < lower or r <= 0:
        raise PreconditionError(f"半径 r={r} 必须不小于 {lower}", "r")


def gamma_at(m: ModelSpec, r: float, cfg: Optional[SphereOptConfig] = None, r_min: Optional[float] = None) -> float:
    """γ(r)：C 在半径 r 球面上的数值下确界"""
    cfg = cfg or SphereOptConfig()
    _check_radius(m, r, r_min)
    return float(_node_block(m, np.array([float(r)]), cfg)[0][0])


def iota_at(m: ModelSpec, r: float, cfg: Optional[SphereOptConfig] = None, r_min: Optional[float] = None) -> float:
    """ι(r)：(2A - C + 2B)/C 在半径 r 球面上的数值上确界"""
    cfg = cfg or SphereOptConfig()
    _check_radius(m, r, r_min)
    return float(_node_block(m, np.array([float(r)]), cfg)[1][0])


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """对数网格上的 γ、ι、I 表

    grid[0] = r_start（通常为 r0），I[0] = 0，dI 为逐区间增量。
    """

    r_start: float
    h: float
    grid: np.ndarray
    gamma: np.ndarray
    iota: np.ndarray
    I: np.ndarray
    dI: np.ndarray
    n_samples: np.ndarray
    opt_residual: np.ndarray
    x0: Tuple[float, ...]
    d: int

    @property
    def r0(self) -> float:
        return self.r_start

    @property
    def Rmax(self) -> float:
        return float(self.grid[-1])

    @property
    def M(self) -> int:
        return int(self.grid.size)

    @property
    def t(self) -> np.ndarray:
        return np.log(self.grid)

    def _locate(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < self.grid[0] * (1 - 1e-12)) or np.any(r > self.grid[-1] * (1 + 1e-12)):
            raise PreconditionError(f"半径超出剖面范围 [{self.grid[0]}, {self.Rmax}]", "r")
        return np.clip(np.log(r), np.log(self.grid[0]), np.log(self.grid[-1]))

    def I_at(self, r):
        """I(r)，以 ι 作为 dI/dt 的三次 Hermite 插值"""
        spline = CubicHermiteSpline(self.t, self.I, self.iota)
        return spline(self._locate(r))

    def gamma_interp(self, r):
        """γ(r)，对数线性插值"""
        return np.exp(np.interp(self._locate(r), self.t, np.log(self.gamma)))

    def iota_interp(self, r):
        return np.interp(self._locate(r), self.t, self.iota)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "r": self.grid,
            "gamma": self.gamma,
            "iota": self.iota,
            "I": self.I,
            "opt_residual": self.opt_residual,
        })

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.grid, self.gamma, self.iota, self.I):
            digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return digest.hexdigest()


def _assemble(r_start: float, h: float, grid, gamma, iota, n_samples, residual, m: ModelSpec) -> RadialProfile:
    I = cumulative(iota, h)
    return RadialProfile(
        r_start=float(r_start),
        h=float(h),
        grid=grid,
        gamma=gamma,
        iota=iota,
        I=I,
        dI=np.diff(I),
        n_samples=n_samples.astype(int),
        opt_residual=residual,
        x0=tuple(m.x0),
        d=m.d,
    )


def build_profile(m: ModelSpec, Rmax: float, M: int, cfg: Optional[SphereOptConfig] = None,
                  r_start: Optional[float] = None, workers: Optional[int] = None) -> RadialProfile:
    """在 [r_start, Rmax] 的对数网格上构造径向剖面

    Args:
        m: 模型
        Rmax: 截断半径，须大于 r_start
        M: 节点数，至少 16
        cfg: 球面搜索配置
        r_start: 网格起点，默认 r0；逃逸概率界需要从 r0 - ε 开始
    """
    cfg = cfg or SphereOptConfig()
    r_start = float(m.r0 if r_start is None else r_start)
    if r_start <= 0:
        raise PreconditionError("网格起点必须为正", "r_start")
    if not Rmax > r_start:
        raise PreconditionError(f"Rmax={Rmax} 必须大于 {r_start}", "Rmax")
    if M < 16:
        raise PreconditionError(f"节点数 M={M} 至少为 16", "M")

    h = np.log(Rmax / r_start) / (M - 1)
    grid = r_start * np.exp(h * np.arange(M))
    gamma, iota, counts, residual = _sphere_extrema(m, grid, cfg, workers)
    logger.debug(f"径向剖面: {m.name} 节点 {M}, r ∈ [{r_start:.6g}, {grid[-1]:.6g}]")
    return _assemble(r_start, h, grid, gamma, iota, counts, residual, m)


def extend_profile(p: RadialProfile, m: ModelSpec, Rmax_new: float, cfg: Optional[SphereOptConfig] = None,
                   workers: Optional[int] = None) -> RadialProfile:
    """保持对数步长，把剖面延长到不小于 Rmax_new，已有节点的球面极值原样复用"""
    cfg = cfg or SphereOptConfig()
    if Rmax_new <= p.Rmax:
        return p
    k_last = int(np.ceil(np.log(Rmax_new / p.r_start) / p.h - 1e-9))
    new_idx = np.arange(p.M, k_last + 1)
    new_grid = p.r_start * np.exp(p.h * new_idx)
    gamma, iota, counts, residual = _sphere_extrema(m, new_grid, cfg, workers)
    return _assemble(
        p.r_start, p.h,
        np.concatenate([p.grid, new_grid]),
        np.concatenate([p.gamma, gamma]),
        np.concatenate([p.iota, iota]),
        np.concatenate([p.n_samples, counts]),
        np.concatenate([p.opt_residual, residual]),
        m,
    )
