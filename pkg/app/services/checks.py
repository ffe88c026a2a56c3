"""假设 (A1)-(A5) 的抽样证伪

所有检验都只能证伪：发现反例时给出 VIOLATED 和可复现的见证点，
否则报告 NOT_FALSIFIED 并记录样本预算。
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import DomainError, PreconditionError
from app.core.logging import checks_logger as logger
from app.core.streams import STREAM_CHECKS, ball_points, chunk_bounds, random_directions, resolve_workers, substream
from app.schemas.assumption import AssumptionReport, AssumptionStatus, Witness
from app.services.coeff_dsl import ModelSpec

_ASSUMPTION_KEYS = {"A1": 1, "A2": 2, "A3": 3, "A4": 4, "A5": 5}
_DIVERGENCE_SLOPE = 0.5
_SLOPE_LEVELS = 5
_EIGEN_EXACT_MAX_D = 3
_HOLDER_LEVELS = 8


def _rng(seed: Optional[int], assumption: str, *keys: int) -> np.random.Generator:
    return substream(settings.SEED if seed is None else seed, STREAM_CHECKS, _ASSUMPTION_KEYS[assumption], *keys)


def _map_chunks(func: Callable[[np.ndarray], np.ndarray], X: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
    """按固定块并行求值，结果按原顺序拼接；定义域错误的下标换算为全局下标"""
    bounds = chunk_bounds(X.shape[0])

    def run(bound):
        start, end = bound
        try:
            return func(X[start:end])
        except DomainError as exc:
            index = None if exc.index is None else exc.index + start
            raise DomainError(exc.message, exc.operation, index, exc.details) from exc

    n_workers = min(resolve_workers(workers), len(bounds))
    if n_workers <= 1:
        parts = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, bounds))
    return np.concatenate(parts)


def _with_anchors(m: ModelSpec, X: np.ndarray) -> np.ndarray:
    """在样本前加上原点和 x0，确定性点总是被检查"""
    anchors = np.vstack([np.zeros(m.d), m.center])
    return np.vstack([anchors, X])


def _nonfinite_report(assumption: str, X: np.ndarray, exc: DomainError, **fields) -> AssumptionReport:
    index = exc.index if exc.index is not None else 0
    point = [float(v) for v in X[index]]
    logger.warning(f"{assumption}: 系数在 {point} 处求值失败: {exc.message}")
    return AssumptionReport(
        assumption=assumption,
        status=AssumptionStatus.VIOLATED,
        witness=Witness(kind="nonfinite", points=[point], values=[], margin=0.0),
        message=f"系数求值失败: {exc.message}",
        **fields,
    )


# ---------------------------------------------------------------------------
# (A1) 局部有界
# ---------------------------------------------------------------------------

def _local_size(m: ModelSpec, X: np.ndarray) -> np.ndarray:
    b = m.drift_at(X)
    sigma = m.diffusion_at(X)
    return np.linalg.norm(b, axis=1) + np.sqrt(np.einsum("kij,kij->k", sigma, sigma))


def check_local_bound(m: ModelSpec, r: float, N: Optional[int] = None, seed: Optional[int] = None,
                      workers: Optional[int] = None) -> AssumptionReport:
    """(A1) sup_{B_r(0)} |b| + ‖σ‖_HS，只有求值失败或非有限值才判为违反"""
    if not r > 0:
        raise PreconditionError(f"r={r} 必须为正", "r")
    N = N or settings.CHECK_SAMPLES
    seed = settings.SEED if seed is None else seed
    X = _with_anchors(m, ball_points(m.d, np.zeros(m.d), r, N, _rng(seed, "A1")))
    fields = dict(region="ball", radius=float(r), n_samples=int(X.shape[0]), seed=int(seed))
    try:
        size = _map_chunks(lambda Y: _local_size(m, Y), X, workers)
    except DomainError as exc:
        return _nonfinite_report("A1", X, exc, **fields)
    idx = int(np.argmax(size))
    logger.info(f"A1: sup |b|+‖σ‖ ≈ {size[idx]:.6g}")
    return AssumptionReport(
        assumption="A1",
        status=AssumptionStatus.NOT_FALSIFIED,
        constants={"bound": float(size[idx]), "argmax": [float(v) for v in X[idx]]},
        **fields,
    )


# ---------------------------------------------------------------------------
# (A3) 线性增长
# ---------------------------------------------------------------------------

def _growth_ratio(m: ModelSpec, X: np.ndarray) -> np.ndarray:
    b = m.drift_at(X, strict=False)
    sigma = m.diffusion_at(X, strict=False)
    with np.errstate(all="ignore"):
        num = 2.0 * np.einsum("ij,ij->i", X, b) + np.einsum("kij,kij->k", sigma, sigma)
        return num / (1.0 + np.einsum("ij,ij->i", X, X))


def _log_slope(x: np.ndarray, y: np.ndarray) -> float:
    """log y 对 log x 的最小二乘斜率"""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def check_growth(m: ModelSpec, R: Optional[float] = None, N: Optional[int] = None, seed: Optional[int] = None,
                 levels: Optional[int] = None, workers: Optional[int] = None) -> AssumptionReport:
    """(A3) Γ̂(R) = max_{B_R(0)} (2⟨x,b⟩ + ‖σ‖²)/(1+|x|²)，半径逐级加倍

    最后若干级上 log Γ̂ 对 log R 的斜率超过 0.5 判为违反。
    """
    R = float(R if R is not None else settings.RMAX_INITIAL_FACTOR * m.r0)
    if not R > 0:
        raise PreconditionError(f"R={R} 必须为正", "R")
    N = N or settings.CHECK_SAMPLES
    levels = levels or settings.GROWTH_LEVELS
    seed = settings.SEED if seed is None else seed
    per_level = max(N // levels, 16)
    radii = R * 2.0 ** np.arange(levels)
    fields = dict(region="ball", radius=float(radii[-1]), n_samples=int(per_level * levels + 1), seed=int(seed))

    table = []
    best_points: List[np.ndarray] = []
    running, running_x = -np.inf, np.zeros(m.d)
    origin = np.zeros((1, m.d))
    for k, Rk in enumerate(radii):
        X = ball_points(m.d, np.zeros(m.d), Rk, per_level, _rng(seed, "A3", k))
        if k == 0:
            X = np.vstack([origin, X])
        try:
            ratio = _map_chunks(lambda Y: _growth_ratio(m, Y), X, workers)
        except DomainError as exc:
            return _nonfinite_report("A3", X, exc, **fields)
        bad = np.isnan(ratio) | (ratio == np.inf)
        if bad.any():
            exc = DomainError("增长比值不是有限数", "overflow", int(np.flatnonzero(bad)[0]))
            return _nonfinite_report("A3", X, exc, **fields)
        idx = int(np.argmax(ratio))
        if ratio[idx] > running:
            running, running_x = float(ratio[idx]), X[idx]
        best_points.append(running_x.copy())
        table.append({"R": float(Rk), "gamma_hat": running})

    gam = np.array([row["gamma_hat"] for row in table])
    tail = slice(max(levels - _SLOPE_LEVELS + 1, 0), levels)
    slope = None
    if np.all(gam[tail] > 0) and gam[tail].size >= 2:
        slope = _log_slope(radii[tail], gam[tail])
    constants = {"gamma_hat": float(gam[-1]), "slope": slope}
    if slope is not None and slope > _DIVERGENCE_SLOPE:
        witness = Witness(
            kind="growth",
            points=[[float(v) for v in x] for x in best_points[tail]],
            values=[float(v) for v in gam[tail]],
            margin=slope - _DIVERGENCE_SLOPE,
        )
        logger.warning(f"A3: Γ̂ 随半径发散，斜率 {slope:.4g}")
        return AssumptionReport(assumption="A3", status=AssumptionStatus.VIOLATED, witness=witness,
                                constants=constants, table=table, message="Γ̂ 随半径加倍持续增长", **fields)
    logger.info(f"A3: Γ̂ ≈ {gam[-1]:.6g}")
    return AssumptionReport(assumption="A3", status=AssumptionStatus.NOT_FALSIFIED,
                            constants=constants, table=table, **fields)


# ---------------------------------------------------------------------------
# (A2) 单侧 Lipschitz
# ---------------------------------------------------------------------------

def _onesided_ratio(m: ModelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    D = X - Y
    db = m.drift_at(X) - m.drift_at(Y)
    ds = m.diffusion_at(X) - m.diffusion_at(Y)
    num = 2.0 * np.einsum("ij,ij->i", D, db) + np.einsum("kij,kij->k", ds, ds)
    return num / np.einsum("ij,ij->i", D, D)


def _split_pairs(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """每对拆成左半、右半和中间半段三对，距离减半"""
    mid = 0.5 * (X + Y)
    q1 = X + 0.25 * (Y - X)
    q3 = X + 0.75 * (Y - X)
    return np.vstack([X, mid, q1]), np.vstack([mid, Y, q3])


def check_onesided(m: ModelSpec, r: Optional[float] = None, N_pairs: Optional[int] = None,
                   seed: Optional[int] = None, levels: Optional[int] = None) -> AssumptionReport:
    """(A2) Γ̂_r = max (2⟨x-y, b(x)-b(y)⟩ + ‖σ(x)-σ(y)‖²)/|x-y|²，点对在 B_r(0) 内

    点对距离从 r/2 开始每级减半；保留比值最大的若干对继续细分，并补充新的随机点对。
    最后 5 级上 log Γ̂ 对 log(1/δ) 的斜率超过 0.5 且 Γ̂ 均为正时判为违反。
    """
    r = float(r if r is not None else settings.RMAX_INITIAL_FACTOR * m.r0)
    if not r > 0:
        raise PreconditionError(f"r={r} 必须为正", "r")
    N_pairs = N_pairs or settings.CHECK_SAMPLES
    levels = levels or settings.ONESIDED_LEVELS
    seed = settings.SEED if seed is None else seed
    top_k = settings.ONESIDED_TOP_K
    fresh = max(N_pairs // levels, 16)
    fields = dict(region="ball", radius=r, seed=int(seed))

    table = []
    best_pairs: List[Tuple[np.ndarray, np.ndarray]] = []
    keep_x = np.empty((0, m.d))
    keep_y = np.empty((0, m.d))
    total = 0
    delta = 0.5 * r
    for k in range(levels):
        rng = _rng(seed, "A2", k)
        X = ball_points(m.d, np.zeros(m.d), r - delta, fresh, rng)
        Y = X + delta * random_directions(m.d, fresh, rng)
        if keep_x.shape[0]:
            cx, cy = _split_pairs(keep_x, keep_y)
            X = np.vstack([cx, X])
            Y = np.vstack([cy, Y])
        total += X.shape[0]
        try:
            ratio = _onesided_ratio(m, X, Y)
        except DomainError as exc:
            return _nonfinite_report("A2", X, exc, n_samples=total, **fields)
        order = np.argsort(-ratio, kind="stable")[:top_k]
        keep_x, keep_y = X[order], Y[order]
        idx = int(order[0])
        best_pairs.append((X[idx], Y[idx]))
        table.append({"delta": float(np.linalg.norm(X[idx] - Y[idx])), "gamma_hat": float(ratio[idx])})
        delta *= 0.5

    gam = np.array([row["gamma_hat"] for row in table])
    dist = np.array([row["delta"] for row in table])
    tail = slice(levels - _SLOPE_LEVELS, levels)
    slope = None
    if levels >= _SLOPE_LEVELS and np.all(gam[tail] > 0):
        slope = _log_slope(1.0 / dist[tail], gam[tail])
    constants = {"gamma_hat": float(gam.max()), "slope": slope}
    fields["n_samples"] = total
    if slope is not None and slope > _DIVERGENCE_SLOPE:
        points = []
        for x, y in best_pairs[tail]:
            points.extend([[float(v) for v in x], [float(v) for v in y]])
        witness = Witness(kind="onesided", points=points, values=[float(v) for v in gam[tail]],
                          margin=slope - _DIVERGENCE_SLOPE)
        logger.warning(f"A2: 点对距离细分下 Γ̂ 发散，斜率 {slope:.4g}")
        return AssumptionReport(assumption="A2", status=AssumptionStatus.VIOLATED, witness=witness,
                                constants=constants, table=table, message="单侧 Lipschitz 比值随点对距离缩小而发散",
                                **fields)
    logger.info(f"A2: Γ̂_r ≈ {gam.max():.6g}")
    return AssumptionReport(assumption="A2", status=AssumptionStatus.NOT_FALSIFIED,
                            constants=constants, table=table, **fields)


# ---------------------------------------------------------------------------
# (A4)/(A5) 椭圆性
# ---------------------------------------------------------------------------

def _diffusivity(m: ModelSpec, X: np.ndarray) -> np.ndarray:
    sigma = m.diffusion_at(X)
    return np.einsum("kij,klj->kil", sigma, sigma)


def _min_eigen_exact(a: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(a)[:, 0]


def _min_eigen(a: np.ndarray, rng: np.random.Generator, n_dirs: int = 64) -> np.ndarray:
    """d ≤ 3 精确求解，否则取随机方向上 Rayleigh 商的最小值（只会高估）"""
    d = a.shape[1]
    if d <= _EIGEN_EXACT_MAX_D:
        return _min_eigen_exact(a)
    U = np.vstack([np.eye(d), random_directions(d, n_dirs, rng)])
    return np.einsum("ui,kij,uj->ku", U, a, U).min(axis=1)


def _holder_fit(m: ModelSpec, center: np.ndarray, radius: float, n: int,
                rng: np.random.Generator) -> dict:
    """b 和 σσᵀ 在球内的 Hölder 拟合 ω(δ) ≈ D δ^α"""
    fits = {}
    deltas = radius * 0.5 ** np.arange(1, _HOLDER_LEVELS + 1)
    omega_b = np.empty(deltas.size)
    omega_a = np.empty(deltas.size)
    for k, delta in enumerate(deltas):
        X = ball_points(m.d, center, radius - delta, n, rng)
        Y = X + delta * random_directions(m.d, n, rng)
        omega_b[k] = np.linalg.norm(m.drift_at(X) - m.drift_at(Y), axis=1).max()
        da = _diffusivity(m, X) - _diffusivity(m, Y)
        omega_a[k] = np.sqrt(np.einsum("kij,kij->k", da, da)).max()
    for name, omega in (("b", omega_b), ("a", omega_a)):
        if np.all(omega > 0):
            alpha, logD = np.polyfit(np.log(deltas), np.log(omega), 1)
            fits[f"holder_alpha_{name}"] = float(min(max(alpha, 0.0), 1.0))
            fits[f"holder_D_{name}"] = float(np.exp(logD))
        else:
            fits[f"holder_alpha_{name}"] = 1.0
            fits[f"holder_D_{name}"] = float(omega.max())
    return fits


def check_ellipticity(m: ModelSpec, region: str = "exterior", N: Optional[int] = None,
                      R: Optional[float] = None, seed: Optional[int] = None,
                      workers: Optional[int] = None) -> AssumptionReport:
    """σσᵀ 的最小特征值

    region="ball":     (A4)，B_{r0}(x0) 上一致椭圆，并给出 b、σσᵀ 的 Hölder 拟合
    region="exterior": (A5)，r0 ≤ |x-x0| ≤ R 上正定，给出按半径分带的最小特征值剖面
    """
    if region not in ("ball", "exterior"):
        raise PreconditionError(f"未知区域: {region}", "region")
    assumption = "A4" if region == "ball" else "A5"
    N = N or settings.CHECK_SAMPLES
    seed = settings.SEED if seed is None else seed
    center = m.center
    r0 = m.r0
    R = float(R if R is not None else settings.RMAX_INITIAL_FACTOR * r0)
    rng = _rng(seed, assumption)
    eye = np.eye(m.d)
    if region == "ball":
        X = ball_points(m.d, center, r0, N, rng)
        axes = np.vstack([center + 0.5 * r0 * eye, center - 0.5 * r0 * eye])
        X = np.vstack([center[None, :], axes, X])
    else:
        if not R > r0:
            raise PreconditionError(f"R={R} 必须大于 r0={r0}", "R")
        X = ball_points(m.d, center, R, N, rng, inner=r0)
        axes = np.vstack([center + r0 * eye, center - r0 * eye])
        X = np.vstack([axes, X])
    fields = dict(region=region, radius=float(r0 if region == "ball" else R),
                  n_samples=int(X.shape[0]), seed=int(seed))

    try:
        a = _map_chunks(lambda Y: _diffusivity(m, Y), X, workers)
    except DomainError as exc:
        return _nonfinite_report(assumption, X, exc, **fields)
    lam = _min_eigen(a, rng)

    constants = {"delta_hat": float(lam.min()), "exact": bool(m.d <= _EIGEN_EXACT_MAX_D)}
    table = []
    dist = np.linalg.norm(X - center, axis=1)
    edges = np.linspace(dist.min(), dist.max(), 17)
    band = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, 15)
    for j in range(16):
        sel = band == j
        if sel.any():
            table.append({"r_lo": float(edges[j]), "r_hi": float(edges[j + 1]), "min_eigen": float(lam[sel].min())})

    bad = ~(lam > 0)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        exact = float(_min_eigen_exact(a[idx:idx + 1])[0])
        witness = Witness(kind="eigen", points=[[float(v) for v in X[idx]]], values=[exact], margin=-exact)
        logger.warning(f"{assumption}: σσᵀ 在 {witness.points[0]} 处的最小特征值 {exact:.6g} ≤ 0")
        return AssumptionReport(assumption=assumption, status=AssumptionStatus.VIOLATED, witness=witness,
                                constants=constants, table=table, message="σσᵀ 不是正定的", **fields)

    if region == "ball":
        constants.update(_holder_fit(m, center, r0, max(N // _HOLDER_LEVELS, 16), rng))
    logger.info(f"{assumption}: 最小特征值 ≈ {lam.min():.6g}")
    return AssumptionReport(assumption=assumption, status=AssumptionStatus.NOT_FALSIFIED,
                            constants=constants, table=table, **fields)


def check_all(m: ModelSpec, N: Optional[int] = None, seed: Optional[int] = None,
              workers: Optional[int] = None) -> List[AssumptionReport]:
    """依次检验 (A1)-(A5)"""
    R = settings.RMAX_INITIAL_FACTOR * m.r0
    return [
        check_local_bound(m, R, N, seed, workers),
        check_onesided(m, R, N, seed),
        check_growth(m, R, N, seed, workers=workers),
        check_ellipticity(m, "ball", N, seed=seed, workers=workers),
        check_ellipticity(m, "exterior", N, R, seed, workers),
    ]


# ---------------------------------------------------------------------------
# 见证点复现
# ---------------------------------------------------------------------------

def replay_witness(m: ModelSpec, report: AssumptionReport) -> Tuple[bool, float]:
    """在见证点上重新计算检验量，返回 (是否仍然违反, 违背量)"""
    w = report.witness
    if w is None:
        raise PreconditionError(f"{report.assumption} 报告没有见证点", "witness")
    P = np.asarray(w.points, dtype=float)

    if w.kind == "nonfinite":
        try:
            m.drift_at(P)
            m.diffusion_at(P)
        except DomainError:
            return True, 0.0
        return False, 0.0

    if w.kind == "eigen":
        lam = float(_min_eigen_exact(_diffusivity(m, P))[0])
        return lam <= 0, -lam

    if w.kind == "growth":
        gam = np.array(w.values)
        ratio = _growth_ratio(m, P)
        levels = np.array([row["R"] for row in report.table[-gam.size:]])
        slope = _log_slope(levels, ratio)
        margin = slope - _DIVERGENCE_SLOPE
        return margin > 0, margin

    X, Y = P[0::2], P[1::2]
    ratio = _onesided_ratio(m, X, Y)
    dist = np.linalg.norm(X - Y, axis=1)
    if not np.all(ratio > 0):
        return False, -np.inf
    margin = _log_slope(1.0 / dist, ratio) - _DIVERGENCE_SLOPE
    return margin > 0, margin
