"""一致遍历性证书服务

Λ = ∫_{r0}^∞ e^{-I(u)} ∫_u^∞ e^{I(v)}/γ(v) dv du

从 Rmax = 8·r0 开始，每次把截断半径加倍并延长剖面（对数步长不变）：
- 含尾部余项的估计相邻两次相对变化 ≤ tol 且内外两层尾部都已分类 → FINITE
- 连续两次加倍都判为发散 → INFINITE
- 加倍次数用尽 → INCONCLUSIVE
"""

import time
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import fmin_l_bfgs_b

from app.core.config import settings
from app.core.exceptions import CertificateRefused, PreconditionError
from app.core.logging import certify_logger as logger
from app.core.streams import STREAM_LYAPUNOV, ball_points, resolve_workers, substream
from app.schemas.certificate import Certificate, Verdict
from app.schemas.radial import SphereOptConfig
from app.services.coeff_dsl import ModelSpec
from app.services.integrals import inner_table, outer_table
from app.services.lyapunov import LyapunovFn, apply_generator, build_lyapunov
from app.services.radial import RadialProfile, build_profile, extend_profile


def constant_c1(lambda_est: float, offset: float = 1.0) -> float:
    """c1 = 1/(2(Λ+offset))

    L ≤ Λ + offset，外部 𝒢L = -1/2，所以 c1 L ≤ 1/2。偏移量为 1 时即 1/(2(Λ+1))。
    """
    if offset < 1.0:
        raise PreconditionError(f"Lyapunov 偏移量必须不小于 1，当前值: {offset}", "offset")
    return 1.0 / (2.0 * (float(lambda_est) + float(offset)))


def _relative_change(est: float, prev: Optional[float]) -> Optional[float]:
    if prev is None:
        return None
    if est == prev:
        return 0.0
    return abs(est - prev) / abs(est)


def compute_lambda(m: ModelSpec, p: RadialProfile, tol: Optional[float] = None,
                   max_doublings: Optional[int] = None, cfg: Optional[SphereOptConfig] = None,
                   workers: Optional[int] = None) -> Tuple[Certificate, RadialProfile]:
    """Λ 的加倍截断协议

    Args:
        m: 模型
        p: 初始剖面（一般为 [r0, 8·r0]）
        tol: 相对容差
        max_doublings: 最多加倍次数

    Returns:
        (证书, 最终剖面)；证书尚不含 Lyapunov 常数
    """
    tol = settings.CERT_TOL if tol is None else float(tol)
    max_doublings = settings.RMAX_DOUBLINGS if max_doublings is None else int(max_doublings)
    if tol <= 0:
        raise PreconditionError(f"tol={tol} 必须为正", "tol")
    cfg = cfg or SphereOptConfig()

    history: List[float] = []
    partial: List[float] = []
    streak = 0
    prev_est: Optional[float] = None
    verdict = Verdict.INCONCLUSIVE
    rel_err: Optional[float] = None
    inner = outer = None
    doublings = 0

    for k in range(max_doublings + 1):
        if k > 0:
            p = extend_profile(p, m, 2.0 * p.Rmax, cfg, workers)
            doublings = k
        inner = inner_table(p)
        outer = outer_table(p, inner)
        partial.append(outer.truncated)
        divergent = inner.divergent or outer.divergent
        streak = streak + 1 if divergent else 0
        logger.info(
            f"[{m.name}] 第 {k} 次加倍 Rmax={p.Rmax:.6g} 节点 {p.M}: 截断积分 {outer.truncated:.10g}"
            f"{', 尾部发散' if divergent else ''}"
        )
        if streak >= 2:
            verdict = Verdict.INFINITE
            break
        if divergent:
            prev_est = None
            continue

        est = outer.truncated + float(np.exp(outer.log_remainder))
        history.append(est)
        rel_err = _relative_change(est, prev_est)
        classified = inner.tail is not None and outer.tail is not None
        if classified and rel_err is not None and rel_err <= tol:
            verdict = Verdict.FINITE
            break
        prev_est = est

    lambda_est: Optional[float] = history[-1] if history and verdict != Verdict.INFINITE else None
    cert = Certificate(
        model_name=m.name,
        model_checksum=m.checksum(),
        verdict=verdict,
        lambda_est=lambda_est,
        lambda_infinite=verdict == Verdict.INFINITE,
        Rmax=p.Rmax,
        doublings=doublings,
        n_nodes=p.M,
        tail_inner=inner.tail if inner is not None else None,
        tail_outer=outer.tail if outer is not None else None,
        rel_err_est=rel_err,
        lambda_history=history,
        partial_history=partial,
        inner_divergent=bool(inner is not None and inner.divergent),
        profile_checksum=p.checksum(),
    )
    if verdict == Verdict.FINITE:
        cert.c1 = constant_c1(lambda_est)
    logger.info(f"[{m.name}] 结论 {verdict.value}, Λ={lambda_est}, 相对误差 {rel_err}")
    return cert, p


def _refine_c2(objective, starts: np.ndarray, center: np.ndarray, r1: float) -> Tuple[np.ndarray, float]:
    """从若干起点做有界 L-BFGS-B，结果投影回闭球"""
    bounds = [(c - r1, c + r1) for c in center]
    best_x, best_f = starts[0], np.inf
    for x in starts:
        xopt, fopt, _ = fmin_l_bfgs_b(objective, x, bounds=bounds, approx_grad=True, maxiter=50)
        y = xopt - center
        norm = np.linalg.norm(y)
        if norm > r1:
            xopt = center + y * (r1 / norm)
            fopt = objective(xopt)
        if fopt < best_f:
            best_x, best_f = xopt, float(fopt)
    return best_x, best_f


def lyapunov_constants(cert: Certificate, m: ModelSpec, L: LyapunovFn, r1: Optional[float] = None,
                       n_samples: Optional[int] = None, seed: Optional[int] = None,
                       n_refine: int = 8) -> Tuple[float, float, List[float]]:
    """(c1, c2, 见证点)

    c2 = max(0, sup_{|x-x0|≤r1} 𝒢L(x) + c1 L(x))，以抽样加多起点局部优化给出的下界近似。
    """
    if cert.verdict != Verdict.FINITE:
        raise CertificateRefused(f"证书结论为 {cert.verdict.value}，没有 Lyapunov 常数", cert.verdict.value)
    r1 = L.r1 if r1 is None else float(r1)
    if r1 <= m.r0:
        raise PreconditionError(f"r1={r1} 必须大于 r0={m.r0}", "r1")
    n = n_samples or settings.C2_SAMPLES
    c1 = constant_c1(cert.lambda_est, L.offset)
    center = np.asarray(m.center, dtype=float)

    rng = substream(settings.SEED if seed is None else seed, STREAM_LYAPUNOV, 0)
    X = np.vstack([center[None, :], ball_points(m.d, center, r1, n, rng)])
    vals = apply_generator(m, L, X) + c1 * L(X)
    order = np.argsort(-vals, kind="stable")[:n_refine]

    def objective(x):
        x = np.asarray(x, dtype=float).reshape(1, m.d)
        return -float(apply_generator(m, L, x)[0] + c1 * L(x)[0])

    x_opt, f_opt = _refine_c2(objective, X[order], center, r1)
    idx = int(order[0])
    witness, sup = X[idx], float(vals[idx])
    if -f_opt > sup:
        witness, sup = x_opt, -f_opt
    c2 = max(0.0, sup)
    logger.info(f"[{m.name}] c1={c1:.10g}, c2={c2:.10g}, 采样 {X.shape[0]} 点")
    return c1, c2, [float(v) for v in witness]


def certify_model(m: ModelSpec, tol: Optional[float] = None, max_doublings: Optional[int] = None,
                  nodes: Optional[int] = None, cfg: Optional[SphereOptConfig] = None,
                  workers: Optional[int] = None, r1: Optional[float] = None,
                  c2_samples: Optional[int] = None, with_constants: bool = True
                  ) -> Tuple[Certificate, RadialProfile]:
    """完整证书：Λ、结论，FINITE 时附带 c1、r1、c2 和 petite 集半径"""
    started = time.perf_counter()
    cfg = cfg or SphereOptConfig()
    nodes = nodes or settings.RADIAL_NODES
    workers = resolve_workers(workers)
    p = build_profile(m, settings.RMAX_INITIAL_FACTOR * m.r0, nodes, cfg, workers=workers)
    cert, p = compute_lambda(m, p, tol, max_doublings, cfg, workers)

    config: Dict[str, Any] = {
        "tol": settings.CERT_TOL if tol is None else float(tol),
        "rmax_doublings": settings.RMAX_DOUBLINGS if max_doublings is None else int(max_doublings),
        "nodes": int(nodes),
        "rmax_initial_factor": settings.RMAX_INITIAL_FACTOR,
        "tail_slope_tol": settings.TAIL_SLOPE_TOL,
        "sphere": cfg.model_dump(),
    }
    cert.config = config

    if cert.verdict == Verdict.FINITE and with_constants:
        r1 = float(r1) if r1 is not None else settings.R1_FACTOR * m.r0
        cert.r1 = r1
        L = build_lyapunov(p, cert, r1)
        c1, c2, witness = lyapunov_constants(cert, m, L, r1, c2_samples, cfg.seed)
        cert.c1 = c1
        cert.lyapunov_offset = L.offset
        cert.c2 = c2
        cert.c2_witness = witness
        cert.c2_samples = int((c2_samples or settings.C2_SAMPLES) + 1)
        cert.petite_radius = r1
        config["r1"] = r1
        config["c2_samples"] = cert.c2_samples
    logger.info(f"[{m.name}] 证书完成，用时 {time.perf_counter() - started:.2f}s")
    return cert, p
