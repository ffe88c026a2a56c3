"""Lyapunov 函数模块

在 Λ 有限时构造显式 Lyapunov 函数:
- L̄(r) = ∫_{r0}^r e^{-I(u)} J(u) du，L̄' = e^{-I} J，L̄'' = -ι L̄'/r - 1/γ
- 在 [r0, Rmax] 上用 (L̄, L̄', L̄'') 的分段五次 Hermite 插值，值、梯度、Hessian 来自同一个 C² 多项式
- r < r1 时用 p(r) = a0 + a4 r⁴ + a5 r⁵ 过渡，在 r1 处值与一、二阶导数连续，在中心处导数为零
- L(x) = L̄(|x - x0|) + offset，offset 通常为 1；过渡多项式出现负值时提高，c1 随之按 1/(2(Λ+offset)) 计算

以及生成元 𝒢f = ⟨b, ∇f⟩ + ½ Tr(σσᵀ ∇²f)、径向恒等式、漂移不等式抽样检验和逃逸概率界。
"""

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import BPoly

from app.core.config import settings
from app.core.exceptions import CertificateRefused, PreconditionError
from app.core.logging import lyapunov_logger as logger
from app.core.streams import STREAM_LYAPUNOV, ball_points, substream
from app.schemas.certificate import Certificate, DriftCheckReport, Verdict
from app.schemas.radial import SphereOptConfig
from app.services.coeff_dsl import ModelSpec
from app.services.integrals import (
    inner_table,
    leading_exponent,
    log_remainder,
    outer_table,
    try_classify,
)
from app.services.quadrature import log_linear_integral, log_segment_integrals
from app.services.radial import RadialProfile, build_profile, functionals


class ScalarField(Protocol):
    """二阶可微标量场：返回值、梯度 (N, d)、Hessian (N, d, d)"""

    def value_grad_hess(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        ...


@dataclass(frozen=True, eq=False)
class LyapunovFn:
    """径向 Lyapunov 函数 L(x) = φ(|x - x0|)"""

    x0: np.ndarray
    r0: float
    r1: float
    grid: np.ndarray
    lbar: np.ndarray
    lbar1: np.ndarray
    lbar2: np.ndarray
    poly: BPoly
    blend: Tuple[float, float, float]
    offset: float
    lambda_est: float
    profile: RadialProfile

    @property
    def Rmax(self) -> float:
        return float(self.grid[-1])

    def radial(self, r) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(φ, φ', φ'', φ'/r)，φ 已包含偏移量"""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(r > self.Rmax * (1 + 1e-12)):
            raise PreconditionError(f"半径超出 Lyapunov 表的范围 Rmax={self.Rmax}", "r")
        a0, a4, a5 = self.blend
        inner = r < self.r1
        phi = np.empty_like(r)
        d1 = np.empty_like(r)
        d2 = np.empty_like(r)
        d1r = np.empty_like(r)

        ri = r[inner]
        phi[inner] = a0 + a4 * ri ** 4 + a5 * ri ** 5
        d1[inner] = 4 * a4 * ri ** 3 + 5 * a5 * ri ** 4
        d2[inner] = 12 * a4 * ri ** 2 + 20 * a5 * ri ** 3
        d1r[inner] = 4 * a4 * ri ** 2 + 5 * a5 * ri ** 3

        ro = np.minimum(r[~inner], self.Rmax)
        phi[~inner] = self.poly(ro)
        d1[~inner] = self.poly(ro, 1)
        d2[~inner] = self.poly(ro, 2)
        d1r[~inner] = d1[~inner] / ro
        return phi + self.offset, d1, d2, d1r

    def lbar_at(self, r) -> np.ndarray:
        """L̄(r)，r ∈ [r0, Rmax]"""
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r0 * (1 - 1e-12)) or np.any(r > self.Rmax * (1 + 1e-12)):
            raise PreconditionError(f"L̄ 只定义在 [{self.r0}, {self.Rmax}]", "r")
        return self.poly(np.clip(r, self.r0, self.Rmax))

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.linalg.norm(X - self.x0, axis=1)
        return self.radial(r)[0]

    def value_grad_hess(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = X - self.x0
        r = np.linalg.norm(Y, axis=1)
        phi, d1, d2, d1r = self.radial(r)
        d = X.shape[1]
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(r[:, None] > 0, Y / r[:, None], 0.0)
        grad = d1[:, None] * e
        outer = np.einsum("ki,kj->kij", e, e)
        hess = (d2 - d1r)[:, None, None] * outer + d1r[:, None, None] * np.eye(d)[None]
        return phi, grad, hess

    def to_frame(self) -> pd.DataFrame:
        p = self.profile
        idx = slice(0, self.grid.size)
        # 由恒等式 L̄'' = -ι L̄'/r - 1/γ 得到的径向生成元包络 ½γ(L̄'' + ι L̄'/r)
        bound = 0.5 * p.gamma[idx] * (self.lbar2 + p.iota[idx] * self.lbar1 / self.grid)
        return pd.DataFrame({
            "r": self.grid,
            "lbar": self.lbar,
            "lbar1": self.lbar1,
            "lbar2": self.lbar2,
            "radial_generator_bound": bound,
        })


def _blend_coefficients(r1: float, V: float, V1: float, V2: float) -> Tuple[float, float, float]:
    a5 = (V2 - 3.0 * V1 / r1) / (5.0 * r1 ** 3)
    a4 = (V1 - 5.0 * a5 * r1 ** 4) / (4.0 * r1 ** 3)
    a0 = V - a4 * r1 ** 4 - a5 * r1 ** 5
    return float(a0), float(a4), float(a5)


def build_lyapunov(p: RadialProfile, cert: Certificate, r1: Optional[float] = None) -> LyapunovFn:
    """由证书和剖面构造 Lyapunov 函数

    Raises:
        CertificateRefused: 证书结论不是 FINITE
        PreconditionError: r1 不在 (r0, Rmax) 内
    """
    if cert.verdict != Verdict.FINITE:
        raise CertificateRefused(f"证书结论为 {cert.verdict.value}，拒绝构造 Lyapunov 函数", cert.verdict.value)
    r0 = p.r_start
    r1 = float(r1 if r1 is not None else (cert.r1 or settings.R1_FACTOR * r0))
    if not (r0 < r1 < p.Rmax):
        raise PreconditionError(f"r1={r1} 必须在 (r0={r0}, Rmax={p.Rmax}) 内", "r1")
    if cert.profile_checksum and cert.profile_checksum != p.checksum():
        logger.warning("剖面校验和与证书记录不一致，Lyapunov 表按当前剖面计算")

    inner = inner_table(p)
    outer = outer_table(p, inner)
    lbar1 = np.exp(outer.logF)
    lbar = np.exp(outer.log_lbar)
    lbar[0] = 0.0
    lbar2 = -p.iota * lbar1 / p.grid - 1.0 / p.gamma

    poly = BPoly.from_derivatives(p.grid, np.column_stack([lbar, lbar1, lbar2]))
    V, V1, V2 = (float(poly(r1, k)) for k in range(3))
    a0, a4, a5 = _blend_coefficients(r1, V, V1, V2)

    probe = np.linspace(0.0, r1, 2049)
    p_min = float(np.min(a0 + a4 * probe ** 4 + a5 * probe ** 5))
    offset = 1.0 + max(0.0, -p_min)
    if offset > 1.0:
        logger.warning(f"内部过渡多项式最小值 {p_min:.6g} < 0，偏移量提高到 {offset:.6g}")

    logger.info(f"Lyapunov 函数构造完成: r1={r1:.6g}, L̄(Rmax)={lbar[-1]:.6g}, Λ={cert.lambda_est:.6g}")
    return LyapunovFn(
        x0=np.asarray(p.x0, dtype=float), r0=r0, r1=r1, grid=p.grid,
        lbar=lbar, lbar1=lbar1, lbar2=lbar2, poly=poly, blend=(a0, a4, a5),
        offset=offset, lambda_est=float(cert.lambda_est), profile=p,
    )


def apply_generator(m: ModelSpec, f: ScalarField, X) -> np.ndarray:
    """𝒢f(x) = ⟨b(x), ∇f(x)⟩ + ½ Tr(σσᵀ(x) ∇²f(x))"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, grad, hess = f.value_grad_hess(X)
    b = m.drift_at(X)
    sigma = m.diffusion_at(X)
    a = np.einsum("kij,klj->kil", sigma, sigma)
    return np.einsum("ki,ki->k", b, grad) + 0.5 * np.einsum("kij,kji->k", a, hess)


def radial_generator(L: LyapunovFn, m: ModelSpec, X) -> np.ndarray:
    """径向恒等式 ½C L̄'' + (L̄'/2r)(2A - C + 2B)，要求 |x - x0| ≥ r1"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.linalg.norm(X - L.x0, axis=1)
    if np.any(r < L.r1 * (1 - 1e-12)):
        raise PreconditionError(f"径向恒等式只在 |x-x0| ≥ r1={L.r1} 上成立", "x")
    A, B, C = functionals(m, X)
    _, d1, d2, _ = L.radial(r)
    return 0.5 * C * d2 + d1 / (2.0 * r) * (2.0 * A - C + 2.0 * B)


def drift_check(m: ModelSpec, L: LyapunovFn, c1: float, c2: float, r1: Optional[float] = None,
                n_samples: Optional[int] = None, R_test: Optional[float] = None,
                seed: Optional[int] = None) -> DriftCheckReport:
    """抽样检验 𝒢L(x) + c1 L(x) - c2 𝟙_{|x-x0|≤r1} ≤ 0

    半径在 [0, R_test] 上分层，方向随机；违背量并列时取下标最小的样本作为见证点。
    """
    r1 = L.r1 if r1 is None else float(r1)
    n = n_samples or settings.DRIFT_CHECK_SAMPLES
    R_test = R_test or min(settings.DRIFT_CHECK_RADIUS_FACTOR * r1, L.Rmax)
    R_test = min(R_test, L.Rmax)
    rng = substream(settings.SEED if seed is None else seed, STREAM_LYAPUNOV, 1)
    X = ball_points(m.d, L.x0, R_test, n, rng)
    X = np.vstack([L.x0[None, :], X])  # 中心点总是包含在内

    gen = apply_generator(m, L, X)
    val = L(X)
    r = np.linalg.norm(X - L.x0, axis=1)
    inside = r <= r1
    viol = gen + c1 * val - c2 * inside
    slack = 1e-8 * (1.0 + np.abs(gen))
    idx = int(np.argmax(viol))
    passed = bool(np.all(viol <= slack))
    exterior = ~inside
    report = DriftCheckReport(
        passed=passed,
        max_violation=float(viol[idx]),
        witness_x=[float(v) for v in X[idx]],
        n_samples=int(X.shape[0]),
        n_inside=int(inside.sum()),
        r_test=float(R_test),
        c1=float(c1),
        c2=float(c2),
        r1=float(r1),
        max_exterior_generator=float(gen[exterior].max()) if exterior.any() else None,
    )
    logger.info(f"漂移不等式检验: {'PASS' if passed else 'FAIL'}, 最大违背 {report.max_violation:.6g}")
    return report


def escape_bound(m: ModelSpec, x: Sequence[float], eps: Optional[float] = None, Rcap: Optional[float] = None,
                 truncate: bool = False, cfg: Optional[SphereOptConfig] = None,
                 M: Optional[int] = None) -> float:
    """永不进入 B_{r0}(x0) 的概率上界 L̄(|x-x0|)/L̄(∞)，其中 L̄(r) = ∫_{r0-ε}^r e^{-I(u)} du

    分母发散时返回 0（必然进入）。truncate=True 时分母取 L̄(Rcap)，不做尾部外推。
    """
    r0 = m.r0
    eps = settings.ESCAPE_EPS_FRACTION * r0 if eps is None else float(eps)
    if not (0 < eps < r0):
        raise PreconditionError(f"eps={eps} 必须在 (0, r0={r0}) 内", "eps")
    x = np.asarray(x, dtype=float).reshape(m.d)
    rx = float(np.linalg.norm(x - m.center))
    r_start = r0 - eps
    if rx < r_start * (1 - 1e-12):
        raise PreconditionError(f"|x-x0|={rx} 小于 r0-eps={r_start}", "x")
    Rcap = float(Rcap) if Rcap is not None else max(2 * settings.RMAX_INITIAL_FACTOR * r0, 2.0 * rx)
    if rx >= Rcap:
        raise PreconditionError(f"|x-x0|={rx} 必须小于 Rcap={Rcap}", "x")
    if rx <= r_start:
        return 0.0

    if M is None:
        M = int(np.ceil(settings.RADIAL_NODES * np.log(Rcap / r_start) / np.log(settings.RMAX_INITIAL_FACTOR)))
    p = build_profile(m, Rcap, max(M, 16), cfg, r_start=r_start)
    logw = -p.I + p.t  # t 空间被积函数 e^{-I(r)} r 的对数
    m_nodes = logw.size
    c = np.empty(m_nodes - 1)
    c[:-1] = logw[2:]
    c[-1] = logw[-3]
    last = np.zeros(m_nodes - 1, dtype=bool)
    last[-1] = True
    seg = log_segment_integrals(logw[:-1], logw[1:], c, p.h, last)
    log_cum = np.concatenate(([-np.inf], np.logaddexp.accumulate(seg)))

    # 分子：最后一个节点之后到 |x| 的部分按对数线性积分
    tx = np.log(rx)
    k = int(np.searchsorted(p.t, tx, side="right") - 1)
    k = min(max(k, 0), m_nodes - 1)
    b = -float(p.I_at(rx)) + tx
    part = float(log_linear_integral(np.array(logw[k]), np.array(b), max(tx - p.t[k], 0.0)))
    log_num = float(np.logaddexp(log_cum[k], part))

    log_den = float(log_cum[-1])
    if not truncate:
        tail = try_classify(p.grid, -p.I, leading_exponent(p.grid, p.iota))
        if tail is None:
            raise PreconditionError("Rcap 过小，无法判断 e^{-I} 的尾部", "Rcap")
        if tail.divergent:
            return 0.0
        log_den = float(np.logaddexp(log_den, log_remainder(tail, p.Rmax, float(-p.I[-1]))))
    return float(min(1.0, np.exp(log_num - log_den)))
