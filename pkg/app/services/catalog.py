"""内置模型目录

三个例子模型，中心 x0 = 0:
- polynomial_drift: σ = I_d，b(x) = -K x |x|^(κ-1)，r0 = 1
- oscillating_drift: d = 1，σ = 1，b(x) = -K x |x|^(κ-1) (cos x + ρ)，r0 = 1
- langevin_tempered: σ(x) = c^(-β) |x|^(β/α) I_d，
  b(x) = -((1-2β)/(2α)) c^(-2β) x |x|^(2β/α-2)，r0 = 2

例子2和例子3原本只在单位球外给出系数，这里在全空间使用同一个闭式表达式。
参数超出适用范围时记录警告，但仍然构造模型。
"""

from typing import Dict, Mapping, Optional

from app.core.exceptions import ValidationException
from app.core.logging import get_logger
from app.services.coeff_dsl import ModelSpec, build_model

logger = get_logger("catalog")

CATALOG_DEFAULTS: Dict[str, Dict[str, float]] = {
    "polynomial_drift": {"K": 1.0, "kappa": 2.0, "d": 1, "r0": 1.0},
    "oscillating_drift": {"K": 1.0, "kappa": 2.0, "rho": 0.5, "d": 1, "r0": 1.0},
    "langevin_tempered": {"alpha": 0.2, "beta": 0.3, "c": 1.0, "d": 1, "r0": 2.0},
}


def catalog_names():
    return tuple(CATALOG_DEFAULTS)


def _identity(d: int, entry: str = "1"):
    return [[entry if i == j else "0" for j in range(d)] for i in range(d)]


def _warn_range(name: str, ok: bool, message: str):
    if not ok:
        logger.warning(f"目录模型 {name} 参数超出适用范围: {message}（仍然构造）")


def catalog(name: str, params: Optional[Mapping[str, float]] = None) -> ModelSpec:
    """按名称构造目录模型

    Args:
        name: polynomial_drift / oscillating_drift / langevin_tempered
        params: 覆盖默认值的参数，可包含 d 和 r0

    Raises:
        ValidationException: 未知名称或维数非法
    """
    if name not in CATALOG_DEFAULTS:
        raise ValidationException(f"未知的目录模型: {name}，可选: {', '.join(CATALOG_DEFAULTS)}", "catalog")
    values = dict(CATALOG_DEFAULTS[name])
    for key, value in (params or {}).items():
        if key not in values:
            raise ValidationException(f"目录模型 {name} 不接受参数 {key}", key)
        values[key] = float(value)

    raw_d = values.pop("d")
    d = int(raw_d)
    r0 = float(values.pop("r0"))
    if d < 1 or d != raw_d:
        raise ValidationException(f"维数 d 必须是正整数，当前值: {raw_d}", "d")

    if name == "polynomial_drift":
        _warn_range(name, values["K"] > 0, f"K={values['K']} 应大于 0")
        _warn_range(name, values["kappa"] > 1, f"kappa={values['kappa']} 应大于 1")
        drift = [f"-K*x{i}*|x|^(kappa-1)" for i in range(1, d + 1)]
        return build_model(name, d, d, [0.0] * d, r0, values, drift, _identity(d))

    if name == "oscillating_drift":
        if d != 1:
            raise ValidationException("oscillating_drift 只定义在 d=1", "d")
        _warn_range(name, values["K"] > 0, f"K={values['K']} 应大于 0")
        _warn_range(name, values["kappa"] > 1, f"kappa={values['kappa']} 应大于 1")
        _warn_range(name, values["rho"] > 0, f"rho={values['rho']} 应大于 0")
        drift = ["-K*x1*|x|^(kappa-1)*(cos(x1)+rho)"]
        return build_model(name, 1, 1, [0.0], r0, values, drift, [["1"]])

    # langevin_tempered
    alpha, beta = values["alpha"], values["beta"]
    _warn_range(name, 0 < alpha < 1.0 / d, f"alpha={alpha} 应在 (0, 1/d)")
    _warn_range(name, 0 < beta < (1 + alpha * (2 - d)) / 2, f"beta={beta} 应在 (0, (1+α(2-d))/2)")
    _warn_range(name, r0 > 1, f"r0={r0} 应大于 1")
    drift = [f"-((1-2*beta)/(2*alpha))*c^(-2*beta)*x{i}*|x|^(2*beta/alpha-2)" for i in range(1, d + 1)]
    diffusion = _identity(d, "c^(-beta)*|x|^(beta/alpha)")
    return build_model(name, d, d, [0.0] * d, r0, values, drift, diffusion)
