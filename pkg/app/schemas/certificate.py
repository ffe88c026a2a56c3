from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class Verdict(str, Enum):
    """Λ 有限性结论"""
    FINITE = "FINITE"
    INFINITE = "INFINITE"
    INCONCLUSIVE = "INCONCLUSIVE"


class TailModel(BaseModel):
    """尾部拟合模型

    power:      log f ≈ a + s·log r
    exp-decay:  log f ≈ a + b·r^q，b < 0
    exp-growth: log f ≈ a + b·r^q，b > 0
    zero:       样本全为零（log f = -∞），视为收敛
    """

    kind: Literal["power", "exp-decay", "exp-growth", "zero"]
    slope: Optional[float] = Field(None, description="幂律指数 s")
    rate: Optional[float] = Field(None, description="指数类系数 b")
    exponent: Optional[float] = Field(None, description="指数类的幂次 q")
    intercept: Optional[float] = None
    residual: float = Field(0.0, description="对数空间均方根残差")
    power_residual: Optional[float] = None
    exp_residual: Optional[float] = None
    divergent: bool = False
    n_samples: int = 0
    r_min: Optional[float] = None
    r_max: Optional[float] = None


class Certificate(BaseModel):
    """一致遍历性证书"""

    model_name: str
    model_checksum: str
    verdict: Verdict
    lambda_est: Optional[float] = Field(None, description="Λ 估计值，INFINITE 时为空")
    lambda_infinite: bool = False
    Rmax: float = Field(..., description="最终截断半径")
    doublings: int = 0
    n_nodes: int = 0
    tail_inner: Optional[TailModel] = None
    tail_outer: Optional[TailModel] = None
    rel_err_est: Optional[float] = None
    lambda_history: List[float] = Field(default_factory=list, description="含尾部外推的 Λ 估计序列")
    partial_history: List[float] = Field(default_factory=list, description="纯截断积分序列，随 Rmax 单调不减")
    inner_divergent: bool = False
    c1: Optional[float] = None
    lyapunov_offset: Optional[float] = Field(None, description="L = L̄ + offset 的实际偏移量，c1 按它计算")
    r1: Optional[float] = None
    c2: Optional[float] = None
    c2_witness: Optional[List[float]] = None
    c2_samples: Optional[int] = None
    petite_radius: Optional[float] = None
    profile_checksum: str = ""
    config: Dict[str, Any] = Field(default_factory=dict)

    model_config = {"protected_namespaces": ()}


class DriftCheckReport(BaseModel):
    """漂移不等式 𝒢L ≤ -c1 L + c2 𝟙_C 的抽样检验结果"""

    passed: bool = Field(..., alias="pass")
    max_violation: float
    witness_x: List[float]
    n_samples: int
    n_inside: int = 0
    r_test: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    r1: float = 0.0
    max_exterior_generator: Optional[float] = Field(None, description="外部采样点上 𝒢L 的最大值，应不超过 -1/2")

    model_config = {"populate_by_name": True}
