from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings


class SimConfig(BaseModel):
    """Euler–Maruyama 模拟配置"""

    dt: float = Field(1e-3, gt=0, description="步长")
    T: float = Field(1.0, gt=0, description="时间范围")
    checkpoints: List[float] = Field(default_factory=list, description="记录时刻，默认只记录 T")
    n_paths: int = Field(10000, ge=2, description="路径数")
    seed: int = Field(default_factory=lambda: settings.SEED)
    scheme: Literal["euler_maruyama"] = "euler_maruyama"

    @field_validator("checkpoints")
    @classmethod
    def validate_checkpoints(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("checkpoints 必须严格递增")
        return v

    @model_validator(mode="after")
    def validate_grid(self):
        if not self.checkpoints:
            self.checkpoints = [self.T]
        if self.checkpoints[0] <= 0 or self.checkpoints[-1] > self.T * (1 + 1e-12):
            raise ValueError("checkpoints 必须落在 (0, T] 内")
        if self.dt > self.checkpoints[0] * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} 不能大于最小记录时刻 {self.checkpoints[0]}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def checkpoint_steps(self) -> List[int]:
        return [int(round(t / self.dt)) for t in self.checkpoints]


class SubordinatorSpec(BaseModel):
    """从属子（非降 Lévy 过程）

    stable:           指数 alpha_s ∈ (0,1) 的单侧稳定过程，E[e^{-βS(t)}] = e^{-tβ^α}
    compound_poisson: 强度 jump_rate、均值 jump_mean 的指数跳复合 Poisson 过程
    drift_compound:   drift·t 加上复合 Poisson 部分，jump_rate = 0 时为确定性时间变换
    """

    kind: Literal["stable", "compound_poisson", "drift_compound"]
    alpha_s: Optional[float] = None
    jump_rate: float = 0.0
    jump_mean: float = 1.0
    drift: float = 0.0

    @model_validator(mode="after")
    def validate_kind(self):
        if self.kind == "stable":
            if self.alpha_s is None or not (0 < self.alpha_s < 1):
                raise ValueError(f"稳定从属子的指数 alpha_s 必须在 (0,1) 内，当前值: {self.alpha_s}")
        elif self.kind == "compound_poisson":
            if not (self.jump_rate > 0 and self.jump_mean > 0):
                raise ValueError("复合 Poisson 从属子要求 jump_rate > 0 且 jump_mean > 0")
        else:
            if self.drift < 0 or self.jump_rate < 0 or self.jump_mean <= 0:
                raise ValueError("drift 与 jump_rate 必须非负，jump_mean 必须为正")
            if self.drift == 0 and self.jump_rate == 0:
                raise ValueError("drift 与 jump_rate 不能同时为零")
        return self

    @classmethod
    def parse(cls, text: str) -> "SubordinatorSpec":
        """解析命令行写法: stable:0.5 / compound_poisson:1,1 / drift_compound:1,0,1"""
        kind, _, args = text.partition(":")
        values = [float(v) for v in args.split(",") if v.strip()]
        if kind == "stable":
            return cls(kind=kind, alpha_s=values[0] if values else None)
        if kind == "compound_poisson":
            return cls(kind=kind, **dict(zip(("jump_rate", "jump_mean"), values)))
        if kind == "drift_compound":
            return cls(kind=kind, **dict(zip(("drift", "jump_rate", "jump_mean"), values)))
        raise ValueError(f"未知从属子类型: {kind}")


class HittingEstimate(BaseModel):
    """进入 B_{r0}(x0) 的概率估计"""

    x: List[float]
    r0: float
    T: float
    n_paths: int
    n_hit: int
    n_dropped: int = 0
    p_hat: float
    ci_low: float
    ci_high: float
    escape_bound: Optional[float] = Field(None, description="永不进入概率的上界")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


class ExpFit(BaseModel):
    """sup_tv ≈ B̂ e^{-β̂ t}"""

    B_hat: float
    beta_hat: float
    residual: float = Field(..., description="log 空间均方根残差")
    n_points: int
    times: List[float] = Field(default_factory=list, description="参与拟合的时刻")
    non_decaying: bool = False


class TVMetadata(BaseModel):
    """TV 估计量元数据"""

    method: Literal["histogram", "projection"]
    bins: List[int] = Field(default_factory=list)
    n_projections: int = 0
    lower_bound: bool = False
    n_a: int = 0
    n_b: int = 0
    noise_floor: float = 0.0
    extra: Dict[str, Any] = Field(default_factory=dict)
