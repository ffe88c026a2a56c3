from pydantic import BaseModel, Field

from app.core.config import settings


class SphereOptConfig(BaseModel):
    """球面极值搜索配置"""

    n_samples: int = Field(default_factory=lambda: settings.SPHERE_SAMPLES, ge=2, description="每个球面的方向数")
    n_refine: int = Field(default_factory=lambda: settings.SPHERE_TOP_K, ge=1, description="局部细化的候选数")
    tol: float = Field(default_factory=lambda: settings.SPHERE_TOL, gt=0, description="细化步长容差")
    max_iter: int = Field(default_factory=lambda: settings.SPHERE_MAX_ITER, ge=1, description="细化最大迭代次数")
    seed: int = Field(default_factory=lambda: settings.SEED, description="方向序列种子")

    model_config = {"frozen": True}
