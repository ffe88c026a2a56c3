import math
from typing import Dict, List

from pydantic import BaseModel, Field, model_validator


class ModelFile(BaseModel):
    """模型文件（JSON）结构"""

    name: str = Field(..., description="模型名称")
    d: int = Field(..., ge=1, description="状态维数")
    n: int = Field(..., ge=1, description="噪声维数")
    x0: List[float] = Field(..., description="中心点 x0")
    r0: float = Field(..., gt=0, description="半径 r0")
    params: Dict[str, float] = Field(default_factory=dict, description="命名参数表")
    drift: List[str] = Field(..., description="漂移表达式，共 d 个")
    diffusion: List[List[str]] = Field(..., description="扩散矩阵表达式，d 行 n 列")

    @model_validator(mode="after")
    def check_shapes(self):
        if len(self.x0) != self.d:
            raise ValueError(f"x0 维数应为 {self.d}，实际为 {len(self.x0)}")
        if len(self.drift) != self.d:
            raise ValueError(f"drift 应有 {self.d} 个表达式，实际为 {len(self.drift)}")
        if len(self.diffusion) != self.d or any(len(row) != self.n for row in self.diffusion):
            raise ValueError(f"diffusion 应为 {self.d}×{self.n} 表达式矩阵")
        if not all(math.isfinite(v) for v in self.x0):
            raise ValueError("x0 必须是有限数值")
        for key, value in self.params.items():
            if not math.isfinite(value):
                raise ValueError(f"参数 {key} 必须是有限数值")
        return self
