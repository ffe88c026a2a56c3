from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

FALSIFICATION_BANNER = "抽样证伪：VIOLATED 附带可复现的见证点；NOT_FALSIFIED 只表示在给定样本预算内未发现反例，并不证明假设成立"


class AssumptionStatus(str, Enum):
    """假设检验状态"""
    NOT_FALSIFIED = "NOT_FALSIFIED"
    VIOLATED = "VIOLATED"


class Witness(BaseModel):
    """违反假设的见证点

    kind 决定 replay 时重新计算的量:
    - nonfinite:  系数在 points[0] 处求值失败或不是有限数
    - growth:     (2⟨x,b⟩+‖σ‖²)/(1+|x|²) 在 points 上随半径发散
    - onesided:   点对 (points[2k], points[2k+1]) 的单侧 Lipschitz 比值随距离缩小而发散
    - eigen:      σσᵀ 在 points[0] 处的最小特征值 ≤ 0
    """

    kind: Literal["nonfinite", "growth", "onesided", "eigen"]
    points: List[List[float]]
    values: List[float] = Field(default_factory=list, description="各见证点上的检验量")
    margin: float = Field(0.0, description="不等式违背量，replay 时应在 1e-12 内复现")


class AssumptionReport(BaseModel):
    """(A1)-(A5) 单项检验报告"""

    assumption: Literal["A1", "A2", "A3", "A4", "A5"]
    status: AssumptionStatus
    banner: str = FALSIFICATION_BANNER
    region: str = ""
    radius: Optional[float] = None
    n_samples: int = 0
    seed: int = 0
    witness: Optional[Witness] = None
    constants: Dict[str, Any] = Field(default_factory=dict, description="拟合常数")
    table: List[Dict[str, float]] = Field(default_factory=list, description="逐层拟合表")
    message: str = ""

    @property
    def violated(self) -> bool:
        return self.status == AssumptionStatus.VIOLATED
