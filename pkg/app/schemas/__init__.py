# 结果与配置的 Pydantic 模型
from .assumption import AssumptionReport, AssumptionStatus, Witness
from .certificate import Certificate, DriftCheckReport, TailModel, Verdict
from .manifest import OutputFile, RunManifest
from .model import ModelFile
from .radial import SphereOptConfig
from .simulation import ExpFit, HittingEstimate, SimConfig, SubordinatorSpec, TVMetadata

__all__ = [
    "AssumptionReport",
    "AssumptionStatus",
    "Witness",
    "Certificate",
    "DriftCheckReport",
    "TailModel",
    "Verdict",
    "OutputFile",
    "RunManifest",
    "ModelFile",
    "SphereOptConfig",
    "ExpFit",
    "HittingEstimate",
    "SimConfig",
    "SubordinatorSpec",
    "TVMetadata",
]
