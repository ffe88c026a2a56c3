from typing import Any, Dict, List

from pydantic import BaseModel, Field


class OutputFile(BaseModel):
    """运行产出的文件及其校验和"""

    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """运行目录清单"""

    tool: str
    version: str
    command: str
    commands: List[str] = Field(default_factory=list, description="写入过该目录的命令，按顺序")
    model_name: str = ""
    model_checksum: str = ""
    config: Dict[str, Any] = Field(default_factory=dict, description="各命令合并后的完整配置")
    seeds: Dict[str, int] = Field(default_factory=dict)
    files: List[OutputFile] = Field(default_factory=list)
    stages: Dict[str, float] = Field(default_factory=dict, description="各阶段耗时（秒）")
    exit_code: int = 0

    model_config = {"protected_namespaces": ()}
