"""运行目录输出

CSV 数值统一用 17 位有效数字，JSON 浮点数用最短的可逆十进制表示，与区域设置无关。
每个命令结束时写出 manifest.json，列出所有输出文件的 sha256。
"""

from contextlib import contextmanager
from enum import Enum
import hashlib
import json
import math
from pathlib import Path
import time
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.core.config import settings
from app.core.logging import cli_logger as logger
from app.schemas.manifest import OutputFile, RunManifest

MANIFEST_NAME = "manifest.json"


def to_jsonable(obj: Any) -> Any:
    """pydantic 模型、numpy 数组和标量转为 JSON 兼容对象；非有限浮点数写为 null"""
    if isinstance(obj, BaseModel):
        return to_jsonable(obj.model_dump(mode="python", by_alias=True))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_json(obj: Any, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(obj), indent=2, ensure_ascii=False, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_csv(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=f"%.{settings.FLOAT_DIGITS}g", lineterminator="\n")
    return path


def read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class RunRecorder:
    """运行目录：登记输出文件、记录阶段耗时、写出清单"""

    def __init__(self, out_dir, command: str, version: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        existing = self.out_dir / MANIFEST_NAME
        if existing.exists():
            # 同一目录中先后运行的命令共用一份清单
            self.manifest = RunManifest.model_validate(read_json(existing))
            self.manifest.command = command
            self.manifest.version = version
        else:
            self.manifest = RunManifest(tool=settings.PROJECT_NAME, version=version, command=command)
        self.manifest.commands.append(command)
        self.command = command

    def path(self, name: str) -> Path:
        return self.out_dir / name

    @contextmanager
    def stage(self, name: str):
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            key = f"{self.command}.{name}"
            self.manifest.stages[key] = self.manifest.stages.get(key, 0.0) + elapsed
            logger.debug(f"阶段 {name} 用时 {elapsed:.3f}s")

    def json(self, name: str, obj: Any) -> Path:
        return self._register(write_json(obj, self.path(name)))

    def csv(self, name: str, df: pd.DataFrame) -> Path:
        return self._register(write_csv(df, self.path(name)))

    def text(self, name: str, content: str) -> Path:
        path = self.path(name)
        path.write_text(content if content.endswith("\n") else content + "\n", encoding="utf-8")
        return self._register(path)

    def _register(self, path: Path) -> Path:
        rel = path.relative_to(self.out_dir).as_posix()
        self.manifest.files = [f for f in self.manifest.files if f.path != rel]
        self.manifest.files.append(OutputFile(path=rel, sha256=sha256_file(path), bytes=path.stat().st_size))
        return path

    def finish(self, exit_code: int, config: Optional[Dict[str, Any]] = None) -> Path:
        self.manifest.exit_code = int(exit_code)
        if config is not None:
            self.manifest.config[self.command] = to_jsonable(config)
        path = write_json(self.manifest, self.path(MANIFEST_NAME))
        logger.info(f"输出目录 {self.out_dir}: {len(self.manifest.files)} 个文件")
        return path


def verify_manifest(out_dir) -> Dict[str, bool]:
    """逐个文件核对清单记录的校验和"""
    out_dir = Path(out_dir)
    manifest = RunManifest.model_validate(read_json(out_dir / MANIFEST_NAME))
    return {
        f.path: (out_dir / f.path).exists() and sha256_file(out_dir / f.path) == f.sha256
        for f in manifest.files
    }
