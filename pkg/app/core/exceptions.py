import json
import math
import sys
import traceback
from functools import wraps
from typing import Any, Dict, Optional, Sequence

from loguru import logger


class ErgodicityException(Exception):
    """遍历性证书系统基础异常类"""

    def __init__(self, message: str, code: str = "ERGOCERT_ERROR", details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.code = code
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}

class ExprSyntaxError(ErgodicityException):
    """表达式语法错误，带字节偏移"""

    def __init__(self, message: str, offset: int, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details["offset"] = offset
        self.offset = offset
        super().__init__(message, "EXPR_SYNTAX_ERROR", details)

class UnknownIdentifierError(ErgodicityException):
    """未知标识符或坐标下标越界"""

    def __init__(self, message: str, name: str, offset: int, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details["name"] = name
        details["offset"] = offset
        self.offset = offset
        super().__init__(message, "UNKNOWN_IDENTIFIER", details)

class DomainError(ErgodicityException):
    """表达式求值定义域错误（除零、负底数非整数次幂、ln/sqrt 参数越界）"""

    def __init__(self, message: str, operation: str, index: Optional[int] = None,
                 details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details["operation"] = operation
        if index is not None:
            details["index"] = index
        self.operation = operation
        self.index = index
        super().__init__(message, "DOMAIN_ERROR", details)

class PreconditionError(ErgodicityException):
    """操作前置条件不满足"""

    def __init__(self, message: str, field: str = None, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        if field:
            details["field"] = field
        super().__init__(message, "PRECONDITION_ERROR", details)

class AssumptionViolation(ErgodicityException):
    """假设 (A1)-(A5) 被证伪，携带见证点"""

    def __init__(self, message: str, assumption: str, witness: Sequence[float],
                 details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details["assumption"] = assumption
        details["witness"] = [float(v) for v in witness]
        self.assumption = assumption
        self.witness = details["witness"]
        super().__init__(message, "ASSUMPTION_VIOLATION", details)

class CertificateRefused(ErgodicityException):
    """证书结论不是 FINITE 时拒绝构造 Lyapunov 函数"""

    def __init__(self, message: str, verdict: str, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details["verdict"] = verdict
        super().__init__(message, "CERTIFICATE_REFUSED", details)

class FitRefused(ErgodicityException):
    """可用数据点不足，拒绝拟合"""

    def __init__(self, message: str, n_usable: int, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        details["n_usable"] = n_usable
        super().__init__(message, "FIT_REFUSED", details)

class SimulationException(ErgodicityException):
    """模拟异常"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "SIMULATION_ERROR", details)

class ValidationException(ErgodicityException):
    """数据验证异常"""

    def __init__(self, message: str, field: str = None, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        if field:
            details["field"] = field
        super().__init__(message, "VALIDATION_ERROR", details)

class ConfigurationException(ErgodicityException):
    """配置异常"""

    def __init__(self, message: str, config_key: str = None, details: Optional[Dict[str, Any]] = None):
        details = details or {}
        if config_key:
            details["config_key"] = config_key
        super().__init__(message, "CONFIGURATION_ERROR", details)


# 装饰器：命令行入口的异常到退出码转换
def handle_exceptions(func):
    """异常处理装饰器

    自定义异常写成 JSON 到 stderr 并返回退出码 1，
    未处理异常记录堆栈后同样返回 1。
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ErgodicityException as exc:
            logger.error(f"命令 {func.__name__} 失败: {exc.code} - {exc.message}, 详情: {exc.details}")
            print(json.dumps({"error": exc.to_dict()}, ensure_ascii=False), file=sys.stderr)
            return 1
        except Exception as exc:
            logger.error(
                f"命令 {func.__name__} 发生未处理异常: {type(exc).__name__} - {exc}\n"
                f"堆栈跟踪:\n{traceback.format_exc()}"
            )
            print(json.dumps({"error": {"code": "INTERNAL_ERROR", "message": str(exc),
                                        "details": {"type": type(exc).__name__}}},
                             ensure_ascii=False), file=sys.stderr)
            return 1

    return wrapper


# 验证函数
def validate_positive(value: float, field_name: str) -> float:
    """验证数值为有限正数"""
    validate_finite(value, field_name)
    if value <= 0:
        raise ValidationException(f"{field_name}必须大于0，当前值: {value}", field_name)
    return float(value)

def validate_finite(value: float, field_name: str) -> float:
    """验证数值有限"""
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValidationException(f"{field_name}不是数值: {value!r}", field_name)
    if not math.isfinite(v):
        raise ValidationException(f"{field_name}必须是有限数值，当前值: {value}", field_name)
    return v

def validate_dimension(point: Sequence[float], d: int, field_name: str = "x") -> list:
    """验证点的维数与模型一致"""
    if len(point) != d:
        raise ValidationException(f"{field_name}维数应为{d}，实际为{len(point)}", field_name)
    return [validate_finite(v, field_name) for v in point]
