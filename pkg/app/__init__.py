"""Itô 扩散一致遍历性证书与模拟工具"""

from app.core.config import settings

__version__ = settings.VERSION
