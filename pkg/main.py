#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
遍历性证书工具启动脚本

使用方法:
    python main.py certify --catalog polynomial_drift --param kappa=2
    python main.py --help
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
