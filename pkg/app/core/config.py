"""应用程序配置模块

该模块定义了遍历性证书工具的所有配置项，包括日志、输出目录、
径向剖面与Λ积分的数值参数、Lyapunov漂移检验、Monte Carlo模拟
以及假设检验的采样预算。

配置项可以通过环境变量或.env文件进行设置，命令行参数优先级更高。
"""

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """应用程序配置类

    使用Pydantic BaseSettings自动从环境变量和.env文件加载配置。
    所有配置项都有合理的默认值，命令行参数和 --config 运行文件可以覆盖。
    """

    PROJECT_NAME: str = "ergocert"
    """项目名称，写入运行清单"""

    VERSION: str = "0.3.0"
    """工具版本号"""

    # 日志配置
    LOG_LEVEL: str = "INFO"
    """日志级别：DEBUG, INFO, WARNING, ERROR, CRITICAL"""

    LOG_FILE: str = "logs/ergocert.log"
    """日志文件路径"""

    # 输出与并行
    OUTPUT_DIR: str = "runs"
    """默认输出目录"""

    WORKERS: int = 0
    """并行工作线程数，0 表示使用全部CPU核数"""

    SEED: int = 20240601
    """主随机种子"""

    FLOAT_DIGITS: int = 17
    """CSV输出的有效数字位数"""

    # 径向剖面
    RADIAL_NODES: int = 1024
    """初始区间 [r0, 8·r0] 上的对数网格节点数"""

    SPHERE_SAMPLES: int = 256
    """每个球面上的准随机方向数"""

    SPHERE_TOP_K: int = 8
    """进入局部坐标下降的候选方向数"""

    SPHERE_TOL: float = 1e-10
    """球面坐标下降的步长容差"""

    SPHERE_MAX_ITER: int = 200
    """球面坐标下降最大迭代次数"""

    # Λ 积分
    CERT_TOL: float = 1e-4
    """Λ 的相对收敛容差"""

    RMAX_DOUBLINGS: int = 12
    """截断半径最多加倍次数"""

    RMAX_INITIAL_FACTOR: float = 8.0
    """初始截断半径 Rmax = 因子 · r0"""

    TAIL_SLOPE_TOL: float = 0.05
    """幂律尾部斜率判定发散的容差（斜率 ≥ -1 - 容差 视为发散）"""

    TAIL_MIN_SAMPLES: int = 16
    """尾部拟合所需最少样本数"""

    # Lyapunov 函数
    R1_FACTOR: float = 2.0
    """小集半径 r1 = 因子 · r0"""

    ESCAPE_EPS_FRACTION: float = 0.5
    """逃逸概率界中 ε = 比例 · r0"""

    C2_SAMPLES: int = 4096
    """估计 c2 时在闭球内的采样点数"""

    DRIFT_CHECK_SAMPLES: int = 10000
    """漂移不等式检验的分层采样点数"""

    DRIFT_CHECK_RADIUS_FACTOR: float = 8.0
    """漂移检验的最大半径 = 因子 · r1（不超过 Rmax）"""

    # Monte Carlo 模拟
    OVERFLOW_GUARD: float = 1e8
    """路径溢出阈值，|x| 超过该值的路径被剔除"""

    MAX_DROP_FRACTION: float = 1e-3
    """剔除路径比例超过该值时本次运行标记为无效"""

    SIM_CHUNK_PATHS: int = 8192
    """每个随机子流负责的路径数"""

    TV_PROJECTIONS: int = 32
    """d > 3 时TV估计使用的随机投影数"""

    TV_MAX_BINS: int = 256
    """每个维度的直方图最大箱数"""

    TV_MIN_SAMPLES: int = 1000
    """TV估计要求的最小样本量"""

    FIT_FLAT_RATE: float = 1e-3
    """指数拟合速率低于该值时标记为不衰减"""

    SUBORDINATE_HORIZON_FACTOR: float = 10.0
    """从属过程随机时间的截断上限 = 因子 · T"""

    # 假设检验
    CHECK_SAMPLES: int = 4096
    """每个假设检验的采样点数"""

    ONESIDED_LEVELS: int = 20
    """(A2) 点对距离细化层数"""

    ONESIDED_TOP_K: int = 32
    """(A2) 每层保留并细化的最差点对数"""

    GROWTH_LEVELS: int = 8
    """(A3) 半径加倍层数"""

    class Config:
        """Pydantic配置类"""
        env_file = ".env"
        case_sensitive = True


# 全局配置实例
settings = Settings()
