"""
CoxSense: Cox过程的自适应感知

截断高斯过程强度的正基近似、约束MAP推断、Langevin后验采样，
以及在模拟真值上运行的序贯感知算法（Cox-Thompson、Top2、UCB-Laplace、V-optimal、ε-greedy、随机）。
"""

__version__ = "1.0.0"

from .config import ExperimentConfig, RuntimeSettings, get_config
from .errors import CoxSenseError, ErrorHandler

__all__ = ["ExperimentConfig", "RuntimeSettings", "get_config", "CoxSenseError", "ErrorHandler", "__version__"]
