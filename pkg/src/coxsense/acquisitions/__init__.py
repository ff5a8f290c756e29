"""
采集策略模块

导入即注册到全局采集策略注册表
"""

from ..core.acquisition_registry import acquisition_registry
from .baselines import EpsilonGreedy, RandomAcquisition
from .cox_thompson import CoxThompson
from .top2 import Top2
from .ucb_laplace import UcbLaplace
from .v_optimal import VOptimal

# 后验采样类策略
SAMPLING_ACQUISITIONS = [CoxThompson, Top2]

# 基于Laplace置信集的策略
OPTIMISM_ACQUISITIONS = [UcbLaplace, VOptimal]

BASELINE_ACQUISITIONS = [EpsilonGreedy, RandomAcquisition]

ALL_ACQUISITIONS = SAMPLING_ACQUISITIONS + OPTIMISM_ACQUISITIONS + BASELINE_ACQUISITIONS

__all__ = [
    "acquisition_registry",
    "ALL_ACQUISITIONS",
    "CoxThompson",
    "Top2",
    "UcbLaplace",
    "VOptimal",
    "EpsilonGreedy",
    "RandomAcquisition",
]
