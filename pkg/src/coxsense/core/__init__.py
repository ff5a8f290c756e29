"""
CoxSense核心模块

- kernels / basis: 协方差核与Γ变换后的正基
- posterior: 截断GP Cox过程的后验（MAP、Laplace置信界）
- samplers: MYULA与镜像Langevin采样、泊松过程模拟
- action_set / protocol: 层次区域动作集与感知循环
- harness: 指标、拟合真值与多种子套件
"""

from .action_set import ActionSet, CostModel, Region, build_action_set
from .acquisition_registry import AcquisitionBase, Selection, acquisition_registry
from .basis import BasisModel, RegionIntegrals, gamma_transform, region_integrals
from .harness import SuiteResult, fit_ground_truth, run_suite
from .kernels import Domain, KernelSpec, build_kernel, psd_sqrt
from .metrics_collector import MetricsCollector
from .posterior import CredibleParams, ObservationLog, PosteriorModel
from .protocol import EpisodeRecord, Experiment, build_basis, run_protocol
from .samplers import MirrorSampler, MyulaSampler, simulate_point_process
from .streams import RandomStreams

__all__ = [
    "ActionSet",
    "CostModel",
    "Region",
    "build_action_set",
    "AcquisitionBase",
    "Selection",
    "acquisition_registry",
    "BasisModel",
    "RegionIntegrals",
    "gamma_transform",
    "region_integrals",
    "SuiteResult",
    "fit_ground_truth",
    "run_suite",
    "Domain",
    "KernelSpec",
    "build_kernel",
    "psd_sqrt",
    "MetricsCollector",
    "CredibleParams",
    "ObservationLog",
    "PosteriorModel",
    "EpisodeRecord",
    "Experiment",
    "build_basis",
    "run_protocol",
    "MirrorSampler",
    "MyulaSampler",
    "simulate_point_process",
    "RandomStreams",
]
