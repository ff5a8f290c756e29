"""测试公共夹具"""

import numpy as np
import pytest

from coxsense.config import ExperimentConfig
from coxsense.core.action_set import Region
from coxsense.core.basis import BasisModel, FunctionBasis, HatBasis, gamma_transform
from coxsense.core.kernels import Domain, KernelSpec, kernel_matrix
from coxsense.core.posterior import PosteriorModel


def _identity_model(m: int = 4, lower: float = 0.0, domain: Domain = None) -> BasisModel:
    """hat基 + Γ=I，特征即hat函数本身"""
    domain = domain or Domain(np.array([-1.0]), np.array([1.0]))
    raw = HatBasis(domain, m)
    kernel = KernelSpec(domain, lengthscale=1e-3)
    K = kernel_matrix(kernel, raw.nodes)
    eye = np.eye(raw.m)
    return BasisModel(raw=raw, kernel=kernel, gamma=eye, V=eye, K=K, K_clipped=K.entries.copy(), lower_bound=lower)


def _scalar_model(lower: float = 0.0) -> BasisModel:
    """[0,1]上只有一个常数基函数，Γ=[1]"""
    domain = Domain(np.array([0.0]), np.array([1.0]))
    raw = FunctionBasis(domain, np.array([[0.5]]), lambda pts: np.ones((len(pts), 1)))
    return gamma_transform(raw, KernelSpec(domain, lengthscale=0.1), lower_bound=lower)


def _experiment_config(**overrides) -> ExperimentConfig:
    """小规模实验配置，轮数与采样步数都很少"""
    data = {
        "basis": {"kind": "hat", "m": 12},
        "kernel": {"lengthscale": 0.4},
        "actions": {"max_depth": 2},
        "rounds": 3,
        "duration": 1.0,
        "lower_bound": 0.1,
        "sampler": {"steps": 60},
        "eval_grid": 64,
    }
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


@pytest.fixture
def unit_domain() -> Domain:
    return Domain(np.array([-1.0]), np.array([1.0]))


@pytest.fixture
def whole_region() -> Region:
    return Region(0, np.array([-1.0]), np.array([1.0]), 0, None)


@pytest.fixture
def identity_model():
    return _identity_model


@pytest.fixture
def scalar_model():
    return _scalar_model


@pytest.fixture
def posterior_of():
    """由基模型构造空日志后验"""

    def factory(model: BasisModel, lower: float = None) -> PosteriorModel:
        return PosteriorModel(model, lower_bound=lower)

    return factory


@pytest.fixture
def experiment_config():
    return _experiment_config
