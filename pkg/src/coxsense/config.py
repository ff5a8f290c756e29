"""
CoxSense配置管理

两层配置：
- RuntimeSettings: 进程级运行参数（worker数量、日志级别、输出目录），来自环境变量 COXSENSE_*
- ExperimentConfig: 单个实验的完整描述，YAML文件，严格校验（未知字段直接拒绝）
"""

import hashlib
import os
import re
from pathlib import Path
from typing import List, Literal, Optional, Union

import orjson
import yaml
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigurationError


ALGORITHM_NAMES = ("thompson", "top2", "ucb", "v_optimal", "epsilon_greedy", "random")
ANALYTIC_TRUTH_PATTERN = re.compile(r"^(toy|bumps|bumps2d|constant:[0-9eE.+-]+)$")


class RuntimeSettings(BaseSettings):
    """进程级运行配置"""
    model_config = SettingsConfigDict(env_prefix="COXSENSE_", extra="ignore")

    jobs: int = Field(1, ge=1, description="并行worker数量")
    log_level: str = Field("INFO", description="日志级别")
    output_dir: str = Field("outputs", description="默认输出目录")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DomainConfig(_Strict):
    """矩形定义域"""
    lower: List[float] = Field([-1.0], description="各维下界")
    upper: List[float] = Field([1.0], description="各维上界")

    @model_validator(mode="after")
    def _check_box(self) -> "DomainConfig":
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("domain.lower与domain.upper维度必须一致且非空")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("每一维都需要 lower < upper")
        return self


class LengthscaleFieldConfig(_Strict):
    """Gibbs核的长度尺度场"""
    kind: Literal["linear", "table"] = Field("linear", description="linear: 沿第一维线性变化; table: CSV查表")
    start: float = Field(0.05, gt=0, description="下界处的长度尺度")
    end: float = Field(0.5, gt=0, description="上界处的长度尺度")
    path: Optional[str] = Field(None, description="长度尺度表CSV路径（kind=table）")

    @model_validator(mode="after")
    def _check_table(self) -> "LengthscaleFieldConfig":
        if self.kind == "table" and not self.path:
            raise ValueError("kind=table 需要提供 path")
        return self


class KernelConfig(_Strict):
    """协方差核"""
    family: Literal["squared_exponential", "laplace", "gibbs", "product", "feature"] = Field(
        "squared_exponential", description="核族"
    )
    lengthscale: float = Field(0.1, gt=0, description="长度尺度γ")
    lengthscales: Optional[List[float]] = Field(None, description="product核的逐维长度尺度")
    lengthscale_field: Optional[LengthscaleFieldConfig] = Field(None, description="Gibbs核长度尺度场")
    variance: float = Field(1.0, gt=0, description="方差尺度σ²")
    indicator: Optional[str] = Field(None, description="指示权重w(x)的CSV表")
    features: Optional[str] = Field(None, description="feature核的特征表CSV")

    @field_validator("lengthscales")
    @classmethod
    def _positive_scales(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(v <= 0 for v in value):
            raise ValueError("lengthscales 必须全部为正")
        return value

    @model_validator(mode="after")
    def _check_family(self) -> "KernelConfig":
        if self.family == "feature" and not self.features:
            raise ValueError("feature核需要提供 features 表")
        return self


class BasisConfig(_Strict):
    """正基配置"""
    kind: Literal["hat", "bernstein", "nmf"] = Field("hat", description="基类型")
    m: int = Field(64, ge=1, description="hat/bernstein为每维基数, nmf为总基数")
    quadrature_order: int = Field(32, ge=1, le=256, description="每维Gauss-Legendre阶数")
    nmf_grid: Optional[int] = Field(None, ge=2, description="NMF网格大小（默认1维256, 2维每维64）")
    nmf_samples: Optional[int] = Field(None, ge=1, description="截断GP样本数（默认20m）")
    nmf_iterations: int = Field(500, ge=1, description="HALS迭代次数")
    rejection_budget: int = Field(100000, ge=1, description="拒绝采样总抽样预算")
    path: Optional[str] = Field(None, description="已保存NMF基的CSV路径")
    seed: Optional[int] = Field(None, ge=0, description="NMF基随机种子（默认取根种子）")


class ActionConfig(_Strict):
    """层次动作集"""
    max_depth: int = Field(7, ge=0, le=16, description="最大划分深度D")
    include_ancestors: bool = Field(False, description="是否包含祖先区域")


class CostConfig(_Strict):
    """代价模型"""
    kind: Literal["uniform", "fixed"] = Field("uniform", description="uniform: C1|A|; fixed: C1|A|+C2")
    c1: float = Field(1.0, ge=0, description="体积系数C1")
    c2: float = Field(0.0, ge=0, description="固定代价C2")

    @model_validator(mode="after")
    def _positive_cost(self) -> "CostConfig":
        if self.c1 <= 0 and (self.kind == "uniform" or self.c2 <= 0):
            raise ValueError("代价必须严格为正（C1>0 或 fixed且C2>0）")
        return self


class AlgorithmConfig(_Strict):
    """采集算法及参数"""
    name: str = Field("thompson", description="算法名")
    label: Optional[str] = Field(None, description="输出中的算法标签（参数扫描时区分）")
    objective: Literal["maximum", "levelset"] = Field("maximum", description="最大值搜索或水平集识别")
    beta: float = Field(3.0, gt=0, description="置信椭球半径β")
    epsilon0: float = Field(1.0, ge=0, description="ε-greedy初始探索率")
    n_resamples: int = Field(10, ge=1, description="V-optimal泊松重采样次数")
    resample_cap: int = Field(50, ge=1, description="Top2重采样上限")
    thompson_ignore_cost: bool = Field(False, description="Cox-Thompson忽略代价（取argmax ψᵀθ）")
    levelset_roi: Literal["lcb", "ucb"] = Field("lcb", description="V-optimal水平集关注区域: lcb≥τ 或 ucb≥τ")

    @field_validator("name")
    @classmethod
    def _known_algorithm(cls, value: str) -> str:
        if value not in ALGORITHM_NAMES:
            raise ValueError(f"未知算法 '{value}'，可选: {', '.join(ALGORITHM_NAMES)}")
        return value

    @property
    def display_name(self) -> str:
        return self.label or self.name


class SamplerConfig(_Strict):
    """后验采样器"""
    kind: Literal["myula", "mirror"] = Field("myula", description="采样器后端")
    steps: int = Field(1000, ge=1, description="Langevin步数")
    burn_in: float = Field(0.5, ge=0, lt=1, description="丢弃的burn-in比例")
    step_size: Optional[float] = Field(None, gt=0, le=1, description="步长η（默认1/(L+1)）")
    envelope: Optional[float] = Field(None, gt=0, description="Moreau包络参数（默认等于η）")
    power_iterations: int = Field(50, ge=1, description="幂迭代次数")
    upper_bound: Optional[float] = Field(None, gt=0, description="mirror采样器的系数上界u")


class SweepConfig(_Strict):
    """单个算法参数的扫描，每个取值作为独立的算法标签"""
    algorithm: AlgorithmConfig = Field(default_factory=AlgorithmConfig, description="被扫描的算法")
    parameter: Literal["beta", "epsilon0", "n_resamples", "resample_cap"] = Field("beta", description="扫描参数")
    values: List[float] = Field(..., min_length=1, description="参数取值")

    def expand(self) -> List[AlgorithmConfig]:
        expanded = []
        for value in self.values:
            cast = int(value) if self.parameter in ("n_resamples", "resample_cap") else float(value)
            label = f"{self.algorithm.display_name}[{self.parameter}={value:g}]"
            expanded.append(AlgorithmConfig.model_validate(
                {**self.algorithm.model_dump(), self.parameter: cast, "label": label}
            ))
        return expanded


class SuiteConfig(_Strict):
    """多种子实验套件"""
    algorithms: List[AlgorithmConfig] = Field(default_factory=list, description="参与比较的算法")
    sweeps: List[SweepConfig] = Field(default_factory=list, description="参数扫描")
    seeds: Optional[List[int]] = Field(None, description="显式种子列表")
    repetitions: int = Field(10, ge=1, description="未给seeds时的重复次数")

    def resolved_seeds(self, base_seed: int) -> List[int]:
        if self.seeds:
            return list(self.seeds)
        return [base_seed + i for i in range(self.repetitions)]

    def resolved_algorithms(self, default: AlgorithmConfig) -> List[AlgorithmConfig]:
        """显式算法 + 扫描展开；都为空时用实验的默认算法"""
        algorithms = list(self.algorithms)
        for sweep in self.sweeps:
            algorithms.extend(sweep.expand())
        return algorithms or [default]


class ExperimentConfig(_Strict):
    """实验配置"""
    domain: DomainConfig = Field(default_factory=DomainConfig)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    basis: BasisConfig = Field(default_factory=BasisConfig)
    lower_bound: float = Field(0.1, ge=0, description="强度下界l")
    threshold: Optional[float] = Field(None, gt=0, description="水平集阈值τ")
    duration: float = Field(5.0, gt=0, description="每轮感知时长Δ")
    actions: ActionConfig = Field(default_factory=ActionConfig)
    cost: CostConfig = Field(default_factory=CostConfig)
    algorithm: AlgorithmConfig = Field(default_factory=AlgorithmConfig)
    budget: Optional[float] = Field(None, ge=0, description="总预算C（空为不限）")
    rounds: int = Field(400, ge=0, description="轮数上限T")
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    truth: str = Field("toy", description="地面真值: toy | bumps | bumps2d | constant:c | 拟合文件路径")
    events: Optional[str] = Field(None, description="fit命令的事件CSV")
    data_duration: Optional[float] = Field(None, description="事件数据时长（缺省取时间跨度）")
    eval_grid: Optional[int] = Field(None, ge=2, description="评估网格每维大小（默认1维512, 2维128）")
    seed: int = Field(0, ge=0, description="根随机种子")
    output_dir: str = Field("outputs", description="输出目录")
    suite: Optional[SuiteConfig] = Field(None, description="套件配置")

    @model_validator(mode="after")
    def _cross_checks(self) -> "ExperimentConfig":
        d = len(self.domain.lower)
        if self.kernel.lengthscales is not None and len(self.kernel.lengthscales) != d:
            raise ValueError("kernel.lengthscales 长度必须等于定义域维度")
        algorithms = [self.algorithm] + (self.suite.resolved_algorithms(self.algorithm) if self.suite else [])
        if any(a.objective == "levelset" for a in algorithms) and self.threshold is None:
            raise ValueError("levelset目标需要设置 threshold")
        if self.sampler.kind == "mirror" and self.sampler.upper_bound is None:
            raise ValueError("mirror采样器需要设置 sampler.upper_bound")
        if self.sampler.upper_bound is not None and self.sampler.upper_bound <= self.lower_bound:
            raise ValueError("sampler.upper_bound 必须大于 lower_bound")
        for path in self.referenced_files():
            if not Path(path).exists():
                raise ValueError(f"引用的文件不存在: {path}")
        return self

    @property
    def dimension(self) -> int:
        return len(self.domain.lower)

    def referenced_files(self) -> List[str]:
        files = [self.kernel.indicator, self.kernel.features, self.basis.path, self.events]
        if self.kernel.lengthscale_field is not None:
            files.append(self.kernel.lengthscale_field.path)
        if not ANALYTIC_TRUTH_PATTERN.match(self.truth):
            files.append(self.truth)
        return [f for f in files if f]

    def config_hash(self) -> str:
        """规范化JSON（键排序，不含输出目录）的sha256摘要"""
        payload = orjson.dumps(self.model_dump(mode="json", exclude={"output_dir"}), option=orjson.OPT_SORT_KEYS)
        return hashlib.sha256(payload).hexdigest()[:16]

    def with_algorithm(self, algorithm: AlgorithmConfig, seed: Optional[int] = None) -> "ExperimentConfig":
        update = {"algorithm": algorithm, "suite": None}
        if seed is not None:
            update["seed"] = seed
        return self.model_copy(update=update)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            return cls.model_validate(data or {})
        except ValidationError as e:
            fields = [".".join(str(p) for p in err["loc"]) + f": {err['msg']}" for err in e.errors()]
            raise ConfigurationError("配置校验失败", {"errors": fields}) from e

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """从YAML文件加载"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except FileNotFoundError as e:
            raise ConfigurationError(f"配置文件不存在: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigurationError(f"YAML解析失败: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise ConfigurationError("配置文件顶层必须是映射")
        config = cls.from_dict(data)
        logger.debug(f"加载实验配置 {path} (hash={config.config_hash()})")
        return config

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False, allow_unicode=True)

    def save_yaml(self, path: Union[str, Path]):
        Path(path).write_text(self.to_yaml(), encoding="utf-8")


# 全局配置实例
_global_config: Optional[RuntimeSettings] = None


def get_config() -> RuntimeSettings:
    """获取全局运行配置实例"""
    global _global_config
    if _global_config is None:
        # 加载本地的.env文件（如果存在）
        if os.path.exists(".env"):
            load_dotenv(".env")
        _global_config = RuntimeSettings()
        logger.debug(f"从环境变量加载运行配置: jobs={_global_config.jobs}")
    return _global_config


def set_config(config: Optional[RuntimeSettings]):
    """设置全局运行配置实例（None表示重新从环境加载）"""
    global _global_config
    _global_config = config
