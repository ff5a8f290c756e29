"""
采集策略注册模块

提供采集策略的基类、注册、发现与按配置实例化
"""

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Type

import numpy as np
from loguru import logger

from ..errors import ConfigurationError

if TYPE_CHECKING:
    from ..config import AlgorithmConfig
    from .action_set import Region
    from .protocol import ProtocolState

TIE_RTOL = 1e-9


@dataclass
class Selection:
    """一轮的采集结果"""
    region: "Region"
    flags: Dict[str, Any] = field(default_factory=dict)


def best_index(scores: np.ndarray, maximize: bool = True) -> int:
    """最优分数的下标；相对误差TIE_RTOL内视为并列，取最小下标（即最小区域id）"""
    scores = np.asarray(scores, dtype=float)
    values = scores if maximize else -scores
    top = float(np.max(values))
    tol = TIE_RTOL * max(1.0, abs(top))
    return int(np.flatnonzero(values >= top - tol)[0])


class AcquisitionBase(ABC):
    """采集策略基类"""

    name: str = ""
    description: str = ""
    needs_samples: bool = False

    def __init__(self, config: "AlgorithmConfig"):
        """初始化采集策略

        Args:
            config: 算法配置（β、ε₀、重采样次数等）
        """
        self.config = config
        self.enabled = True
        self.execution_count = 0
        self.last_execution_time: Optional[float] = None
        self.flag_counts: Dict[str, int] = {}

        logger.debug(f"采集策略 {self.name} 初始化完成")

    @property
    def label(self) -> str:
        return self.config.display_name

    def select(self, state: "ProtocolState") -> Selection:
        """选择本轮感知区域"""
        started = time.perf_counter()
        selection = self._select(state)
        self.execution_count += 1
        self.last_execution_time = time.perf_counter() - started
        for flag, value in selection.flags.items():
            if value is True:
                self.flag_counts[flag] = self.flag_counts.get(flag, 0) + 1
        return selection

    @abstractmethod
    def _select(self, state: "ProtocolState") -> Selection:
        pass

    def get_stats(self) -> Dict[str, Any]:
        """获取策略统计信息"""
        return {
            "name": self.name,
            "label": self.label,
            "description": self.description,
            "execution_count": self.execution_count,
            "last_execution_time": self.last_execution_time,
            "flags": dict(self.flag_counts),
        }


class AcquisitionRegistry:
    """采集策略注册表"""

    def __init__(self):
        self._classes: Dict[str, Type[AcquisitionBase]] = {}
        self._categories: Dict[str, List[str]] = {}

    def register(self, cls: Type[AcquisitionBase], category: str = "default") -> Type[AcquisitionBase]:
        """注册策略类

        Args:
            cls: 策略类（name类属性为注册名）
            category: 策略分类

        Returns:
            Type[AcquisitionBase]: 原样返回，便于用作装饰器
        """
        if cls.name in self._classes:
            logger.warning(f"采集策略 {cls.name} 已存在，将替换")
        self._classes[cls.name] = cls
        names = self._categories.setdefault(category, [])
        if cls.name not in names:
            names.append(cls.name)
        logger.debug(f"采集策略 {cls.name} 注册成功，分类: {category}")
        return cls

    def unregister(self, name: str) -> bool:
        if name not in self._classes:
            logger.warning(f"采集策略 {name} 不存在")
            return False
        for names in self._categories.values():
            if name in names:
                names.remove(name)
        del self._classes[name]
        return True

    def get(self, name: str) -> Optional[Type[AcquisitionBase]]:
        return self._classes.get(name)

    def create(self, config: "AlgorithmConfig") -> AcquisitionBase:
        """按算法配置实例化策略"""
        cls = self.get(config.name)
        if cls is None:
            raise ConfigurationError(
                f"未知算法 '{config.name}'，可选: {', '.join(self.names())}",
                {"valid": self.names()},
            )
        return cls(config)

    def names(self, category: Optional[str] = None) -> List[str]:
        if category:
            return list(self._categories.get(category, []))
        return list(self._classes)

    def get_categories(self) -> List[str]:
        return list(self._categories)

    def get_stats(self) -> Dict[str, Any]:
        return {
            "total": len(self._classes),
            "categories": {c: len(n) for c, n in self._categories.items()},
        }


# 全局注册表实例
acquisition_registry = AcquisitionRegistry()


def register_acquisition(category: str = "default"):
    """类装饰器：注册到全局注册表"""

    def decorator(cls: Type[AcquisitionBase]) -> Type[AcquisitionBase]:
        return acquisition_registry.register(cls, category)

    return decorator
