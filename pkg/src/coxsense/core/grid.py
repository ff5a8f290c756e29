"""评估网格：单元中点 + 单元体积权重"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import tensor_grid
from .kernels import Domain

DEFAULT_RESOLUTION = {1: 512, 2: 128}


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    domain: Domain
    resolution: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def shape(self):
        """(n_y, n_x) 形式，便于2维作图"""
        return (self.resolution,) * self.domain.dimension

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """沿第0轴的加权求和"""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def inside(self, lower, upper) -> np.ndarray:
        """中点落在 [lower, upper] 内的布尔掩码"""
        lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        return np.all((self.points >= lower) & (self.points <= upper), axis=1)


def evaluation_grid(domain: Domain, resolution: Optional[int] = None) -> EvaluationGrid:
    n = resolution or DEFAULT_RESOLUTION.get(domain.dimension, 32)
    axes = []
    for lo, hi in zip(domain.lower, domain.upper):
        h = (hi - lo) / n
        axes.append(lo + h * (np.arange(n) + 0.5))
    points = tensor_grid(axes)
    weights = np.full(points.shape[0], domain.volume / points.shape[0])
    return EvaluationGrid(domain, n, points, weights)
