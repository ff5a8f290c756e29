"""
地面真值强度

解析真值按名字注册（toy、constant:c、bumps、bumps2d）；拟合得到的真值以网格表保存。
GroundTruth 在评估网格上缓存 λ*、最大值与最大点、水平集以及每个区域的期望计数 μ_A = Δ∫_A λ*。
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.interpolate import RegularGridInterpolator

from ..errors import ModelError, ParameterError, ParseError
from .grid import EvaluationGrid

IntensityFn = Callable[[np.ndarray], np.ndarray]


def toy_intensity(points: np.ndarray) -> np.ndarray:
    """4·e^{−(x+1)}·sin²(2πx)"""
    x = np.asarray(points, dtype=float).reshape(len(points), -1)[:, 0]
    return 4.0 * np.exp(-(x + 1.0)) * np.sin(2.0 * np.pi * x) ** 2


def bumps_intensity(points: np.ndarray) -> np.ndarray:
    """两个高斯峰叠加在常数背景上"""
    x = np.asarray(points, dtype=float).reshape(len(points), -1)[:, 0]
    return 0.5 + 4.0 * np.exp(-0.5 * ((x + 0.45) / 0.12) ** 2) + 3.0 * np.exp(-0.5 * ((x - 0.4) / 0.15) ** 2)


def bumps2d_intensity(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(len(points), -1)
    first = np.sum((pts - np.array([-0.4, -0.3])) ** 2, axis=1) / (2 * 0.2 ** 2)
    second = np.sum((pts - np.array([0.45, 0.4])) ** 2, axis=1) / (2 * 0.15 ** 2)
    return 0.5 + 4.0 * np.exp(-first) + 3.0 * np.exp(-second)


def constant_intensity(value: float) -> IntensityFn:
    if value < 0:
        raise ParameterError(f"常数强度必须非负，收到 {value}")

    def fn(points: np.ndarray) -> np.ndarray:
        return np.full(len(np.asarray(points)), float(value))

    return fn


ANALYTIC_TRUTHS: Dict[str, IntensityFn] = {
    "toy": toy_intensity,
    "bumps": bumps_intensity,
    "bumps2d": bumps2d_intensity,
}


def analytic_truth(name: str) -> Optional[IntensityFn]:
    """按名字查找解析真值；不是解析名字时返回None"""
    if name.startswith("constant:"):
        try:
            return constant_intensity(float(name.split(":", 1)[1]))
        except ValueError as e:
            raise ParameterError(f"无法解析常数强度 '{name}'") from e
    return ANALYTIC_TRUTHS.get(name)


def tabulated_intensity(frame: pd.DataFrame, dimension: int) -> IntensityFn:
    """由 `x[,y],intensity` 网格表构造（线性插值）"""
    axes_names = ["x", "y"][:dimension]
    coords = frame[axes_names].to_numpy(dtype=float)
    values = frame["intensity"].to_numpy(dtype=float)
    if dimension == 1:
        order = np.argsort(coords[:, 0])
        xs, vs = coords[order, 0], values[order]
        return lambda pts: np.interp(np.asarray(pts, dtype=float).reshape(len(pts), -1)[:, 0], xs, vs)
    axes = [np.unique(coords[:, k]) for k in range(dimension)]
    table = values.reshape(len(axes[1]), len(axes[0])).T
    interp = RegularGridInterpolator(axes, table, bounds_error=False, fill_value=None)
    return lambda pts: np.maximum(interp(np.asarray(pts, dtype=float).reshape(len(pts), -1)), 0.0)


def load_truth_table(path: Union[str, Path], dimension: int) -> IntensityFn:
    path = Path(path)
    try:
        frame = pd.read_csv(path, comment="#")
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"真值文件为空: {path}", line=1) from e
    if "intensity" not in frame.columns:
        raise ParseError(f"真值文件缺少 intensity 列: {path}", line=1)
    logger.info(f"加载拟合真值 {path}: {len(frame)} 个网格点")
    return tabulated_intensity(frame, dimension)


def resolve_intensity(truth: str, dimension: int) -> IntensityFn:
    fn = analytic_truth(truth)
    if fn is not None:
        return fn
    return load_truth_table(truth, dimension)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """评估网格上的真值摘要"""
    name: str
    intensity: IntensityFn
    grid: EvaluationGrid
    values: np.ndarray
    region_ids: List[int]
    mu: np.ndarray
    duration: float
    threshold: Optional[float] = None
    theta: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def lam_max(self) -> float:
        return float(self.values.max())

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(self.values))

    @property
    def argmax_point(self) -> np.ndarray:
        return self.grid.points[self.argmax_index]

    @property
    def level_set(self) -> Optional[np.ndarray]:
        if self.threshold is None:
            return None
        return self.values >= self.threshold

    def mu_of(self, region_id: int) -> float:
        return float(self.mu[self.region_ids.index(region_id)])


def bind_truth(name: str, intensity: IntensityFn, grid: EvaluationGrid, action_set, duration: float,
               threshold: Optional[float] = None, theta: Optional[np.ndarray] = None,
               membership: Optional[np.ndarray] = None) -> GroundTruth:
    """在评估网格上计算 λ* 与各区域的 μ_A"""
    values = np.asarray(intensity(grid.points), dtype=float).ravel()
    if np.any(values < -1e-9 * max(1.0, float(np.abs(values).max(initial=0.0)))):
        raise ModelError(f"真值强度 '{name}' 在网格上出现负值", {"min": float(values.min())})
    values = np.maximum(values, 0.0)
    if membership is None:
        membership = action_set.membership(grid.points)
    mu = duration * (membership.astype(float) @ (grid.weights * values))
    logger.info(f"真值 '{name}': λ*max={values.max():.4f}, max μ_A={mu.max(initial=0.0):.4f}")
    return GroundTruth(
        name=name,
        intensity=intensity,
        grid=grid,
        values=values,
        region_ids=list(action_set.ids),
        mu=mu,
        duration=duration,
        threshold=threshold,
        theta=theta,
    )


def save_truth_table(truth: GroundTruth, path: Union[str, Path], header: str = "") -> Path:
    path = Path(path)
    d = truth.grid.domain.dimension
    frame = pd.DataFrame(truth.grid.points, columns=["x", "y"][:d])
    frame["intensity"] = truth.values
    with open(path, "w", encoding="utf-8", newline="") as f:
        if header:
            f.write(header.rstrip("\n") + "\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path
