"""
协方差核模块

核约定: k(x,y) = σ²·exp(−‖x−y‖²/γ²)·w(x)w(y)，指数中没有因子2。
其他文献常用 exp(−‖x−y‖²/(2γ²))，换算时注意γ相差√2。

支持的核族：
- squared_exponential: 平稳平方指数核
- laplace: exp(−‖x−y‖/γ)
- gibbs: 长度尺度随位置变化的非平稳核
- product: 逐维长度尺度的一维核乘积
- feature: 在查表特征空间上的平方指数核
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.linalg import eigh
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ..errors import DegenerateNodesError, DomainError, ParameterError, ParseError

DOMAIN_TOL = 1e-12
KERNEL_FAMILIES = ("squared_exponential", "laplace", "gibbs", "product", "feature")


@dataclass(frozen=True, eq=False)
class Domain:
    """紧致矩形定义域 D = [lower, upper]"""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ParameterError("定义域上下界维度不一致", {"lower": lower.tolist(), "upper": upper.tolist()})
        if np.any(lower >= upper):
            raise ParameterError("定义域需要 lower < upper", {"lower": lower.tolist(), "upper": upper.tolist()})
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self) -> int:
        return int(self.lower.shape[0])

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, points: np.ndarray, tol: float = DOMAIN_TOL) -> np.ndarray:
        pts = as_points(points, self.dimension)
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)

    def check(self, points: np.ndarray) -> np.ndarray:
        """返回(n,d)点阵，任何点落在定义域外则抛出DomainError"""
        pts = as_points(points, self.dimension)
        inside = self.contains(pts)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise DomainError(f"点 {bad.tolist()} 不在定义域 {self.lower.tolist()}–{self.upper.tolist()} 内")
        return pts

    @classmethod
    def from_config(cls, config) -> "Domain":
        return cls(np.asarray(config.lower, dtype=float), np.asarray(config.upper, dtype=float))


def as_points(points, dimension: int) -> np.ndarray:
    """把标量、一维向量或点列统一成(n,d)数组"""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if dimension == 1 else pts.reshape(1, -1)
    if pts.shape[1] != dimension:
        raise ParameterError(f"点的维度 {pts.shape[1]} 与定义域维度 {dimension} 不符")
    return pts


class TabulatedField:
    """网格查表函数，最近邻插值

    CSV格式: 表头 `x[,y],value[,...]`，每行一个网格点，行主序且x变化最快。
    """

    def __init__(self, coords: np.ndarray, values: np.ndarray, names: Sequence[str] = ("value",)):
        coords = np.asarray(coords, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.shape[0] != values.shape[0] or coords.shape[0] == 0:
            raise ParameterError("查表坐标与取值行数不一致或为空")
        self.coords = coords
        self.values = values
        self.names = tuple(names)
        self._tree = cKDTree(coords)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.coords.shape[1])
        _, idx = self._tree.query(pts)
        return self.values[idx]

    def scalar(self, points: np.ndarray) -> np.ndarray:
        return self(points)[:, 0]


def load_tabulated_field(path: Union[str, Path], dimension: int) -> TabulatedField:
    """从CSV加载查表函数"""
    frame = pd.read_csv(path, comment="#", dtype=str)
    axes = ["x", "y", "z"][:dimension]
    columns = [c.strip() for c in frame.columns]
    if columns[:dimension] != axes or len(columns) <= dimension:
        raise ParseError(f"表头应为 {','.join(axes)},value[,...]，实际为 {','.join(columns)}", line=1)
    frame.columns = columns
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(numeric.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        raise ParseError(f"无法解析的数值: {frame.iloc[bad_rows[0]].tolist()}", line=int(bad_rows[0]) + 2)
    data = numeric.to_numpy(dtype=float)
    logger.debug(f"加载查表 {path}: {data.shape[0]} 个网格点, {data.shape[1] - dimension} 列取值")
    return TabulatedField(data[:, :dimension], data[:, dimension:], columns[dimension:])


def linear_lengthscale(domain: Domain, start: float, end: float) -> Callable[[np.ndarray], np.ndarray]:
    """沿第一维在[start, end]间线性变化的长度尺度场"""
    lo, width = domain.lower[0], domain.widths[0]

    def field_fn(points: np.ndarray) -> np.ndarray:
        pts = as_points(points, domain.dimension)
        u = np.clip((pts[:, 0] - lo) / width, 0.0, 1.0)
        return start + (end - start) * u

    return field_fn


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """协方差函数描述，构造后不可变"""
    domain: Domain
    family: str = "squared_exponential"
    lengthscale: float = 0.1
    variance: float = 1.0
    lengthscales: Optional[np.ndarray] = None
    lengthscale_field: Optional[Callable[[np.ndarray], np.ndarray]] = None
    indicator: Optional[Callable[[np.ndarray], np.ndarray]] = None
    features: Optional[TabulatedField] = None
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ParameterError(f"未知核族 {self.family}，可选: {', '.join(KERNEL_FAMILIES)}")
        if self.lengthscale <= 0 or self.variance <= 0:
            raise ParameterError("长度尺度与方差必须为正")
        if self.family == "product":
            scales = self.lengthscales
            if scales is None:
                scales = np.full(self.domain.dimension, self.lengthscale)
            scales = np.asarray(scales, dtype=float)
            if scales.shape != (self.domain.dimension,) or np.any(scales <= 0):
                raise ParameterError("product核需要每维一个正长度尺度")
            object.__setattr__(self, "lengthscales", scales)
        if self.family == "feature" and self.features is None:
            raise ParameterError("feature核需要特征表")

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def weight(self, points: np.ndarray) -> np.ndarray:
        """指示权重w(x)，未配置时恒为1"""
        if self.indicator is None:
            return np.ones(points.shape[0])
        return np.asarray(self.indicator(points), dtype=float).reshape(-1)

    def _gamma(self, points: np.ndarray) -> np.ndarray:
        if self.lengthscale_field is None:
            return np.full(points.shape[0], self.lengthscale)
        gamma = np.asarray(self.lengthscale_field(points), dtype=float).reshape(-1)
        if np.any(gamma <= 0):
            raise ParameterError("长度尺度场必须处处为正")
        return gamma

    def cross(self, xs: np.ndarray, ys: np.ndarray, check: bool = True) -> np.ndarray:
        """k(x_i, y_j) 矩阵，xs:(n,d), ys:(p,d)"""
        if check:
            xs = self.domain.check(xs)
            ys = self.domain.check(ys)
        else:
            xs = as_points(xs, self.dimension)
            ys = as_points(ys, self.dimension)

        if self.family == "squared_exponential":
            base = np.exp(-cdist(xs, ys, "sqeuclidean") / self.lengthscale**2)
        elif self.family == "laplace":
            base = np.exp(-cdist(xs, ys, "euclidean") / self.lengthscale)
        elif self.family == "product":
            base = np.exp(-cdist(xs / self.lengthscales, ys / self.lengthscales, "sqeuclidean"))
        elif self.family == "feature":
            fx, fy = self.features(xs), self.features(ys)
            base = np.exp(-cdist(fx, fy, "sqeuclidean") / self.lengthscale**2)
        else:
            gx2 = self._gamma(xs) ** 2
            gy2 = self._gamma(ys) ** 2
            denom = gx2[:, None] + gy2[None, :]
            prefactor = (2.0 * np.sqrt(gx2)[:, None] * np.sqrt(gy2)[None, :] / denom) ** (self.dimension / 2.0)
            base = prefactor * np.exp(-cdist(xs, ys, "sqeuclidean") / denom)

        wx, wy = self.weight(xs), self.weight(ys)
        return self.variance * base * wx[:, None] * wy[None, :]

    def diagonal(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.dimension)
        return self.variance * self.weight(pts) ** 2

    def describe(self) -> dict:
        info = {"family": self.family, "lengthscale": self.lengthscale, "variance": self.variance}
        if self.lengthscales is not None:
            info["lengthscales"] = np.asarray(self.lengthscales).tolist()
        info.update(self.description)
        return info


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """节点上的核矩阵 K_ij = k(t_i, t_j)"""
    entries: np.ndarray
    nodes: np.ndarray

    @property
    def size(self) -> int:
        return int(self.entries.shape[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))


def build_kernel(config, domain: Domain) -> KernelSpec:
    """由KernelConfig构造KernelSpec"""
    lengthscale_field = None
    if config.lengthscale_field is not None:
        lf = config.lengthscale_field
        if lf.kind == "linear":
            lengthscale_field = linear_lengthscale(domain, lf.start, lf.end)
        else:
            lengthscale_field = load_tabulated_field(lf.path, domain.dimension).scalar

    indicator = None
    if config.indicator:
        table = load_tabulated_field(config.indicator, domain.dimension)
        if np.any(table.values < 0) or np.any(table.values > 1):
            raise ParameterError("指示权重必须位于[0,1]", {"path": config.indicator})
        indicator = table.scalar

    features = load_tabulated_field(config.features, domain.dimension) if config.features else None
    scales = np.asarray(config.lengthscales, dtype=float) if config.lengthscales else None
    return KernelSpec(
        domain=domain,
        family=config.family,
        lengthscale=config.lengthscale,
        variance=config.variance,
        lengthscales=scales,
        lengthscale_field=lengthscale_field,
        indicator=indicator,
        features=features,
        description={
            k: v for k, v in {
                "indicator": config.indicator,
                "features": config.features,
                "lengthscale_field": config.lengthscale_field.model_dump() if config.lengthscale_field else None,
            }.items() if v is not None
        },
    )


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """计算单点对的核值k(x,y)"""
    return float(spec.cross(as_points(x, spec.dimension)[:1], as_points(y, spec.dimension)[:1])[0, 0])


def kernel_matrix(spec: KernelSpec, nodes) -> KernelMatrix:
    """节点上的核矩阵，节点必须互不相同"""
    pts = spec.domain.check(nodes)
    unique, inverse, counts = np.unique(pts, axis=0, return_inverse=True, return_counts=True)
    if unique.shape[0] != pts.shape[0]:
        dup = np.flatnonzero(counts[np.asarray(inverse).reshape(-1)] > 1).tolist()
        raise DegenerateNodesError(f"核矩阵节点重复: 索引 {dup}", {"indices": dup})
    entries = spec.cross(pts, pts, check=False)
    return KernelMatrix(entries=entries, nodes=pts)


def _entries(K: Union[KernelMatrix, np.ndarray]) -> np.ndarray:
    return K.entries if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)


def default_jitter(K: Union[KernelMatrix, np.ndarray]) -> float:
    return 1e-10 * max(float(np.trace(_entries(K))), np.finfo(float).tiny)


def _clipped_eigh(K, jitter: Optional[float]):
    A = _entries(K)
    A = 0.5 * (A + A.T)
    if jitter is None:
        jitter = default_jitter(A)
    w, V = eigh(A)
    clipped = int(np.sum(w < jitter))
    if clipped:
        logger.debug(f"psd_sqrt: {clipped}/{w.size} 个特征值被截断到 {jitter:.3e}")
    return np.maximum(w, jitter), V


def psd_sqrt(K: Union[KernelMatrix, np.ndarray], jitter: Optional[float] = None) -> np.ndarray:
    """对称半正定平方根 S，满足 S·S = K′（特征值截断到[jitter, ∞)）"""
    w, V = _clipped_eigh(K, jitter)
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def clipped_matrix(K: Union[KernelMatrix, np.ndarray], jitter: Optional[float] = None) -> np.ndarray:
    """特征值截断后的核矩阵 K′"""
    w, V = _clipped_eigh(K, jitter)
    Kc = (V * w) @ V.T
    return 0.5 * (Kc + Kc.T)
