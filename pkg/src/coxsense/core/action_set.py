"""
动作空间模块

层次划分（1维二分、2维四叉树）得到的矩形区域集合，用NetworkX有向图保存父子关系，
并提供代价模型与"包含某点的最低代价区域"查询。

区域编号按完整层次的广度优先顺序分配，只保留叶子时编号不变。
"""

import threading
from dataclasses import dataclass
from itertools import product
from typing import Any, Dict, Iterator, List, Optional, Sequence

import networkx as nx
import numpy as np
from loguru import logger

from ..errors import ParameterError
from .kernels import Domain, as_points

REGION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Region:
    """轴对齐矩形区域"""
    id: int
    lower: np.ndarray
    upper: np.ndarray
    depth: int = 0
    parent: Optional[int] = None

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def contains(self, points, tol: float = REGION_TOL) -> np.ndarray:
        pts = as_points(points, len(self.lower))
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)

    def describe(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "lower": np.asarray(self.lower).tolist(),
            "upper": np.asarray(self.upper).tolist(),
            "depth": self.depth,
            "parent": self.parent,
        }

    def __repr__(self) -> str:
        return f"Region(id={self.id}, depth={self.depth}, {np.asarray(self.lower).tolist()}–{np.asarray(self.upper).tolist()})"


@dataclass(frozen=True)
class CostModel:
    """w(A) = C₁|A|（uniform）或 C₁|A| + C₂（fixed）"""
    kind: str = "uniform"
    c1: float = 1.0
    c2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ParameterError(f"未知代价模型 '{self.kind}'")
        if self.c1 < 0 or self.c2 < 0:
            raise ParameterError("C₁、C₂ 必须非负")

    def __call__(self, region: Region) -> float:
        value = self.c1 * region.volume
        if self.kind == "fixed":
            value += self.c2
        if value <= 0:
            raise ParameterError(f"区域 {region.id} 的代价必须为正，收到 {value}")
        return value

    @classmethod
    def from_config(cls, config) -> "CostModel":
        return cls(kind=config.kind, c1=config.c1, c2=config.c2)


def cost(model: CostModel, region: Region) -> float:
    return model(region)


class ActionSet:
    """层次区域集合

    每一层的区域恰好铺满定义域；include_ancestors=False 时只保留最深层的叶子。
    """

    def __init__(self, domain: Domain, max_depth: int, include_ancestors: bool = False):
        """初始化动作集

        Args:
            domain: 矩形定义域
            max_depth: 最大划分深度D（每层每维二分）
            include_ancestors: 是否保留0..D-1层的祖先区域
        """
        if max_depth < 0:
            raise ParameterError(f"max_depth 必须非负，收到 {max_depth}")
        self.domain = domain
        self.max_depth = max_depth
        self.include_ancestors = include_ancestors
        self.graph = nx.DiGraph()
        self.lock = threading.RLock()
        self._all: Dict[int, Region] = {}
        self._build()

        members = [r for r in self._all.values() if include_ancestors or r.depth == max_depth]
        self.regions: List[Region] = sorted(members, key=lambda r: r.id)
        self._position = {r.id: i for i, r in enumerate(self.regions)}
        self.stats = {"regions": len(self.regions), "hierarchy_nodes": self.graph.number_of_nodes(), "queries": 0}
        logger.info(f"动作集构建完成: 维度={domain.dimension}, D={max_depth}, 区域数={len(self.regions)}")

    def _build(self):
        d = self.domain.dimension
        corners = list(product((0, 1), repeat=d))
        root = Region(0, self.domain.lower.copy(), self.domain.upper.copy(), 0, None)
        self._add(root)
        frontier = [root]
        next_id = 1
        for depth in range(1, self.max_depth + 1):
            children = []
            for parent in frontier:
                mid = parent.center
                for corner in corners:
                    # 第一维变化最快
                    bits = np.asarray(corner[::-1], dtype=bool)
                    lower = np.where(bits, mid, parent.lower)
                    upper = np.where(bits, parent.upper, mid)
                    child = Region(next_id, lower, upper, depth, parent.id)
                    next_id += 1
                    self._add(child)
                    self.graph.add_edge(parent.id, child.id)
                    children.append(child)
            frontier = children

    def _add(self, region: Region):
        self._all[region.id] = region
        self.graph.add_node(region.id, depth=region.depth, volume=region.volume)

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self) -> Iterator[Region]:
        return iter(self.regions)

    def __getitem__(self, index: int) -> Region:
        return self.regions[index]

    def __contains__(self, region) -> bool:
        rid = getattr(region, "id", region)
        return rid in self._position

    @property
    def ids(self) -> List[int]:
        return [r.id for r in self.regions]

    def by_id(self, region_id: int) -> Region:
        return self._all[region_id]

    def index_of(self, region_id: int) -> int:
        return self._position[region_id]

    def children(self, region_id: int) -> List[Region]:
        return [self._all[c] for c in sorted(self.graph.successors(region_id))]

    def ancestors(self, region_id: int) -> List[Region]:
        return [self._all[a] for a in sorted(nx.ancestors(self.graph, region_id))]

    def containing(self, point) -> List[Region]:
        """动作集中包含该点的全部区域（按id排序）"""
        with self.lock:
            self.stats["queries"] += 1
            pt = as_points(point, self.domain.dimension)[:1]
            return [r for r in self.regions if bool(r.contains(pt)[0])]

    def lowest_cost_containing(self, point, cost_model: CostModel) -> Region:
        """包含该点、代价最小的区域；代价相同时取最小id"""
        candidates = self.containing(point)
        if not candidates:
            raise ParameterError(f"没有区域包含点 {np.asarray(point).tolist()}")
        costs = [cost_model(r) for r in candidates]
        best = min(costs)
        return next(r for r, c in zip(candidates, costs) if c <= best * (1.0 + 1e-12))

    def costs(self, cost_model: CostModel) -> np.ndarray:
        return np.array([cost_model(r) for r in self.regions])

    def membership(self, points: np.ndarray) -> np.ndarray:
        """(|𝒜|, n) 布尔矩阵：网格点是否在区域内（闭区间）"""
        pts = as_points(points, self.domain.dimension)
        return np.vstack([r.contains(pts, tol=0.0) for r in self.regions])

    def level(self, depth: int) -> List[Region]:
        return [r for r in self._all.values() if r.depth == depth]

    def describe(self) -> Dict[str, Any]:
        return {
            "dimension": self.domain.dimension,
            "max_depth": self.max_depth,
            "include_ancestors": self.include_ancestors,
            "regions": len(self.regions),
        }


def build_action_set(domain: Domain, max_depth: int, include_ancestors: bool = False) -> ActionSet:
    return ActionSet(domain, max_depth, include_ancestors)


def tiles_domain(regions: Sequence[Region], domain: Domain) -> bool:
    """同层区域体积之和等于定义域体积"""
    return bool(np.isclose(sum(r.volume for r in regions), domain.volume, rtol=1e-12))
