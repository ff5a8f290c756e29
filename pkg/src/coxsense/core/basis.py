"""
正基模块

构造点态非负的基函数φ（hat、Bernstein、NMF最优基），通过Γ变换使有限基先验
在节点处与核协方差匹配，并预计算区域积分φ_A、ψ_A。

约定：
- Γ = V⁻¹·K^{1/2}，V_ij = φ_j(t_i)
- 特征映射 Φ(x) = Γᵀφ(x)，于是 Φ(t_i)ᵀΦ(t_j) = K′_ij
- λ(x) = θᵀΦ(x) = φ(x)ᵀ(Γθ)，原始系数 c = Γθ
- 正性约束 Γθ ≥ l·1（hat基下Γ对称，即节点值 ≥ l）
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import pandas as pd
from loguru import logger
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import eigh, solve
from scipy.ndimage import maximum_filter
from scipy.special import comb
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from ..errors import BasisDegeneracyError, CapacityError, ParameterError, SamplingFailureError
from .kernels import Domain, KernelMatrix, KernelSpec, as_points, clipped_matrix, kernel_matrix, psd_sqrt

MAX_CONDITION = 1e12
NODE_SNAP = 1e-12


def tensor_grid(axes: Sequence[np.ndarray]) -> np.ndarray:
    """张量网格点，行主序且第一维（x）变化最快"""
    mesh = np.meshgrid(*reversed([np.asarray(a, dtype=float) for a in axes]), indexing="ij")
    return np.column_stack([g.ravel() for g in reversed(mesh)])


def _tensor_combine(per_axis: Sequence[np.ndarray]) -> np.ndarray:
    """把每维(n, m_k)的因子组合成(n, Πm_k)，索引第一维变化最快"""
    result = per_axis[0]
    for factor in per_axis[1:]:
        n = result.shape[0]
        result = (factor[:, :, None] * result[:, None, :]).reshape(n, -1)
    return result


def quadrature_rule(lower: np.ndarray, upper: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """矩形区域上的张量Gauss-Legendre求积点与权重"""
    x, w = leggauss(order)
    axes, weights = [], []
    for lo, hi in zip(lower, upper):
        half = 0.5 * (hi - lo)
        axes.append(lo + half * (x + 1.0))
        weights.append(half * w)
    points = tensor_grid(axes)
    wts = _tensor_combine([wk[None, :] for wk in weights]).reshape(-1)
    return points, wts


class RawBasis(ABC):
    """非负基函数族 φ: D → ℝ^m"""

    kind = "custom"

    def __init__(self, domain: Domain, nodes: np.ndarray, metadata: Optional[Dict[str, Any]] = None):
        self.domain = domain
        self.nodes = as_points(nodes, domain.dimension)
        self.metadata: Dict[str, Any] = dict(metadata or {})

    @property
    def m(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def interpolatory(self) -> bool:
        """φ_j(t_i) = δ_ij 精确成立时为True"""
        return False

    @abstractmethod
    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """返回 (n, m) 矩阵 φ_j(x_i)"""

    def integrate(self, lower: np.ndarray, upper: np.ndarray, order: int = 32) -> np.ndarray:
        """∫_A φ(x)dx，默认用Gauss-Legendre求积"""
        points, weights = quadrature_rule(lower, upper, order)
        return weights @ self.evaluate(points)

    def change_of_basis(self) -> np.ndarray:
        if self.interpolatory:
            return np.eye(self.m)
        return self.evaluate(self.nodes)

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "m": self.m, **self.metadata}


class FunctionBasis(RawBasis):
    """由任意非负函数给出的基"""

    def __init__(self, domain: Domain, nodes: np.ndarray, fn, metadata: Optional[Dict[str, Any]] = None):
        super().__init__(domain, nodes, metadata)
        self._fn = fn

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.domain.dimension)
        return np.asarray(self._fn(pts), dtype=float).reshape(pts.shape[0], self.m)


class HatBasis(RawBasis):
    """分段线性帽函数（三角）基

    节点含端点，间距 s=(upper−lower)/(m−1)，φ_j(x)=max(0, 1−|x−t_j|/s)；
    于是V恰为单位阵且Σφ_j ≡ 1。
    """

    kind = "hat"

    def __init__(self, domain: Domain, m_per_axis: int):
        if m_per_axis < 2:
            raise ParameterError(f"hat基每维至少2个节点，收到 {m_per_axis}")
        self.m_per_axis = int(m_per_axis)
        self.spacing = domain.widths / (m_per_axis - 1)
        axes = [domain.lower[k] + self.spacing[k] * np.arange(m_per_axis) for k in range(domain.dimension)]
        axes = [np.concatenate([a[:-1], [domain.upper[k]]]) for k, a in enumerate(axes)]
        super().__init__(domain, tensor_grid(axes), {"m_per_axis": self.m_per_axis})

    @property
    def interpolatory(self) -> bool:
        return True

    def _axis_values(self, coords: np.ndarray, k: int) -> np.ndarray:
        u = (coords - self.domain.lower[k]) / self.spacing[k]
        snapped = np.round(u)
        u = np.where(np.abs(u - snapped) < NODE_SNAP, snapped, u)
        j = np.arange(self.m_per_axis)
        return np.maximum(0.0, 1.0 - np.abs(u[:, None] - j[None, :]))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.domain.dimension)
        return _tensor_combine([self._axis_values(pts[:, k], k) for k in range(self.domain.dimension)])

    @staticmethod
    def _cdf(z: np.ndarray) -> np.ndarray:
        """单位三角函数的累积积分 ∫_{-1}^{z}(1−|u|)du"""
        z = np.clip(z, -1.0, 1.0)
        return np.where(z <= 0.0, 0.5 * (1.0 + z) ** 2, 1.0 - 0.5 * (1.0 - z) ** 2)

    def integrate(self, lower: np.ndarray, upper: np.ndarray, order: int = 32) -> np.ndarray:
        factors = []
        for k in range(self.domain.dimension):
            s = self.spacing[k]
            t = self.domain.lower[k] + s * np.arange(self.m_per_axis)
            t[-1] = self.domain.upper[k]
            vals = s * (self._cdf((upper[k] - t) / s) - self._cdf((lower[k] - t) / s))
            factors.append(vals[None, :])
        return _tensor_combine(factors).reshape(-1)


class BernsteinBasis(RawBasis):
    """Bernstein多项式基，多维时取张量积"""

    kind = "bernstein"

    def __init__(self, domain: Domain, degree: int):
        if degree < 1:
            raise ParameterError(f"Bernstein次数至少为1，收到 {degree}")
        self.degree = int(degree)
        self._binom = comb(degree, np.arange(degree + 1), exact=False)
        axes = [domain.lower[k] + domain.widths[k] * np.arange(degree + 1) / degree for k in range(domain.dimension)]
        super().__init__(domain, tensor_grid(axes), {"degree": self.degree})

    def _axis_values(self, coords: np.ndarray, k: int) -> np.ndarray:
        u = np.clip((coords - self.domain.lower[k]) / self.domain.widths[k], 0.0, 1.0)
        j = np.arange(self.degree + 1)
        return self._binom[None, :] * u[:, None] ** j[None, :] * (1.0 - u[:, None]) ** (self.degree - j)[None, :]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.domain.dimension)
        return _tensor_combine([self._axis_values(pts[:, k], k) for k in range(self.domain.dimension)])


class TabulatedBasis(RawBasis):
    """网格表格形式的基（NMF结果），网格点之间线性插值"""

    kind = "nmf"

    def __init__(
        self,
        domain: Domain,
        axes: Sequence[np.ndarray],
        table: np.ndarray,
        nodes: np.ndarray,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.table = np.asarray(table, dtype=float)
        super().__init__(domain, nodes, metadata)
        if domain.dimension > 1:
            shape = [len(a) for a in self.axes]
            # 平铺索引x最快 → 数组形状(..., g_y, g_x)，转置成(g_x, g_y, ...)
            grid_values = self.table.reshape(list(reversed(shape)) + [self.m])
            grid_values = np.transpose(grid_values, list(reversed(range(domain.dimension))) + [domain.dimension])
            self._interp = RegularGridInterpolator(self.axes, grid_values, method="linear")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.domain.dimension)
        pts = np.clip(pts, self.domain.lower, self.domain.upper)
        if self.domain.dimension == 1:
            x = pts[:, 0]
            return np.stack([np.interp(x, self.axes[0], self.table[:, j]) for j in range(self.m)], axis=1)
        return np.maximum(self._interp(pts), 0.0)


@dataclass(frozen=True, eq=False)
class BasisModel:
    """Γ变换后的基模型"""
    raw: RawBasis
    kernel: KernelSpec
    gamma: np.ndarray
    V: np.ndarray
    K: KernelMatrix
    K_clipped: np.ndarray
    lower_bound: float = 0.0
    quadrature_order: int = 32

    @property
    def m(self) -> int:
        return self.raw.m

    @property
    def nodes(self) -> np.ndarray:
        return self.raw.nodes

    @property
    def domain(self) -> Domain:
        return self.raw.domain

    def features(self, points: np.ndarray) -> np.ndarray:
        """(n, m) 矩阵，第i行为Φ(x_i)ᵀ = φ(x_i)ᵀΓ"""
        return self.raw.evaluate(points) @ self.gamma

    def coefficients(self, theta: np.ndarray) -> np.ndarray:
        """原始基系数 c = Γθ"""
        return self.gamma @ np.asarray(theta, dtype=float)

    def intensity(self, theta: np.ndarray, points: np.ndarray) -> np.ndarray:
        return self.raw.evaluate(points) @ self.coefficients(theta)

    def theta_from_coefficients(self, c: np.ndarray) -> np.ndarray:
        return solve(self.gamma, np.asarray(c, dtype=float))

    def is_feasible(self, theta: np.ndarray, tol: float = 1e-8) -> bool:
        return bool(np.all(self.coefficients(theta) >= self.lower_bound - tol))

    def interior_point(self, margin: float = 1.0) -> np.ndarray:
        """严格可行点：Γθ = (l + margin)·1"""
        return self.theta_from_coefficients(np.full(self.m, self.lower_bound + margin))

    def node_covariance(self) -> np.ndarray:
        Phi = self.features(self.nodes)
        return Phi @ Phi.T

    def describe(self) -> Dict[str, Any]:
        return {
            "basis": self.raw.describe(),
            "kernel": self.kernel.describe(),
            "lower_bound": self.lower_bound,
            "nodes": self.nodes.tolist(),
        }


@dataclass(frozen=True, eq=False)
class RegionIntegrals:
    """各区域的 φ_A 与 ψ_A = Γᵀφ_A（按行存放）"""
    region_ids: List[int]
    phi: np.ndarray
    psi: np.ndarray
    _index: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self._index.update({rid: i for i, rid in enumerate(self.region_ids)})

    def __contains__(self, region_id) -> bool:
        return region_id in self._index

    def psi_of(self, region_id: int) -> np.ndarray:
        return self.psi[self._index[region_id]]

    def phi_of(self, region_id: int) -> np.ndarray:
        return self.phi[self._index[region_id]]


def build_hat_basis(domain: Domain, m_per_axis: int) -> HatBasis:
    return HatBasis(domain, m_per_axis)


def build_bernstein_basis(domain: Domain, degree: int) -> BernsteinBasis:
    return BernsteinBasis(domain, degree)


def gamma_transform(raw: RawBasis, kernel: KernelSpec, lower_bound: float = 0.0,
                    jitter: Optional[float] = None, quadrature_order: int = 32) -> BasisModel:
    """计算 Γ = V⁻¹·psd_sqrt(K)"""
    K = kernel_matrix(kernel, raw.nodes)
    S = psd_sqrt(K, jitter)
    V = raw.change_of_basis()
    if raw.interpolatory:
        gamma = S
    else:
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            u, _, _ = np.linalg.svd(V)
            weak = u[:, -1]
            offending = np.flatnonzero(np.abs(weak) > 0.1 * np.abs(weak).max()).tolist()
            raise BasisDegeneracyError(
                f"基变换矩阵V接近奇异 (cond={cond:.3e})，问题节点: {offending}",
                nodes=offending,
                details={"condition": float(cond)},
            )
        gamma = solve(V, S)
    logger.debug(f"Γ变换完成: kind={raw.kind}, m={raw.m}")
    return BasisModel(
        raw=raw,
        kernel=kernel,
        gamma=gamma,
        V=V,
        K=K,
        K_clipped=clipped_matrix(K, jitter),
        lower_bound=float(lower_bound),
        quadrature_order=quadrature_order,
    )


def covariance_residual(model: BasisModel) -> float:
    """max_{ij}|Φ(t_i)ᵀΦ(t_j) − K′_ij|"""
    return float(np.max(np.abs(model.node_covariance() - model.K_clipped)))


def region_integrals(model: BasisModel, regions: Sequence[Any], order: Optional[int] = None) -> RegionIntegrals:
    """预计算每个区域的 φ_A 与 ψ_A"""
    order = order or model.quadrature_order
    ids, rows = [], []
    for region in regions:
        lower = np.asarray(region.lower, dtype=float)
        upper = np.asarray(region.upper, dtype=float)
        if np.any(upper - lower <= 0):
            raise ParameterError(f"区域 {getattr(region, 'id', '?')} 体积为零")
        model.domain.check(np.vstack([lower, upper]))
        ids.append(int(getattr(region, "id", len(ids))))
        rows.append(model.raw.integrate(lower, upper, order))
    phi = np.vstack(rows) if rows else np.zeros((0, model.m))
    return RegionIntegrals(region_ids=ids, phi=phi, psi=phi @ model.gamma)


def eval_intensity(model: BasisModel, theta: np.ndarray, x) -> float:
    """λ(x) = θᵀΦ(x)"""
    return float(model.intensity(theta, as_points(x, model.domain.dimension)[:1])[0])


def regular_grid(domain: Domain, n_per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, n_per_axis) for lo, hi in zip(domain.lower, domain.upper)]
    return tensor_grid(axes)


def suggest_basis_size(kernel: KernelSpec, domain: Domain, cutoff: float, cap: int = 4096) -> int:
    """倍增每维节点数，直到网格核矩阵最小特征值低于 cutoff·λ_max，返回总基数"""
    if cutoff <= 0:
        raise ParameterError("cutoff 必须为正")
    m_axis = 2
    while True:
        total = m_axis ** domain.dimension
        if total > cap:
            raise CapacityError(f"基大小 {total} 超过上限 {cap}", {"cutoff": cutoff})
        K = kernel_matrix(kernel, regular_grid(domain, m_axis)).entries
        eig = eigh(0.5 * (K + K.T), eigvals_only=True)
        ratio = eig[0] / eig[-1]
        logger.debug(f"suggest_basis_size: m={total}, λ_min/λ_max={ratio:.3e}")
        if ratio < cutoff:
            return total
        m_axis *= 2


# ---------------------------------------------------------------------------
# 截断高斯过程采样与NMF
# ---------------------------------------------------------------------------

class _BatchShortfall(Exception):
    pass


def sample_truncated_gp(
    kernel: KernelSpec,
    grid: np.ndarray,
    n: int,
    rng: np.random.Generator,
    lower: float = 0.0,
    budget: int = 100000,
    batch_size: Optional[int] = None,
) -> np.ndarray:
    """拒绝采样 n 条 min ≥ lower 的零均值GP路径，返回 (len(grid), n)

    lower = 0 时利用GP的符号对称性：整体 ≤ 0 的路径取负后接受。
    """
    K = kernel.cross(grid, grid, check=False)
    w, V = eigh(0.5 * (K + K.T))
    factor = V * np.sqrt(np.clip(w, 0.0, None))
    batch_size = batch_size or max(4 * n, 1000)
    n_batches = max(1, int(np.ceil(budget / batch_size)))
    accepted: List[np.ndarray] = []
    state = {"draws": 0}

    def draw_batch():
        size = min(batch_size, budget - state["draws"])
        z = rng.standard_normal((factor.shape[1], size))
        paths = factor @ z
        state["draws"] += size
        good = paths.min(axis=0) >= lower
        if lower == 0.0:
            flipped = (~good) & (paths.max(axis=0) <= 0.0)
            paths[:, flipped] *= -1.0
            good |= flipped
        accepted.extend(paths[:, good].T)
        if len(accepted) < n:
            raise _BatchShortfall()

    try:
        for attempt in Retrying(stop=stop_after_attempt(n_batches), retry=retry_if_exception_type(_BatchShortfall)):
            with attempt:
                draw_batch()
    except RetryError as e:
        raise SamplingFailureError(
            f"截断GP拒绝采样在 {state['draws']} 次抽样后只接受 {len(accepted)}/{n} 条路径；"
            "请调整下界l或使用更平滑的核",
            {"draws": state["draws"], "accepted": len(accepted)},
        ) from e
    logger.debug(f"截断GP采样: 接受率 {len(accepted) / max(state['draws'], 1):.3f}")
    return np.stack(accepted[:n], axis=1)


def _objective(F: np.ndarray, L: np.ndarray, Y: np.ndarray) -> float:
    R = F - L @ Y
    return float(np.sum(R * R))


def _normalize_columns(L: np.ndarray, Y: np.ndarray, weight: float, R_hint: np.ndarray):
    norms = np.sqrt(weight * np.sum(L * L, axis=0))
    for k in np.flatnonzero(norms <= 1e-300):
        # 全零列：放一个单位脉冲，对应Y行为零，目标值不变
        L[:, k] = 0.0
        L[int(np.argmax(R_hint)), k] = 1.0 / np.sqrt(weight)
        Y[k, :] = 0.0
        norms[k] = 1.0
    L /= norms[None, :]
    Y *= norms[:, None]


def factorize_nonnegative(
    F: np.ndarray,
    m: int,
    rng: np.random.Generator,
    weight: float = 1.0,
    iterations: int = 500,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """min ‖F − LY‖_F²，L,Y ≥ 0，L列在加权2范数下归一

    HALS交替更新；若某轮目标值上升则回退并改用乘性更新。
    返回 (L, Y, 目标值历史)。
    """
    F = np.asarray(F, dtype=float)
    n, s = F.shape
    if m > n or m > s:
        raise ParameterError(f"NMF秩 m={m} 超过矩阵尺寸 {F.shape}")
    scale = np.sqrt(max(F.mean(), 1e-12) / m)
    L = rng.uniform(0.0, 1.0, (n, m)) * scale
    Y = rng.uniform(0.0, 1.0, (m, s)) * scale
    residual_rows = np.sum(F * F, axis=1)
    _normalize_columns(L, Y, weight, residual_rows)
    history = [_objective(F, L, Y)]
    eps = 1e-16

    for it in range(iterations):
        L_prev, Y_prev = L.copy(), Y.copy()
        A, B = F @ Y.T, Y @ Y.T
        for k in range(m):
            if B[k, k] > eps:
                L[:, k] = np.maximum(0.0, L[:, k] + (A[:, k] - L @ B[:, k]) / B[k, k])
        C, D = L.T @ F, L.T @ L
        for k in range(m):
            if D[k, k] > eps:
                Y[k, :] = np.maximum(0.0, Y[k, :] + (C[k, :] - D[k, :] @ Y) / D[k, k])
        _normalize_columns(L, Y, weight, residual_rows)
        obj = _objective(F, L, Y)

        if obj > history[-1] * (1.0 + 1e-12):
            L, Y = L_prev.copy(), Y_prev.copy()
            L *= (F @ Y.T) / (L @ (Y @ Y.T) + eps)
            Y *= (L.T @ F) / ((L.T @ L) @ Y + eps)
            _normalize_columns(L, Y, weight, residual_rows)
            obj = _objective(F, L, Y)
            if obj > history[-1]:
                logger.debug(f"NMF第{it}轮HALS与乘性更新均未下降，停止")
                L, Y = L_prev, Y_prev
                break
        history.append(obj)
        if history[-2] - obj <= 1e-14 * max(history[0], 1.0):
            break
    return L, Y, history


def _column_peaks(column: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    grid_values = column.reshape(list(reversed(shape)))
    peaks = grid_values == maximum_filter(grid_values, size=3, mode="nearest")
    return np.unique(grid_values[peaks])[::-1]


def build_nmf_basis(
    kernel: KernelSpec,
    domain: Domain,
    m: int,
    rng: np.random.Generator,
    n_grid: Optional[int] = None,
    n_samples: Optional[int] = None,
    lower: float = 0.0,
    iterations: int = 500,
    budget: int = 100000,
    seed: Optional[int] = None,
) -> TabulatedBasis:
    """由截断GP样本路径的非负矩阵分解得到最小描述基"""
    d = domain.dimension
    n_grid = n_grid or (256 if d == 1 else 64)
    n_samples = n_samples or 20 * m
    total_grid = n_grid ** d
    if m > total_grid:
        raise ParameterError(f"NMF基数 m={m} 超过网格点数 {total_grid}")
    if n_samples < m:
        raise ParameterError(f"样本数 s={n_samples} 必须不小于 m={m}")

    axes = [np.linspace(lo, hi, n_grid) for lo, hi in zip(domain.lower, domain.upper)]
    grid = tensor_grid(axes)
    weight = float(np.prod(domain.widths / (n_grid - 1)))
    logger.info(f"构建NMF基: m={m}, 网格={total_grid}, 样本={n_samples}")

    F = sample_truncated_gp(kernel, grid, n_samples, rng, lower=lower, budget=budget)
    L, _, history = factorize_nonnegative(F, m, rng, weight=weight, iterations=iterations)

    # 节点取每列网格argmax；重复时后来的列改用其未被占用的最高网格点
    order = np.argsort(-L, axis=0, kind="stable")
    used, argmax = set(), np.empty(m, dtype=int)
    reassigned = []
    for j in range(m):
        candidates = order[:, j]
        pick = int(candidates[0])
        if pick in used:
            pick = int(next(c for c in candidates if int(c) not in used))
            reassigned.append(j)
        used.add(pick)
        argmax[j] = pick
    perm = np.argsort(argmax, kind="stable")
    L, argmax = L[:, perm], argmax[perm]

    shape = [n_grid] * d
    flagged = []
    for j in range(m):
        peaks = _column_peaks(L[:, j], shape)
        if peaks.size > 1 and peaks[1] >= 0.99 * peaks[0]:
            flagged.append(j)
    if flagged:
        logger.warning(f"NMF基列 {flagged} 存在与最大值相差1%以内的次峰，节点取第一个argmax")
    if reassigned:
        logger.warning(f"NMF基列 {reassigned} 的argmax与其他列重复，已改用次高网格点")

    rel_error = float(np.sqrt(history[-1]) / max(np.linalg.norm(F), 1e-300))
    metadata = {
        "n_grid": n_grid,
        "n_samples": n_samples,
        "seed": seed,
        "weight": weight,
        "iterations": len(history) - 1,
        "objective_history": history,
        "relative_error": rel_error,
        "flagged_columns": flagged,
        "reassigned_columns": reassigned,
        "kernel": kernel.describe(),
    }
    return TabulatedBasis(domain, axes, L, grid[argmax], metadata)


def build_raw_basis(config, kernel: KernelSpec, domain: Domain, rng: Optional[np.random.Generator] = None,
                    seed: Optional[int] = None) -> RawBasis:
    """由BasisConfig构造原始基"""
    if config.kind == "hat":
        return build_hat_basis(domain, config.m)
    if config.kind == "bernstein":
        if config.m < 2:
            raise ParameterError("bernstein基每维至少2个函数")
        return build_bernstein_basis(domain, config.m - 1)
    if config.path:
        return load_nmf_basis(config.path, domain)
    if rng is None:
        rng = np.random.default_rng(seed)
    return build_nmf_basis(
        kernel,
        domain,
        config.m,
        rng,
        n_grid=config.nmf_grid,
        n_samples=config.nmf_samples,
        iterations=config.nmf_iterations,
        budget=config.rejection_budget,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# 导出与持久化
# ---------------------------------------------------------------------------

_AXIS_NAMES = ("x", "y", "z")


def export_basis(raw: RawBasis, grid: np.ndarray) -> pd.DataFrame:
    """长表 `node_index, x[, y], value`，每个基函数在稠密网格上采样"""
    values = raw.evaluate(grid)
    d = raw.domain.dimension
    frames = []
    for j in range(raw.m):
        frame = pd.DataFrame(grid, columns=list(_AXIS_NAMES[:d]))
        frame.insert(0, "node_index", j)
        frame["value"] = values[:, j]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def save_nmf_basis(basis: TabulatedBasis, path: Union[str, Path], header: str = "") -> Path:
    """网格取值写CSV，元数据写同名JSON"""
    path = Path(path)
    d = basis.domain.dimension
    grid = tensor_grid(basis.axes)
    frame = pd.DataFrame(grid, columns=list(_AXIS_NAMES[:d]))
    for j in range(basis.m):
        frame[f"phi_{j}"] = basis.table[:, j]
    with open(path, "w", encoding="utf-8", newline="") as f:
        if header:
            f.write(header.rstrip("\n") + "\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    meta = {
        "kind": basis.kind,
        "m": basis.m,
        "nodes": basis.nodes.tolist(),
        "domain": {"lower": basis.domain.lower.tolist(), "upper": basis.domain.upper.tolist()},
        **{k: v for k, v in basis.metadata.items() if k != "objective_history"},
    }
    meta_path = path.with_suffix(".json")
    meta_path.write_bytes(orjson.dumps(meta, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    return meta_path


def load_nmf_basis(path: Union[str, Path], domain: Domain) -> TabulatedBasis:
    path = Path(path)
    meta = orjson.loads(path.with_suffix(".json").read_bytes())
    frame = pd.read_csv(path, comment="#")
    d = domain.dimension
    coords = frame[list(_AXIS_NAMES[:d])].to_numpy(dtype=float)
    table = frame[[f"phi_{j}" for j in range(meta["m"])]].to_numpy(dtype=float)
    axes = [np.unique(coords[:, k]) for k in range(d)]
    nodes = np.asarray(meta.pop("nodes"), dtype=float)
    logger.info(f"加载NMF基 {path}: m={meta['m']}")
    return TabulatedBasis(domain, axes, table, nodes, meta)
