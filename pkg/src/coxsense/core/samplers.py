"""
后验采样与点过程模拟

- MYULA: 带多面体投影近端项的Langevin
- 镜像Langevin: tanh镜像把盒约束映射到无约束对偶空间
- 非齐次泊松过程在区域上的离散化模拟
"""

import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Type, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.integrate import trapezoid
from scipy.linalg import solve

from ..errors import DivergenceError, ModelError, ParameterError
from .basis import BasisModel, tensor_grid
from .posterior import PosteriorModel

Y_CLIP = 15.0
GRID_1D = 512
GRID_2D = 128


@dataclass(frozen=True)
class MyulaConfig:
    """MYULA参数；step_size/envelope为None时取 η = 1/(L+1)、λ = η"""
    steps: int = 1000
    burn_in: float = 0.5
    step_size: Optional[float] = None
    envelope: Optional[float] = None
    power_iterations: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError("steps 必须 ≥ 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise ParameterError("burn_in 必须在 [0, 1) 内")
        if self.step_size is not None and not 0.0 < self.step_size <= 1.0:
            raise ParameterError("step_size 必须在 (0, 1] 内")
        if self.envelope is not None and self.envelope <= 0.0:
            raise ParameterError("envelope 必须为正")


@dataclass(frozen=True)
class MirrorConfig:
    """镜像Langevin参数，盒约束 lower < Γθ < upper 作用在原始基系数上"""
    upper: float
    lower: float = 0.0
    steps: int = 1000
    burn_in: float = 0.5
    step_size: Optional[float] = None
    power_iterations: int = 50

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ParameterError(f"盒约束需要 lower < upper，收到 {self.lower} ≥ {self.upper}")
        if self.steps < 1:
            raise ParameterError("steps 必须 ≥ 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise ParameterError("burn_in 必须在 [0, 1) 内")


def power_iteration(matrix: np.ndarray, iterations: int = 50) -> float:
    """对称半正定矩阵的最大特征值（确定性起点）"""
    v = np.ones(matrix.shape[0]) / math.sqrt(matrix.shape[0])
    value = 0.0
    for _ in range(iterations):
        w = matrix @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        value = float(v @ matrix @ v)
    return value


def _burn_index(steps: int, burn_in: float) -> int:
    return min(int(math.floor(steps * burn_in)), steps - 1)


def myula_sample(model: PosteriorModel, cfg: MyulaConfig, rng: np.random.Generator,
                 chain: int = 0) -> np.ndarray:
    """返回 (n, m) 的burn-in后样本，每个样本已投影到可行多面体"""
    theta = model.map_estimate().copy()
    projector = model.projector
    if cfg.step_size is None:
        lipschitz = power_iteration(model.laplace_precision(), cfg.power_iterations)
        eta = 1.0 / (lipschitz + 1.0)
    else:
        eta = cfg.step_size
    envelope = cfg.envelope or eta
    contraction = eta / envelope
    noise = math.sqrt(2.0 * eta)
    start = _burn_index(cfg.steps, cfg.burn_in)
    kept = np.empty((cfg.steps - start, model.m))

    for k in range(cfg.steps):
        # ∇U在当前迭代点取值，迭代点可能暂时离开多面体
        grad = model.energy_grad(theta)
        anchor = projector.project(theta)
        theta = (1.0 - contraction) * theta - eta * grad + contraction * anchor + noise * rng.standard_normal(model.m)
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"MYULA在第{k}步发散", step=k, chain=chain)
        if k >= start:
            kept[k - start] = theta

    for i in range(kept.shape[0]):
        kept[i] = projector.project(kept[i])
    logger.debug(f"MYULA完成: η={eta:.3e}, 保留样本={kept.shape[0]}")
    return kept


class MirrorMap:
    """θ = D·tanh(y) + v，D = Γ⁻¹diag(h)，h = (u−l)/2，v = Γ⁻¹((u+l)/2·1)"""

    def __init__(self, gamma: np.ndarray, lower: float, upper: float):
        m = gamma.shape[0]
        self.half = 0.5 * (upper - lower)
        self.mid = 0.5 * (upper + lower)
        self.gamma = gamma
        self.D = solve(gamma, np.eye(m) * self.half)
        self.v = solve(gamma, np.full(m, self.mid))

    def primal(self, y: np.ndarray) -> np.ndarray:
        return self.D @ np.tanh(y) + self.v

    def dual(self, theta: np.ndarray) -> np.ndarray:
        z = (self.gamma @ theta - self.mid) / self.half
        return np.arctanh(np.clip(z, -1.0 + 1e-9, 1.0 - 1e-9))


def mirror_potential(model: PosteriorModel, mirror: MirrorMap, y: np.ndarray) -> float:
    """W(y) = U(θ(y)) + 2·Σ log cosh y"""
    log_cosh = np.logaddexp(y, -y) - math.log(2.0)
    return model.energy(mirror.primal(y)) + 2.0 * float(np.sum(log_cosh))


def mirror_gradient(model: PosteriorModel, mirror: MirrorMap, y: np.ndarray) -> np.ndarray:
    t = np.tanh(y)
    grad_u = model.energy_grad(mirror.primal(y))
    return (1.0 - t * t) * (mirror.D.T @ grad_u) + 2.0 * t


def mirrored_sample(model: PosteriorModel, cfg: MirrorConfig, rng: np.random.Generator,
                    chain: int = 0) -> np.ndarray:
    """对偶空间无约束Langevin，返回严格位于盒内的原始空间样本"""
    mirror = MirrorMap(model.basis.gamma, cfg.lower, cfg.upper)
    y = mirror.dual(model.map_estimate())
    if cfg.step_size is None:
        D = mirror.D
        lipschitz = power_iteration(D.T @ model.laplace_precision() @ D, cfg.power_iterations) + 2.0
        eta = 1.0 / (lipschitz + 1.0)
    else:
        eta = cfg.step_size
    noise = math.sqrt(2.0 * eta)
    start = _burn_index(cfg.steps, cfg.burn_in)
    kept = np.empty((cfg.steps - start, model.m))

    for k in range(cfg.steps):
        grad = mirror_gradient(model, mirror, y)
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"镜像势梯度在第{k}步非有限", step=k, chain=chain)
        y = np.clip(y - eta * grad + noise * rng.standard_normal(model.m), -Y_CLIP, Y_CLIP)
        if k >= start:
            kept[k - start] = mirror.primal(y)
    logger.debug(f"镜像Langevin完成: η={eta:.3e}, 保留样本={kept.shape[0]}")
    return kept


# ---------------------------------------------------------------------------
# 采样器注册
# ---------------------------------------------------------------------------

class SamplerBase(ABC):
    """采样器后端基类"""

    name: str = ""
    description: str = ""

    def __init__(self):
        self.execution_count = 0
        self.last_execution_time: Optional[float] = None
        self.total_time = 0.0

    def sample(self, model: PosteriorModel, rng: np.random.Generator, chain: int = 0) -> np.ndarray:
        started = time.perf_counter()
        samples = self._run(model, rng, chain)
        elapsed = time.perf_counter() - started
        self.execution_count += 1
        self.last_execution_time = elapsed
        self.total_time += elapsed
        return samples

    @abstractmethod
    def _run(self, model: PosteriorModel, rng: np.random.Generator, chain: int) -> np.ndarray:
        pass

    def get_stats(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "execution_count": self.execution_count,
            "last_execution_time": self.last_execution_time,
            "total_time": self.total_time,
        }


class MyulaSampler(SamplerBase):
    name = "myula"
    description = "Moreau-Yosida近端Langevin"

    def __init__(self, config: MyulaConfig):
        super().__init__()
        self.config = config

    def _run(self, model, rng, chain):
        return myula_sample(model, self.config, rng, chain)


class MirrorSampler(SamplerBase):
    name = "mirror"
    description = "tanh镜像Langevin（需要系数上界）"

    def __init__(self, config: MirrorConfig):
        super().__init__()
        self.config = config

    def _run(self, model, rng, chain):
        return mirrored_sample(model, self.config, rng, chain)


SAMPLERS: Dict[str, Type[SamplerBase]] = {
    MyulaSampler.name: MyulaSampler,
    MirrorSampler.name: MirrorSampler,
}


def build_sampler(config, lower_bound: float) -> SamplerBase:
    """由SamplerConfig构造采样器后端"""
    if config.kind not in SAMPLERS:
        raise ParameterError(f"未知采样器 '{config.kind}'，可选: {', '.join(SAMPLERS)}")
    if config.kind == MirrorSampler.name:
        return MirrorSampler(MirrorConfig(
            upper=config.upper_bound,
            lower=lower_bound,
            steps=config.steps,
            burn_in=config.burn_in,
            step_size=config.step_size,
            power_iterations=config.power_iterations,
        ))
    return MyulaSampler(MyulaConfig(
        steps=config.steps,
        burn_in=config.burn_in,
        step_size=config.step_size,
        envelope=config.envelope,
        power_iterations=config.power_iterations,
    ))


def write_chain_trace(samples: np.ndarray, path: Union[str, Path], header: str = "") -> Path:
    """CSV `step, theta_1..theta_m`"""
    path = Path(path)
    samples = np.atleast_2d(samples)
    frame = pd.DataFrame(samples, columns=[f"theta_{j + 1}" for j in range(samples.shape[1])])
    frame.insert(0, "step", np.arange(samples.shape[0]))
    with open(path, "w", encoding="utf-8", newline="") as f:
        if header:
            f.write(header.rstrip("\n") + "\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


# ---------------------------------------------------------------------------
# 泊松过程模拟
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PointProcessDraw:
    count: int
    locations: np.ndarray


Intensity = Union[Callable[[np.ndarray], np.ndarray], Tuple[BasisModel, np.ndarray]]


def _as_callable(intensity: Intensity) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(intensity, tuple):
        basis, theta = intensity
        return lambda pts: basis.intensity(theta, pts)
    return intensity


def _checked_values(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
    if np.any(values < -1e-9 * scale) or not np.all(np.isfinite(values)):
        raise ModelError("强度函数在感知区域内出现负值或非有限值", {"min": float(np.min(values))})
    return np.maximum(values, 0.0)


def _cell_offsets(a: np.ndarray, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    """线性密度 a→b 的单元内逆CDF，返回 [0,1] 内的相对位置"""
    denom = a + np.sqrt(a * a + u * (b * b - a * a))
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, u * (a + b) / safe, u)


def expected_count(intensity: Intensity, region, duration: float, resolution: Optional[int] = None) -> float:
    """Λ = Δ·∫_A λ（梯形/角点平均离散）"""
    lam = _as_callable(intensity)
    lower, upper = np.asarray(region.lower, dtype=float), np.asarray(region.upper, dtype=float)
    if lower.shape[0] == 1:
        nodes = np.linspace(lower[0], upper[0], resolution or GRID_1D)
        values = _checked_values(lam(nodes.reshape(-1, 1)))
        return duration * float(trapezoid(values, nodes))
    masses, _ = _cell_masses_2d(lam, lower, upper, resolution or GRID_2D)
    return duration * float(masses.sum())


def _cell_masses_2d(lam, lower: np.ndarray, upper: np.ndarray, n: int):
    """单元质量按 [iy, ix] 存放"""
    xs = np.linspace(lower[0], upper[0], n + 1)
    ys = np.linspace(lower[1], upper[1], n + 1)
    values = _checked_values(lam(tensor_grid([xs, ys]))).reshape(n + 1, n + 1)
    corners = 0.25 * (values[:-1, :-1] + values[1:, :-1] + values[:-1, 1:] + values[1:, 1:])
    area = (xs[1] - xs[0]) * (ys[1] - ys[0])
    return corners * area, (xs, ys)


def simulate_point_process(intensity: Intensity, region, duration: float, rng: np.random.Generator,
                           resolution: Optional[int] = None) -> PointProcessDraw:
    """N ~ Poisson(Δ∫_A λ)，位置按 λ|_A 独立放置"""
    if duration <= 0:
        raise ParameterError(f"感知时长必须为正，收到 {duration}")
    lam = _as_callable(intensity)
    lower, upper = np.asarray(region.lower, dtype=float), np.asarray(region.upper, dtype=float)
    d = lower.shape[0]

    if d == 1:
        nodes = np.linspace(lower[0], upper[0], resolution or GRID_1D)
        values = _checked_values(lam(nodes.reshape(-1, 1)))
        h = nodes[1] - nodes[0]
        masses = 0.5 * (values[:-1] + values[1:]) * h
        total = float(masses.sum())
        count = int(rng.poisson(duration * total)) if total > 0 else 0
        if count == 0:
            return PointProcessDraw(0, np.empty((0, 1)))
        cells = rng.choice(masses.shape[0], size=count, p=masses / total)
        offsets = _cell_offsets(values[cells], values[cells + 1], rng.random(count))
        points = np.clip(nodes[cells] + offsets * h, lower[0], upper[0])
        return PointProcessDraw(count, np.sort(points).reshape(-1, 1))

    if d != 2:
        raise ParameterError(f"点过程模拟只支持1维或2维，收到 {d} 维")
    n = resolution or GRID_2D
    masses, (xs, ys) = _cell_masses_2d(lam, lower, upper, n)
    flat = masses.ravel()
    total = float(flat.sum())
    count = int(rng.poisson(duration * total)) if total > 0 else 0
    if count == 0:
        return PointProcessDraw(0, np.empty((0, 2)))
    cells = rng.choice(flat.shape[0], size=count, p=flat / total)
    iy, ix = np.unravel_index(cells, masses.shape)
    jitter = rng.random((count, 2))
    points = np.column_stack([
        xs[ix] + jitter[:, 0] * (xs[1] - xs[0]),
        ys[iy] + jitter[:, 1] * (ys[1] - ys[0]),
    ])
    return PointProcessDraw(count, np.clip(points, lower, upper))
