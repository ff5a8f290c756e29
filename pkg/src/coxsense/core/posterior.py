"""
后验模块

维护观测日志，计算能量 U(θ) 及其导数、约束MAP、Laplace精度矩阵以及UCB/LCB程序。

U(θ) = Σ_j [ −Σ_i log θᵀΦ(x_ij) + Δ_j·θᵀψ_{A_j} ] + ½‖θ‖²

Laplace近似中 Σ_L 作为精度矩阵（U在MAP处的Hessian）使用。
"""

import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import orjson
import pandas as pd
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve

from ..errors import ConvergenceError, InvariantViolation, ParameterError
from .basis import BasisModel, RegionIntegrals, region_integrals
from .kernels import as_points
from .optim import BarrierProblem, solve_barrier
from .polytope import PolytopeProjector

CLAMP = 1e-12
DEFAULT_BETA = 3.0


@dataclass(frozen=True)
class CredibleParams:
    """置信集参数"""
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.beta < 0:
            raise ParameterError(f"β 必须非负，收到 {self.beta}")


@dataclass(frozen=True, eq=False)
class Observation:
    """一次感知：区域、时长与事件位置"""
    region: Any
    duration: float
    events: np.ndarray

    @property
    def count(self) -> int:
        return int(self.events.shape[0])


class ObservationLog:
    """只追加的观测日志（数据集D）"""

    def __init__(self, dimension: int):
        self.dimension = dimension
        self._entries: List[Observation] = []

    def append(self, region: Any, duration: float, events) -> Observation:
        if duration <= 0:
            raise ParameterError(f"感知时长必须为正，收到 {duration}")
        pts = np.empty((0, self.dimension)) if events is None or len(events) == 0 else as_points(events, self.dimension)
        lower, upper = np.asarray(region.lower), np.asarray(region.upper)
        if pts.size and not np.all((pts >= lower - 1e-12) & (pts <= upper + 1e-12)):
            raise ParameterError(f"事件不在区域 {getattr(region, 'id', '?')} 内")
        entry = Observation(region=region, duration=float(duration), events=pts.copy())
        self._entries.append(entry)
        return entry

    @property
    def entries(self) -> Tuple[Observation, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def total_events(self) -> int:
        return sum(e.count for e in self._entries)

    def all_events(self) -> np.ndarray:
        if not self._entries:
            return np.empty((0, self.dimension))
        return np.vstack([e.events for e in self._entries])

    def to_frame(self) -> pd.DataFrame:
        """每个事件一行，外加每轮一行汇总（事件坐标为空）"""
        axes = ["event_x", "event_y", "event_z"][: self.dimension]
        rows = []
        for t, entry in enumerate(self._entries, start=1):
            rid = getattr(entry.region, "id", -1)
            rows.append({"round": t, "region_id": rid, "duration": entry.duration, "n_events": entry.count,
                         **{a: np.nan for a in axes}})
            for point in entry.events:
                rows.append({"round": t, "region_id": rid, "duration": entry.duration, "n_events": np.nan,
                             **dict(zip(axes, point))})
        columns = ["round", "region_id", "duration", *axes, "n_events"]
        return pd.DataFrame(rows, columns=columns)

    def to_csv(self, path: Union[str, Path], header: str = "") -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as f:
            if header:
                f.write(header.rstrip("\n") + "\n")
            self.to_frame().to_csv(f, index=False, float_format="%.17g")
        geometry = {}
        for entry in self._entries:
            region = entry.region
            geometry[str(getattr(region, "id", -1))] = {
                "lower": np.asarray(region.lower).tolist(),
                "upper": np.asarray(region.upper).tolist(),
                "depth": getattr(region, "depth", None),
                "parent": getattr(region, "parent", None),
            }
        sidecar = path.with_suffix(".regions.json")
        sidecar.write_bytes(orjson.dumps(geometry, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
        return sidecar

    @classmethod
    def from_csv(cls, path: Union[str, Path], dimension: int) -> "ObservationLog":
        from .action_set import Region

        path = Path(path)
        geometry = orjson.loads(path.with_suffix(".regions.json").read_bytes())
        frame = pd.read_csv(path, comment="#")
        axes = ["event_x", "event_y", "event_z"][:dimension]
        log = cls(dimension)
        for _, group in frame.groupby("round", sort=True):
            rid = int(group["region_id"].iloc[0])
            info = geometry[str(rid)]
            region = Region(rid, np.asarray(info["lower"]), np.asarray(info["upper"]),
                            info.get("depth") or 0, info.get("parent"))
            events = group.loc[group[axes[0]].notna(), axes].to_numpy(dtype=float)
            log.append(region, float(group["duration"].iloc[0]), events)
        return log


@dataclass(frozen=True, eq=False)
class _Snapshot:
    """一次缓存刷新的不可变结果"""
    version: int
    event_features: np.ndarray
    linear_term: np.ndarray
    theta_map: Optional[np.ndarray] = None
    precision: Optional[np.ndarray] = None
    kkt_residual: float = float("nan")
    chol: Any = None


class PosteriorModel:
    """基模型 + 观测日志 + 下界 l

    单写者/多读者：observe() 追加数据后整体替换快照，读者只看到完整的快照。
    """

    def __init__(self, basis: BasisModel, integrals: Optional[RegionIntegrals] = None,
                 lower_bound: Optional[float] = None):
        self.basis = basis
        self.integrals = integrals
        self.lower_bound = basis.lower_bound if lower_bound is None else float(lower_bound)
        self.log = ObservationLog(basis.domain.dimension)
        self.projector = PolytopeProjector(basis.gamma, self.lower_bound)
        self.lock = threading.RLock()
        self._snapshot = _Snapshot(0, np.zeros((0, basis.m)), np.zeros(basis.m))
        self.stats: Dict[str, Any] = {"map_solves": 0, "polished": 0, "fallback": 0}

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def event_features(self) -> np.ndarray:
        return self._snapshot.event_features

    @property
    def linear_term(self) -> np.ndarray:
        return self._snapshot.linear_term

    def region_psi(self, region) -> np.ndarray:
        rid = getattr(region, "id", None)
        if self.integrals is not None and rid in self.integrals:
            return self.integrals.psi_of(rid)
        return region_integrals(self.basis, [region]).psi[0]

    def observe(self, region, duration: float, events) -> Observation:
        """追加一条观测并原子地替换缓存"""
        with self.lock:
            entry = self.log.append(region, duration, events)
            old = self._snapshot
            features = old.event_features
            if entry.count:
                features = np.vstack([features, self.basis.features(entry.events)])
            linear = old.linear_term + entry.duration * self.region_psi(region)
            self._snapshot = _Snapshot(old.version + 1, features, linear)
            logger.debug(f"追加观测: 区域={getattr(region, 'id', '?')}, 事件数={entry.count}")
            return entry

    # ------------------------------------------------------------------
    # 能量及其导数
    # ------------------------------------------------------------------

    def energy(self, theta: np.ndarray) -> float:
        snap = self._snapshot
        theta = np.asarray(theta, dtype=float)
        quad = 0.5 * float(theta @ theta) + float(snap.linear_term @ theta)
        if snap.event_features.shape[0] == 0:
            return quad
        v = snap.event_features @ theta
        if np.any(v <= 0.0):
            return math.inf
        return quad - float(np.sum(np.log(v)))

    def energy_grad(self, theta: np.ndarray) -> np.ndarray:
        snap = self._snapshot
        theta = np.asarray(theta, dtype=float)
        grad = snap.linear_term + theta
        if snap.event_features.shape[0]:
            v = np.maximum(snap.event_features @ theta, CLAMP)
            grad = grad - snap.event_features.T @ (1.0 / v)
        return grad

    def energy_hess(self, theta: np.ndarray) -> np.ndarray:
        snap = self._snapshot
        E = snap.event_features
        v = np.maximum(E @ np.asarray(theta, dtype=float), CLAMP)
        scaled = E / v[:, None]
        return scaled.T @ scaled + np.eye(self.m)

    # ------------------------------------------------------------------
    # MAP
    # ------------------------------------------------------------------

    def kkt_residual(self, theta: np.ndarray) -> float:
        """‖θ − proj(θ − ∇U(θ))‖"""
        theta = np.asarray(theta, dtype=float)
        return float(np.linalg.norm(theta - self.projector.project(theta - self.energy_grad(theta))))

    def _polish(self, theta: np.ndarray, multipliers: np.ndarray, slack: np.ndarray) -> Optional[np.ndarray]:
        """在估计的有效集上做等式约束Newton"""
        A = self.basis.gamma
        active = multipliers > slack
        x = theta.copy()
        for _ in range(30):
            g = self.energy_grad(x)
            H = self.energy_hess(x)
            k = int(np.sum(active))
            if k:
                Aw = A[active]
                kkt = np.block([[H, Aw.T], [Aw, np.zeros((k, k))]])
                rhs = np.concatenate([-g, self.lower_bound - Aw @ x])
                try:
                    sol = solve(kkt, rhs)
                except (LinAlgError, ValueError):
                    return None
                step, nu = sol[: self.m], -sol[self.m:]
            else:
                step, nu = -solve(H, g, assume_a="pos"), np.zeros(0)
            alpha = 1.0
            while alpha > 1e-10 and not np.isfinite(self.energy(x + alpha * step)):
                alpha *= 0.5
            x = x + alpha * step
            if np.linalg.norm(step) * alpha <= 1e-14 * max(1.0, np.linalg.norm(x)):
                break
        if k and np.any(nu < -1e-10):
            return None
        return x

    def _projected_gradient(self, theta: np.ndarray, tol: float, max_iter: int = 20000) -> np.ndarray:
        x = self.projector.project(theta)
        step = 1.0
        for _ in range(max_iter):
            g = self.energy_grad(x)
            fx = self.energy(x)
            while True:
                candidate = self.projector.project(x - step * g)
                fc = self.energy(candidate)
                if fc <= fx + g @ (candidate - x) + 0.5 / step * float(np.sum((candidate - x) ** 2)):
                    break
                step *= 0.5
                if step < 1e-16:
                    return x
            x = candidate
            if self.kkt_residual(x) <= tol:
                break
            step = min(step * 2.0, 1.0)
        return x

    def map_estimate(self, tol: float = 1e-8, max_newton: int = 60) -> np.ndarray:
        """θ̂ = argmin U(θ) s.t. Γθ ≥ l·1"""
        with self.lock:
            snap = self._snapshot
            if snap.theta_map is not None:
                return snap.theta_map
            A = self.basis.gamma
            problem = BarrierProblem(
                value=self.energy,
                gradient=self.energy_grad,
                hessian=self.energy_hess,
                A=A,
                b=np.full(self.m, self.lower_bound),
            )
            result = solve_barrier(problem, self.basis.interior_point(), max_newton=max_newton)
            theta = result.x
            residual = self.kkt_residual(theta)
            if residual > tol:
                polished = self._polish(theta, result.multipliers, A @ theta - self.lower_bound)
                if polished is not None and self.basis.is_feasible(polished, 1e-10):
                    res_polished = self.kkt_residual(polished)
                    if res_polished < residual:
                        theta, residual = polished, res_polished
                        self.stats["polished"] += 1
            if residual > tol:
                self.stats["fallback"] += 1
                logger.warning(f"障碍Newton残差 {residual:.2e} > {tol:.0e}，改用投影梯度")
                candidate = self._projected_gradient(theta, tol)
                res_candidate = self.kkt_residual(candidate)
                if res_candidate < residual:
                    theta, residual = candidate, res_candidate
            if residual > tol:
                raise ConvergenceError(f"MAP未收敛，KKT残差 {residual:.3e}", residual=residual)

            precision = self.energy_hess(theta)
            try:
                chol = cho_factor(precision)
            except LinAlgError as e:
                raise InvariantViolation("Laplace精度矩阵非正定") from e
            self._snapshot = _Snapshot(snap.version, snap.event_features, snap.linear_term,
                                       theta, precision, residual, chol)
            self.stats["map_solves"] += 1
            logger.debug(f"MAP求解完成: 版本={snap.version}, 残差={residual:.2e}, Newton步={result.newton_steps}")
            return theta

    def laplace_precision(self) -> np.ndarray:
        """Σ_L = ∇²U(θ̂)"""
        self.map_estimate()
        return self._snapshot.precision

    def kkt(self) -> float:
        self.map_estimate()
        return self._snapshot.kkt_residual

    def map_intensity(self, points: np.ndarray) -> np.ndarray:
        return self.basis.intensity(self.map_estimate(), points)

    # ------------------------------------------------------------------
    # 置信界
    # ------------------------------------------------------------------

    def _covariance_solve(self, rhs: np.ndarray) -> np.ndarray:
        self.map_estimate()
        return cho_solve(self._snapshot.chol, rhs)

    def ucb_argmax(self, psi: np.ndarray, beta: float, use_polytope: bool = True) -> Tuple[float, np.ndarray]:
        """max ψᵀθ s.t. (θ−θ̂)ᵀΣ_L(θ−θ̂) ≤ β, Γθ ≥ l；返回 (最优值, 最优点)"""
        theta_hat = self.map_estimate()
        psi = np.asarray(psi, dtype=float)
        if beta == 0.0 or not np.any(psi):
            return float(psi @ theta_hat), theta_hat.copy()
        direction = self._covariance_solve(psi)
        width = math.sqrt(max(float(psi @ direction), 0.0))
        candidate = theta_hat + math.sqrt(beta) * direction / width
        if not use_polytope or self.basis.is_feasible(candidate, 1e-10):
            return float(psi @ candidate), candidate
        return self._ucb_barrier(psi, beta, theta_hat)

    def _ucb_barrier(self, psi: np.ndarray, beta: float, theta_hat: np.ndarray) -> Tuple[float, np.ndarray]:
        A = self.basis.gamma
        P = self._snapshot.precision
        ones_dir = solve(A, np.ones(self.m))
        curvature = float(ones_dir @ P @ ones_dir)
        shift = 0.5 * math.sqrt(beta / curvature)
        start = theta_hat + shift * ones_dir
        if np.any(A @ start - self.lower_bound <= 0):
            raise InvariantViolation("置信椭球与多面体的交集没有严格内点", {"beta": beta})

        def q(x):
            d = x - theta_hat
            return float(d @ P @ d) - beta

        def dq(x):
            return 2.0 * P @ (x - theta_hat)

        def hq(x):
            return 2.0 * P

        problem = BarrierProblem(
            value=lambda x: -float(psi @ x),
            gradient=lambda x: -psi,
            hessian=lambda x: np.zeros((self.m, self.m)),
            A=A,
            b=np.full(self.m, self.lower_bound),
            convex=[(q, dq, hq)],
        )
        scale = max(float(np.abs(psi).max()), 1e-300)
        result = solve_barrier(problem, start, mu0=scale, mu_min=1e-7 * scale / (self.m + 1))
        return float(psi @ result.x), result.x

    def ucb_lcb(self, psi: np.ndarray, params: Optional[CredibleParams] = None,
                use_polytope: bool = True) -> Tuple[float, float]:
        """(ucb, lcb) = (max, min) ψᵀθ 于Laplace椭球 ∩ 多面体"""
        beta = (params or CredibleParams()).beta
        ucb, _ = self.ucb_argmax(psi, beta, use_polytope)
        neg, _ = self.ucb_argmax(-np.asarray(psi, dtype=float), beta, use_polytope)
        return ucb, -neg

    def bounds_for(self, rows: np.ndarray, params: Optional[CredibleParams] = None, use_polytope: bool = True,
                   lower: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """对矩阵每一行 ψ 求 (ucb, lcb)；lower=False 时只求ucb

        先用闭式解 ψᵀθ̂ ± √β‖ψ‖_{Σ_L⁻¹}，闭式最优点不可行的行再走障碍法。
        """
        beta = (params or CredibleParams()).beta
        theta_hat = self.map_estimate()
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        mean = rows @ theta_hat
        if beta == 0.0:
            return mean.copy(), (mean.copy() if lower else None)
        solved = self._covariance_solve(rows.T)
        widths = np.sqrt(np.maximum(np.einsum("ij,ji->i", rows, solved), 0.0))
        ucb = mean + math.sqrt(beta) * widths
        lcb = mean - math.sqrt(beta) * widths if lower else None
        if not use_polytope:
            return ucb, lcb

        A = self.basis.gamma
        safe = np.where(widths > 0, widths, 1.0)
        step = math.sqrt(beta) * solved / safe[None, :]
        sides = ((1.0, ucb), (-1.0, lcb)) if lower else ((1.0, ucb),)
        for sign, bound in sides:
            candidates = theta_hat[:, None] + sign * step
            feasible = np.all(A @ candidates >= self.lower_bound - 1e-10, axis=0) | (widths == 0)
            for i in np.flatnonzero(~feasible):
                value, _ = self._ucb_barrier(sign * rows[i], beta, theta_hat)
                bound[i] = sign * value
        return ucb, lcb

    def pointwise_bounds(self, grid: np.ndarray, params: Optional[CredibleParams] = None,
                         use_polytope: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """对每个网格点取 ψ = Φ(x) 的 (ucb, lcb)"""
        return self.bounds_for(self.basis.features(grid), params, use_polytope)


def energy(model: PosteriorModel, theta: np.ndarray) -> float:
    return model.energy(theta)


def energy_grad(model: PosteriorModel, theta: np.ndarray) -> np.ndarray:
    return model.energy_grad(theta)


def energy_hess(model: PosteriorModel, theta: np.ndarray) -> np.ndarray:
    return model.energy_hess(theta)


def map_estimate(model: PosteriorModel, tol: float = 1e-8) -> np.ndarray:
    return model.map_estimate(tol)


def laplace_precision(model: PosteriorModel) -> np.ndarray:
    return model.laplace_precision()


def ucb_lcb(model: PosteriorModel, psi: np.ndarray, params: Optional[CredibleParams] = None) -> Tuple[float, float]:
    return model.ucb_lcb(psi, params)


def pointwise_bounds(model: PosteriorModel, grid: np.ndarray, params: Optional[CredibleParams] = None,
                     use_polytope: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    return model.pointwise_bounds(grid, params, use_polytope)
