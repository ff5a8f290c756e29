"""
对数障碍内点法

求解 min f(x)  s.t.  Ax ≥ b,  g_k(x) ≤ 0（可选的光滑凸约束），
障碍目标 f(x) − μ·Σlog(Ax−b) − μ·Σlog(−g_k(x))，μ按几何级数递减。
"""

from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq

from ..errors import ConvergenceError

Vector = np.ndarray
ConvexConstraint = Tuple[Callable[[Vector], float], Callable[[Vector], Vector], Callable[[Vector], np.ndarray]]


@dataclass
class BarrierProblem:
    """障碍法问题描述"""
    value: Callable[[Vector], float]
    gradient: Callable[[Vector], Vector]
    hessian: Callable[[Vector], np.ndarray]
    A: np.ndarray
    b: np.ndarray
    convex: List[ConvexConstraint] = field(default_factory=list)


@dataclass
class BarrierResult:
    x: Vector
    mu: float
    multipliers: Vector
    newton_steps: int
    outer_steps: int
    converged: bool


def _slacks(problem: BarrierProblem, x: Vector) -> Tuple[Vector, Vector]:
    s = problem.A @ x - problem.b
    g = np.array([c[0](x) for c in problem.convex]) if problem.convex else np.zeros(0)
    return s, g


def _barrier_value(problem: BarrierProblem, x: Vector, mu: float) -> float:
    s, g = _slacks(problem, x)
    if np.any(s <= 0) or np.any(g >= 0):
        return np.inf
    f = problem.value(x)
    if not np.isfinite(f):
        return np.inf
    return f - mu * (np.sum(np.log(s)) + np.sum(np.log(-g)))


def _newton_direction(problem: BarrierProblem, x: Vector, mu: float) -> Tuple[Vector, Vector]:
    s, g = _slacks(problem, x)
    grad = problem.gradient(x) - mu * (problem.A.T @ (1.0 / s))
    hess = problem.hessian(x) + mu * (problem.A.T * (1.0 / s**2)) @ problem.A
    for (gk, dgk, hgk), gv in zip(problem.convex, g):
        dg = dgk(x)
        grad = grad + mu * dg / (-gv)
        hess = hess + mu * (np.outer(dg, dg) / gv**2 + hgk(x) / (-gv))
    hess = 0.5 * (hess + hess.T)
    try:
        step = -cho_solve(cho_factor(hess), grad)
    except LinAlgError:
        step = -lstsq(hess, grad)[0]
    return step, grad


def solve_barrier(
    problem: BarrierProblem,
    x0: Vector,
    mu0: float = 1.0,
    mu_factor: float = 10.0,
    mu_min: float = 1e-12,
    newton_tol: float = 1e-12,
    max_newton: int = 60,
    armijo: float = 0.25,
) -> BarrierResult:
    """从严格可行点出发沿中心路径求解"""
    x = np.array(x0, dtype=float)
    if not np.isfinite(_barrier_value(problem, x, mu0)):
        raise ConvergenceError("障碍法初始点不是严格可行点")
    mu, total_steps, outer = mu0, 0, 0
    converged = True
    while True:
        outer += 1
        for _ in range(max_newton):
            step, grad = _newton_direction(problem, x, mu)
            decrement = float(-grad @ step)
            if decrement / 2.0 <= newton_tol:
                break
            current = _barrier_value(problem, x, mu)
            alpha = 1.0
            for _ in range(80):
                candidate = x + alpha * step
                value = _barrier_value(problem, candidate, mu)
                if np.isfinite(value) and value <= current - armijo * alpha * decrement:
                    break
                alpha *= 0.5
            else:
                converged = False
                logger.debug(f"障碍法线搜索失败 (μ={mu:.1e})")
                break
            x = candidate
            total_steps += 1
        if mu <= mu_min:
            break
        mu = max(mu / mu_factor, mu_min)
    s, _ = _slacks(problem, x)
    return BarrierResult(
        x=x,
        mu=mu,
        multipliers=mu / s,
        newton_steps=total_steps,
        outer_steps=outer,
        converged=converged,
    )
