"""
多面体投影 pr(θ) = argmin_{Γy ≥ l} ‖θ − y‖²

对偶问题 min_{λ≥0} ½λᵀ(ΓΓᵀ)λ + λᵀ(Γθ − l)，原解 y = θ + Γᵀλ。
Γ可逆时对偶等价于非负最小二乘 min_{λ≥0} ½‖Γᵀλ − (z − θ)‖²，z = Γ⁻¹(l·1)，
用Lawson-Hanson有效集法（scipy.optimize.nnls）求解；上一次的有效集用于热启动。
"""

from typing import Dict, Optional

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve
from scipy.optimize import nnls

from ..errors import NumericalError

KKT_TOL = 1e-10


class PolytopeProjector:
    """{y : Γy ≥ l·1} 上的欧氏投影，可跨Langevin步热启动"""

    def __init__(self, gamma: np.ndarray, lower: float, tol: float = KKT_TOL, max_iter: Optional[int] = None):
        self.gamma = np.asarray(gamma, dtype=float)
        self.lower = float(lower)
        self.tol = tol
        self.m = self.gamma.shape[0]
        self.max_iter = max_iter or 10 * self.m
        self.gram = self.gamma @ self.gamma.T
        self.anchor = solve(self.gamma, np.full(self.m, self.lower))
        self._active: Optional[np.ndarray] = None
        self.stats: Dict[str, int] = {"identity": 0, "warm": 0, "nnls": 0, "fista": 0}

    def _kkt_ok(self, theta: np.ndarray, lam: np.ndarray) -> bool:
        y = theta + self.gamma.T @ lam
        slack = self.gamma @ y - self.lower
        scale = self.tol * max(1.0, float(np.max(np.abs(theta))), abs(self.lower))
        return bool(
            np.all(lam >= -scale)
            and np.all(slack >= -scale)
            and np.all(np.abs(lam * slack) <= scale * max(1.0, float(np.max(lam, initial=0.0))))
        )

    def _warm_start(self, theta: np.ndarray, q: np.ndarray) -> Optional[np.ndarray]:
        active = self._active
        if active is None or not np.any(active):
            return None
        lam = np.zeros(self.m)
        try:
            G = self.gram[np.ix_(active, active)]
            lam[active] = cho_solve(cho_factor(G), -q[active])
        except LinAlgError:
            return None
        if self._kkt_ok(theta, lam):
            return lam
        return None

    def _fista(self, theta: np.ndarray, q: np.ndarray) -> np.ndarray:
        step = 1.0 / max(float(np.linalg.eigvalsh(self.gram)[-1]), 1e-300)
        lam = np.zeros(self.m)
        z, t = lam.copy(), 1.0
        for _ in range(50 * self.max_iter):
            lam_next = np.maximum(0.0, z - step * (self.gram @ z + q))
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = lam_next + ((t - 1.0) / t_next) * (lam_next - lam)
            lam, t = lam_next, t_next
            if self._kkt_ok(theta, lam):
                break
        return lam

    def multipliers(self, theta: np.ndarray) -> np.ndarray:
        """投影的对偶变量λ ≥ 0"""
        theta = np.asarray(theta, dtype=float)
        q = self.gamma @ theta - self.lower
        if np.all(q >= 0.0):
            self.stats["identity"] += 1
            return np.zeros(self.m)

        lam = self._warm_start(theta, q)
        if lam is not None:
            self.stats["warm"] += 1
        else:
            try:
                lam, _ = nnls(self.gamma.T, self.anchor - theta, maxiter=self.max_iter)
                self.stats["nnls"] += 1
            except RuntimeError:
                lam = None
            if lam is None or not self._kkt_ok(theta, lam):
                lam = self._fista(theta, q)
                self.stats["fista"] += 1
                if not self._kkt_ok(theta, lam):
                    y = theta + self.gamma.T @ lam
                    raise NumericalError(
                        "多面体投影QP在迭代上限内未满足KKT条件",
                        {
                            "min_slack": float(np.min(self.gamma @ y - self.lower)),
                            "min_multiplier": float(np.min(lam)),
                            "stats": dict(self.stats),
                        },
                    )
        self._active = lam > 0.0
        return lam

    def project(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        lam = self.multipliers(theta)
        if not np.any(lam):
            return theta.copy()
        return theta + self.gamma.T @ lam

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        return self.project(theta)


def prox_project(gamma: np.ndarray, lower: float, theta: np.ndarray) -> np.ndarray:
    """θ 到 {y : Γy ≥ l·1} 的欧氏投影"""
    result = PolytopeProjector(gamma, lower).project(theta)
    logger.trace(f"prox_project: ‖Δ‖={np.linalg.norm(result - np.asarray(theta)):.3e}")
    return result
