"""
V-optimal设计

在关注区域 R_t 上最小化期望后验平方预测误差：
    (1/w(A))·E[Tr(M_R·(Σ_L + Σ_i Φ(x_i)Φ(x_i)ᵀ/(Φ(x_i)ᵀθ̂)²)⁻¹)]
其中 M_R = ∫_{R_t} ΦΦᵀ，期望通过在乐观速率 θ̂_A 下模拟区域A的点过程估计。
"""

import numpy as np
from loguru import logger
from scipy.linalg import cho_factor, cho_solve

from ..core.acquisition_registry import AcquisitionBase, Selection, best_index, register_acquisition
from ..core.posterior import CLAMP, CredibleParams, PosteriorModel
from ..core.samplers import simulate_point_process
from ..errors import TaskComplete


def region_of_interest(posterior: PosteriorModel, grid_features: np.ndarray, objective: str,
                       threshold, params: CredibleParams, roi: str = "lcb") -> np.ndarray:
    """关注区域掩码：levelset 为 lcb≥τ（或 ucb≥τ），maximum 为 ucb ≥ max lcb"""
    ucb, lcb = posterior.bounds_for(grid_features, params)
    if objective == "levelset":
        mask = (lcb if roi == "lcb" else ucb) >= threshold
    else:
        mask = ucb >= np.max(lcb)
    if not np.any(mask):
        raise TaskComplete("关注区域为空", {"objective": objective})
    return mask


def roi_matrix(grid_features: np.ndarray, weights: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """M_R = ∫_R Φ(x)Φ(x)ᵀ dx"""
    F = grid_features[mask]
    return (F * weights[mask][:, None]).T @ F


def expected_trace(M: np.ndarray, precision: np.ndarray, event_features: np.ndarray,
                   theta_hat: np.ndarray) -> float:
    """Tr(M·(Σ_L + Σ_i ΦΦᵀ/(Φᵀθ̂)²)⁻¹)"""
    updated = precision
    if event_features.shape[0]:
        v = np.maximum(event_features @ theta_hat, CLAMP)
        scaled = event_features / v[:, None]
        updated = precision + scaled.T @ scaled
    return float(np.trace(cho_solve(cho_factor(updated), M)))


@register_acquisition("optimism")
class VOptimal(AcquisitionBase):
    name = "v_optimal"
    description = "关注区域上的V-optimal实验设计"

    def _select(self, state) -> Selection:
        exp = state.experiment
        posterior = state.posterior
        params = CredibleParams(self.config.beta)
        mask = region_of_interest(posterior, exp.grid_features, self.config.objective, state.threshold,
                                  params, self.config.levelset_roi)
        M = roi_matrix(exp.grid_features, exp.grid.weights, mask)
        theta_hat = posterior.map_estimate()
        precision = posterior.laplace_precision()
        rng = state.rng("lookahead")

        objective = np.empty(len(exp.action_set))
        for i, region in enumerate(exp.action_set):
            _, optimistic = posterior.ucb_argmax(exp.psi[i], params.beta)
            total = 0.0
            for _ in range(self.config.n_resamples):
                draw = simulate_point_process((exp.basis, optimistic), region, state.duration, rng)
                features = exp.basis.features(draw.locations) if draw.count else np.zeros((0, posterior.m))
                total += expected_trace(M, precision, features, theta_hat)
            objective[i] = total / self.config.n_resamples / exp.costs[i]
        index = best_index(objective, maximize=False)
        logger.debug(f"V-optimal: |R|={int(mask.sum())}, 最优区域={exp.action_set[index].id}")
        return Selection(exp.action_set[index], {"roi_size": int(mask.sum())})
