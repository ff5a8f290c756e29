"""
Top2后验采样

最大值搜索：重采样直到两个样本推荐的最大点落在不同叶子，再以各1/2的概率感知包含其一的最低代价区域。
水平集识别：重采样直到两个样本的水平集不同，按对称差上的 |λ̃₁ − λ̃₂| 积分/代价选区域。
"""

from typing import Optional

import numpy as np
from loguru import logger

from ..core.acquisition_registry import AcquisitionBase, Selection, best_index, register_acquisition


def xor_scores(grid_features: np.ndarray, weights: np.ndarray, membership: np.ndarray, costs: np.ndarray,
               theta1: np.ndarray, theta2: np.ndarray, threshold: float) -> np.ndarray:
    """(1/w(A))·∫_A |Φᵀ(θ̃₁−θ̃₂)|·1[S̃₁⊕S̃₂] 在评估网格上的求和"""
    lam1 = grid_features @ theta1
    lam2 = grid_features @ theta2
    xor = (lam1 >= threshold) != (lam2 >= threshold)
    integrand = np.abs(lam1 - lam2) * xor * weights
    return (membership.astype(float) @ integrand) / costs


@register_acquisition("sampling")
class Top2(AcquisitionBase):
    name = "top2"
    description = "Top-two后验采样（最大值或水平集）"
    needs_samples = True

    def _select(self, state) -> Selection:
        if len(state.action_set) == 1:
            return Selection(state.action_set[0])
        if self.config.objective == "levelset":
            return self._select_levelset(state)
        return self._select_maximum(state)

    def _select_maximum(self, state) -> Selection:
        exp = state.experiment
        cap = self.config.resample_cap
        first = int(np.argmax(exp.grid_features @ state.draw(0)))
        second: Optional[int] = None
        for k in range(1, cap + 1):
            candidate = int(np.argmax(exp.grid_features @ state.draw(k)))
            if exp.leaf_of_grid[candidate] != exp.leaf_of_grid[first]:
                second = candidate
                break
        if second is None:
            logger.warning(f"Top2在{cap}次重采样内推荐一致，视为收敛 (第{state.round}轮)")
            region = exp.action_set.lowest_cost_containing(exp.grid.points[first], exp.cost_model)
            return Selection(region, {"converged": True})
        coin = state.rng("algorithm").random() < 0.5
        chosen = first if coin else second
        region = exp.action_set.lowest_cost_containing(exp.grid.points[chosen], exp.cost_model)
        return Selection(region, {"converged": False, "recommendation": 1 if coin else 2})

    def _select_levelset(self, state) -> Selection:
        exp = state.experiment
        cap = self.config.resample_cap
        tau = state.threshold
        theta1 = state.draw(0)
        level1 = exp.grid_features @ theta1 >= tau
        for k in range(1, cap + 1):
            theta2 = state.draw(k)
            if np.any((exp.grid_features @ theta2 >= tau) != level1):
                scores = xor_scores(exp.grid_features, exp.grid.weights, exp.membership, exp.costs,
                                    theta1, theta2, tau)
                if np.max(scores) > 0.0:
                    return Selection(exp.action_set[best_index(scores)], {"fallback": False})
        logger.warning(f"Top2水平集在{cap}次重采样内一致，改用未探索区域 (第{state.round}轮)")
        return Selection(state.unexplored_region(), {"fallback": True})
