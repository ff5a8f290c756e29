"""
Cox-Thompson采样

用后验样本 θ̃ 选出计数/代价比最大的区域：A_t = argmax_A Δ·ψ_Aᵀθ̃ / w(A)
"""

import numpy as np

from ..core.acquisition_registry import AcquisitionBase, Selection, best_index, register_acquisition


def thompson_scores(psi: np.ndarray, theta: np.ndarray, costs: np.ndarray, duration: float,
                    ignore_cost: bool = False) -> np.ndarray:
    counts = duration * (psi @ theta)
    return counts if ignore_cost else counts / costs


@register_acquisition("sampling")
class CoxThompson(AcquisitionBase):
    name = "thompson"
    description = "后验采样的计数/代价比最大化"
    needs_samples = True

    def _select(self, state) -> Selection:
        # 链的最后一个样本
        theta = state.draw(0)
        scores = thompson_scores(state.psi, theta, state.costs, state.duration, self.config.thompson_ignore_cost)
        return Selection(state.action_set[best_index(scores)])
