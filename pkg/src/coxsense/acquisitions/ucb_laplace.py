"""乐观策略：Laplace置信上界/代价最大的区域"""

from ..core.acquisition_registry import AcquisitionBase, Selection, best_index, register_acquisition
from ..core.posterior import CredibleParams


@register_acquisition("optimism")
class UcbLaplace(AcquisitionBase):
    name = "ucb"
    description = "Laplace椭球∩多面体上的置信上界"

    def _select(self, state) -> Selection:
        params = CredibleParams(self.config.beta)
        ucb, _ = state.posterior.bounds_for(state.duration * state.psi, params, lower=False)
        scores = ucb / state.costs
        index = best_index(scores)
        return Selection(state.action_set[index], {"ucb": float(ucb[index])})
