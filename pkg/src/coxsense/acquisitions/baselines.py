"""基线策略：ε-greedy 与均匀随机"""

import math

from ..core.acquisition_registry import AcquisitionBase, Selection, best_index, register_acquisition


def exploration_probability(epsilon0: float, round_index: int) -> float:
    """ε_t = min(1, ε₀/√t)"""
    return min(1.0, epsilon0 / math.sqrt(max(round_index, 1)))


@register_acquisition("baseline")
class EpsilonGreedy(AcquisitionBase):
    name = "epsilon_greedy"
    description = "以递减概率均匀探索，否则按MAP贪心"

    def _select(self, state) -> Selection:
        rng = state.rng("algorithm")
        epsilon = exploration_probability(self.config.epsilon0, state.round)
        if rng.random() < epsilon:
            index = int(rng.integers(len(state.action_set)))
            return Selection(state.action_set[index], {"explore": True})
        theta_hat = state.posterior.map_estimate()
        scores = state.duration * (state.psi @ theta_hat) / state.costs
        return Selection(state.action_set[best_index(scores)], {"explore": False})


@register_acquisition("baseline")
class RandomAcquisition(AcquisitionBase):
    name = "random"
    description = "均匀随机选择区域"

    def _select(self, state) -> Selection:
        index = int(state.rng("algorithm").integers(len(state.action_set)))
        return Selection(state.action_set[index])
