"""
采集策略单元测试

测试采集策略模块的各种功能：
- 注册表的注册、查询与实例化
- 并列分数的确定性处理
- Cox-Thompson、Top2、ε-greedy 的打分函数
- V-optimal 的关注区域与期望迹
- 各策略在小规模协议上的运行
- 双峰强度上的水平集识别
"""

import numpy as np
import pytest

from coxsense.acquisitions import ALL_ACQUISITIONS
from coxsense.acquisitions.baselines import exploration_probability
from coxsense.acquisitions.cox_thompson import thompson_scores
from coxsense.acquisitions.top2 import xor_scores
from coxsense.acquisitions.v_optimal import expected_trace, region_of_interest, roi_matrix
from coxsense.config import AlgorithmConfig
from coxsense.core.acquisition_registry import (
    AcquisitionBase,
    AcquisitionRegistry,
    Selection,
    acquisition_registry,
    best_index,
)
from coxsense.core.posterior import CredibleParams, PosteriorModel
from coxsense.core.protocol import run_protocol
from coxsense.core.truth import bumps_intensity
from coxsense.errors import ConfigurationError, TaskComplete


class _FirstRegion(AcquisitionBase):
    name = "first_region"
    description = "总是选择第一个区域"

    def _select(self, state) -> Selection:
        return Selection(state.action_set[0], {"fixed": True})


class TestAcquisitionRegistry:
    """采集策略注册表测试类"""

    def test_builtin_algorithms_registered(self):
        """测试全部内置算法都已注册"""
        names = acquisition_registry.names()

        for cls in ALL_ACQUISITIONS:
            assert cls.name in names
        assert set(acquisition_registry.get_categories()) >= {"sampling", "optimism", "baseline"}
        assert acquisition_registry.names("baseline") == ["epsilon_greedy", "random"]

    def test_register_and_unregister(self):
        """测试注册与注销"""
        registry = AcquisitionRegistry()
        registry.register(_FirstRegion, "custom")

        assert registry.get("first_region") is _FirstRegion
        assert registry.names("custom") == ["first_region"]
        assert registry.get_stats()["total"] == 1
        assert registry.unregister("first_region") is True
        assert registry.unregister("first_region") is False
        assert registry.names("custom") == []

    def test_create_unknown_algorithm(self):
        """测试未注册的算法抛出ConfigurationError"""
        registry = AcquisitionRegistry()

        with pytest.raises(ConfigurationError) as exc_info:
            registry.create(AlgorithmConfig(name="thompson"))
        assert exc_info.value.details["valid"] == []

    def test_create_uses_label(self):
        """测试实例化后的标签取自配置"""
        acquisition = acquisition_registry.create(AlgorithmConfig(name="ucb", label="ucb[beta=2]", beta=2.0))

        assert acquisition.label == "ucb[beta=2]"
        assert acquisition.get_stats()["execution_count"] == 0


class TestBestIndex:
    """最优下标测试类"""

    def test_ties_go_to_smallest_index(self):
        """测试并列时取最小下标"""
        assert best_index(np.array([1.0, 3.0, 3.0, 2.0])) == 1
        assert best_index(np.array([2.0, 2.0, 2.0])) == 0

    def test_relative_tolerance(self):
        """测试相对误差内的差异视为并列"""
        assert best_index(np.array([1.0, 1.0 + 1e-12, 0.5])) == 0
        assert best_index(np.array([1.0, 1.0 + 1e-6, 0.5])) == 1

    def test_minimize(self):
        """测试最小化方向"""
        assert best_index(np.array([3.0, 1.0, 1.0]), maximize=False) == 1


class TestScores:
    """打分函数测试类"""

    def test_thompson_single_positive_leaf(self):
        """测试只有一个叶子上强度为正时选中该叶子"""
        psi = np.eye(4) * 0.5
        theta = np.array([0.0, 0.0, 2.0, 0.0])
        scores = thompson_scores(psi, theta, np.full(4, 0.5), 1.0)

        assert best_index(scores) == 2
        np.testing.assert_allclose(scores, [0.0, 0.0, 2.0, 0.0])

    def test_thompson_constant_ties(self):
        """测试常数强度、等代价时取最小id"""
        psi = np.full((4, 3), 0.25)
        scores = thompson_scores(psi, np.ones(3), np.full(4, 0.5), 2.0)

        assert best_index(scores) == 0

    def test_thompson_ignore_cost(self):
        """测试忽略代价时只比较计数"""
        psi = np.array([[2.0], [1.0]])
        costs = np.array([4.0, 1.0])

        assert best_index(thompson_scores(psi, np.ones(1), costs, 1.0)) == 1
        assert best_index(thompson_scores(psi, np.ones(1), costs, 1.0, ignore_cost=True)) == 0

    def test_exploration_probability(self):
        """测试ε_t = min(1, ε₀/√t)"""
        assert exploration_probability(1.0, 4) == pytest.approx(0.5)
        assert exploration_probability(5.0, 1) == 1.0
        assert exploration_probability(0.0, 10) == 0.0
        assert exploration_probability(1.0, 0) == 1.0

    def test_xor_scores_hand_computed(self):
        """测试对称差积分与手算一致"""
        grid_features = np.eye(4)
        weights = np.full(4, 0.5)
        membership = np.array([[True, True, False, False], [False, False, True, True]])
        costs = np.array([1.0, 2.0])
        theta1 = np.array([2.0, 0.5, 3.0, 0.2])
        theta2 = np.array([0.5, 0.6, 1.0, 0.1])

        scores = xor_scores(grid_features, weights, membership, costs, theta1, theta2, 1.0)
        # 点0: |2−0.5|·0.5 = 0.75；点2两者都在水平集内，不计入
        np.testing.assert_allclose(scores, [0.75, 0.0])

    def test_xor_scores_identical_samples(self):
        """测试两个样本相同时分数全为0"""
        theta = np.array([1.0, 2.0])
        scores = xor_scores(np.eye(2), np.ones(2), np.ones((1, 2), dtype=bool), np.ones(1), theta, theta, 1.5)

        assert scores[0] == 0.0


class TestVOptimal:
    """V-optimal辅助函数测试类"""

    def test_expected_trace_without_events(self):
        """测试M=I、Σ=I、无事件时迹为m"""
        assert expected_trace(np.eye(5), np.eye(5), np.zeros((0, 5)), np.ones(5)) == pytest.approx(5.0)

    def test_expected_trace_decreases_with_events(self):
        """测试追加事件后期望迹减小"""
        events = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0]])
        before = expected_trace(np.eye(3), np.eye(3), np.zeros((0, 3)), np.ones(3))

        assert expected_trace(np.eye(3), np.eye(3), events, np.ones(3)) < before

    def test_roi_matrix(self):
        """测试M_R只累加关注区域内的网格点"""
        features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        mask = np.array([True, False, True])

        M = roi_matrix(features, np.full(3, 0.5), mask)
        np.testing.assert_allclose(M, [[1.0, 0.5], [0.5, 0.5]])

    def test_maximum_roi_contains_lcb_argmax(self, identity_model):
        """测试最大值目标的关注区域非空"""
        posterior = PosteriorModel(identity_model(lower=0.1))
        features = posterior.basis.features(np.linspace(-1, 1, 21))

        mask = region_of_interest(posterior, features, "maximum", None, CredibleParams(1.0))
        assert mask.any()

    def test_empty_levelset_roi_completes_task(self, identity_model):
        """测试lcb处处低于阈值时抛出TaskComplete"""
        posterior = PosteriorModel(identity_model(lower=0.1))
        features = posterior.basis.features(np.linspace(-1, 1, 21))

        with pytest.raises(TaskComplete):
            region_of_interest(posterior, features, "levelset", 100.0, CredibleParams(1.0))


class TestAlgorithmsInProtocol:
    """各策略在协议中的运行测试类"""

    @pytest.mark.parametrize("name", ["thompson", "top2", "ucb", "v_optimal", "epsilon_greedy", "random"])
    def test_maximum_objective_runs(self, experiment_config, name):
        """测试最大值搜索下每种策略都能完成两轮"""
        config = experiment_config(rounds=2, algorithm={"name": name, "n_resamples": 2, "resample_cap": 5})
        episode = run_protocol(config)

        assert not episode.failed
        assert len(episode) == 2
        assert episode.stopped_reason == "round_cap"

    @pytest.mark.parametrize("name", ["top2", "v_optimal"])
    def test_levelset_objective_runs(self, experiment_config, name):
        """测试水平集识别下的Top2与V-optimal"""
        config = experiment_config(
            rounds=2, threshold=1.0, algorithm={"name": name, "objective": "levelset", "n_resamples": 2},
        )
        episode = run_protocol(config)

        assert not episode.failed
        assert episode.stopped_reason in ("round_cap", "task_complete")

    def test_top2_single_region(self, experiment_config):
        """测试只有一个区域时Top2直接选中它"""
        config = experiment_config(actions={"max_depth": 0}, algorithm={"name": "top2"})
        episode = run_protocol(config)

        assert [r.region_id for r in episode.rounds] == [0, 0, 0]
        assert episode.summary["sampler"]["execution_count"] == 0

    def test_epsilon_zero_is_greedy(self, experiment_config):
        """测试ε₀=0时从不探索"""
        config = experiment_config(algorithm={"name": "epsilon_greedy", "epsilon0": 0.0})
        episode = run_protocol(config)

        assert all(r.flags == {"explore": False} for r in episode.rounds)

    def test_custom_acquisition(self, experiment_config):
        """测试直接传入的策略实例"""
        acquisition = _FirstRegion(AlgorithmConfig(name="random", label="first"))
        episode = run_protocol(experiment_config(), acquisition=acquisition)

        assert episode.algorithm == "first"
        assert {r.region_id for r in episode.rounds} == {3}
        assert acquisition.get_stats()["flags"] == {"fixed": 3}


def _first_round_reaching(f1: np.ndarray, level: float) -> float:
    hits = np.flatnonzero(f1 >= level)
    return float(hits[0] + 1) if hits.size else np.inf


class TestLevelSetIdentification:
    """双峰强度上的水平集识别验收测试类"""

    @pytest.mark.slow
    def test_top2_identifies_level_set(self, experiment_config):
        """测试Top2在100轮内F1中位数 ≥ 0.95，且达到F1 ≥ 0.9的轮数中位数不多于random"""
        grid = np.linspace(-1, 1, 2001)
        threshold = 0.5 * float(bumps_intensity(grid).max())
        first_hit = {"top2": [], "random": []}
        best_f1 = []
        for seed in range(10):
            for name in first_hit:
                config = experiment_config(
                    kernel={"lengthscale": 0.15},
                    basis={"kind": "hat", "m": 64},
                    actions={"max_depth": 5, "include_ancestors": True},
                    duration=40.0,
                    rounds=100,
                    threshold=threshold,
                    truth="bumps",
                    eval_grid=512,
                    sampler={"steps": 500},
                    seed=seed,
                    algorithm={"name": name, "objective": "levelset"},
                )
                episode = run_protocol(config)
                assert not episode.failed
                f1 = episode.metric("f1")
                first_hit[name].append(_first_round_reaching(f1, 0.9))
                if name == "top2":
                    best_f1.append(f1.max())

        assert np.median(best_f1) >= 0.95
        assert np.median(first_hit["top2"]) <= np.median(first_hit["random"])
