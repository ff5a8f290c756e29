"""
感知协议单元测试

测试协议模块的各种功能：
- 实验组件构造
- 预算与轮数上限
- 轨迹的确定性
- 失败记录
- 后验重采样
- 命名随机流与阶段计时
"""

import numpy as np
import pandas as pd
import pytest

from coxsense.config import AlgorithmConfig
from coxsense.core.acquisition_registry import AcquisitionBase, Selection
from coxsense.core.action_set import Region
from coxsense.core.metrics_collector import MetricsCollector
from coxsense.core.posterior import PosteriorModel
from coxsense.core.protocol import TRACE_COLUMNS, Experiment, ProtocolState, build_basis, run_protocol
from coxsense.core.samplers import build_sampler
from coxsense.core.streams import RandomStreams


class _OutsideRegion(AcquisitionBase):
    name = "outside"

    def _select(self, state) -> Selection:
        return Selection(Region(999, np.array([-1.0]), np.array([1.0])))


class _BrokenFactorization(AcquisitionBase):
    name = "broken"

    def _select(self, state) -> Selection:
        np.linalg.cholesky(-np.eye(2))
        return Selection(state.action_set.by_id(0))


class _AlwaysRoot(AcquisitionBase):
    name = "root"

    def _select(self, state) -> Selection:
        return Selection(state.action_set.by_id(0))


class TestExperiment:
    """实验组件测试类"""

    def test_build_basis(self, experiment_config):
        """测试按配置构造的hat基维度"""
        basis = build_basis(experiment_config())

        assert basis.m == 12
        assert basis.lower_bound == 0.1

    def test_from_config(self, experiment_config):
        """测试实验组件的形状与叶子归属"""
        experiment = Experiment.from_config(experiment_config())

        assert len(experiment.action_set) == 4
        assert experiment.grid.size == 64
        assert experiment.grid_features.shape == (64, 12)
        assert experiment.membership.shape == (4, 64)
        assert experiment.psi.shape == (4, 12)
        np.testing.assert_allclose(experiment.costs, 0.5)
        assert set(experiment.leaf_of_grid.tolist()) == {3, 4, 5, 6}
        assert experiment.truth.name == "toy"

    def test_custom_intensity(self, experiment_config):
        """测试直接传入的真值强度"""
        experiment = Experiment.from_config(experiment_config(), intensity=lambda p: np.full(len(p), 2.0))

        # μ_A = Δ·2·|A|
        np.testing.assert_allclose(experiment.truth.mu, 1.0, rtol=1e-12)


class TestRunProtocol:
    """协议循环测试类"""

    def test_zero_budget(self, experiment_config):
        """测试预算为0时轨迹为空"""
        episode = run_protocol(experiment_config(budget=0.0, algorithm={"name": "random"}))

        assert len(episode) == 0
        assert episode.stopped_reason == "budget"
        assert episode.total_cost == 0.0

    def test_random_three_rounds(self, experiment_config):
        """测试random算法T=3时恰好3轮，累计代价为各轮代价之和"""
        episode = run_protocol(experiment_config(algorithm={"name": "random"}))

        assert len(episode) == 3
        assert episode.stopped_reason == "round_cap"
        assert [r.round for r in episode.rounds] == [1, 2, 3]
        assert episode.total_cost == pytest.approx(sum(r.cost for r in episode.rounds))
        assert np.all(np.diff([r.cum_cost for r in episode.rounds]) > 0)

    def test_budget_stops_after_crossing(self, experiment_config):
        """测试花费达到预算后停止，最后一轮可以越过预算"""
        config = experiment_config(rounds=10, budget=1.2, actions={"max_depth": 0, "include_ancestors": True})
        episode = run_protocol(config, acquisition=_AlwaysRoot(AlgorithmConfig(name="random")))

        # 根区域代价为2，第一轮后即超过预算
        assert len(episode) == 1
        assert episode.stopped_reason == "budget"
        assert episode.total_cost == pytest.approx(2.0)

    def test_same_seed_same_trace(self, experiment_config):
        """测试相同 (配置, 种子) 得到逐位相同的轨迹"""
        config = experiment_config(seed=5)
        first = run_protocol(config).to_frame()
        second = run_protocol(config).to_frame()

        pd.testing.assert_frame_equal(first, second)

    def test_different_seed_changes_events(self, experiment_config):
        """测试不同种子的随机策略轨迹不同"""
        first = run_protocol(experiment_config(seed=1, rounds=6, algorithm={"name": "random"}))
        second = run_protocol(experiment_config(seed=2, rounds=6, algorithm={"name": "random"}))

        assert [(r.region_id, r.n_events) for r in first.rounds] != [(r.region_id, r.n_events) for r in second.rounds]

    def test_failure_is_recorded(self, experiment_config):
        """测试策略返回动作集之外的区域时记录失败"""
        episode = run_protocol(experiment_config(), acquisition=_OutsideRegion(AlgorithmConfig(name="random")))

        assert episode.failed
        assert episode.stopped_reason == "failed"
        assert episode.error["round"] == 1
        assert episode.error["error_class"] == "InvariantViolation"
        assert len(episode) == 0

    def test_foreign_exception_is_recorded(self, experiment_config):
        """测试策略内部抛出LinAlgError时同样记录失败与轮次"""
        episode = run_protocol(experiment_config(), acquisition=_BrokenFactorization(AlgorithmConfig(name="random")))

        assert episode.stopped_reason == "failed"
        assert episode.error["round"] == 1
        assert episode.error["error_class"] == "LinAlgError"
        assert episode.error["error_type"] == "numerical_error"
        assert len(episode) == 0

    def test_metrics_hook_failure_is_recorded(self, experiment_config):
        """测试指标回调抛出普通异常时在对应轮次记录失败"""

        def hook(state, region, draw):
            if state.round == 2:
                raise ValueError("指标计算失败")
            return {}

        episode = run_protocol(experiment_config(algorithm={"name": "random"}), metrics_hook=hook)

        assert episode.stopped_reason == "failed"
        assert episode.error["round"] == 2
        assert episode.error["error_class"] == "ValueError"
        assert len(episode) == 1

    def test_trace_frame(self, experiment_config, tmp_path):
        """测试轨迹长表的列与CSV输出"""
        episode = run_protocol(experiment_config(algorithm={"name": "random"}))
        frame = episode.to_frame()

        assert list(frame.columns) == TRACE_COLUMNS
        assert set(frame["metric_name"]) == {"count_regret", "cum_count_regret", "inference_regret",
                                             "realized_regret"}
        assert len(frame) == 3 * 4
        path = episode.to_csv(tmp_path / "trace.csv", header="# coxsense config_hash=abc seed=0")
        assert len(pd.read_csv(path, comment="#")) == 12

    def test_levelset_records_f1(self, experiment_config):
        """测试设置阈值时每轮记录F1"""
        episode = run_protocol(experiment_config(threshold=1.0, algorithm={"name": "random"}))

        f1 = episode.metric("f1")
        assert f1.shape == (3,)
        assert np.all((f1 >= 0.0) & (f1 <= 1.0))

    def test_metadata(self, experiment_config):
        """测试元数据包含停止原因与计时"""
        config = experiment_config(algorithm={"name": "random"})
        meta = run_protocol(config).metadata()

        assert meta["config_hash"] == config.config_hash()
        assert meta["stopped_reason"] == "round_cap"
        assert len(meta["round_timings"]) == 3
        assert "acquisition" in meta["timings"]["phases"]

    def test_metrics_hook(self, experiment_config):
        """测试自定义指标回调"""
        episode = run_protocol(experiment_config(algorithm={"name": "random"}),
                               metrics_hook=lambda state, region, draw: {"volume": region.volume})

        np.testing.assert_allclose(episode.metric("volume"), 0.5)


def _state(config) -> ProtocolState:
    experiment = Experiment.from_config(config)
    return ProtocolState(
        experiment=experiment,
        posterior=PosteriorModel(experiment.basis, experiment.integrals, config.lower_bound),
        streams=RandomStreams(config.seed),
        sampler=build_sampler(config.sampler, config.lower_bound),
        collector=MetricsCollector(),
    )


def _pool_index(pool: np.ndarray, row: np.ndarray) -> int:
    return int(np.flatnonzero(np.all(pool == row, axis=1))[0])


class TestPosteriorDraws:
    """后验重采样测试类"""

    def test_first_draw_is_final_iterate(self, experiment_config):
        """测试k=0取链的最终迭代"""
        state = _state(experiment_config())

        np.testing.assert_array_equal(state.draw(0), state.posterior_pool()[-1])

    def test_redraws_are_random_pool_rows(self, experiment_config):
        """测试k≥1的重采样是池中的行，且下标不是固定步长"""
        state = _state(experiment_config(seed=4))
        pool = state.posterior_pool()
        indices = [_pool_index(pool, state.draw(k)) for k in range(1, 21)]

        assert all(0 <= i < len(pool) for i in indices)
        assert len(set(np.diff(indices).tolist())) > 1

    def test_redraws_are_reproducible(self, experiment_config):
        """测试相同种子下重采样序列相同，且同一轮只采样一次"""
        first = _state(experiment_config(seed=4))
        second = _state(experiment_config(seed=4))
        a = np.array([first.draw(k) for k in range(6)])
        b = np.array([second.draw(k) for k in range(6)])

        np.testing.assert_array_equal(a, b)
        assert first.collector.get_summary()["phases"]["sampling"]["count"] == 1


class TestRandomStreams:
    """命名随机流测试类"""

    def test_same_name_same_generator(self):
        """测试同名流在一次运行内复用"""
        streams = RandomStreams(3)

        assert streams.get("sampler") is streams["sampler"]
        assert streams.names() == ["sampler"]

    def test_streams_are_independent(self):
        """测试不同名字的流互不影响"""
        a = RandomStreams(3)
        b = RandomStreams(3)
        a.get("simulator").random(10)

        assert a.get("sampler").random() == b.get("sampler").random()
        assert RandomStreams(3).fresh("x").random() != RandomStreams(3).fresh("y").random()

    def test_fresh_restarts(self):
        """测试fresh从根种子重新派生"""
        streams = RandomStreams(7)
        first = streams.get("nmf").random(3)

        np.testing.assert_array_equal(streams.fresh("nmf").random(3), first)


class TestMetricsCollector:
    """阶段计时测试类"""

    def test_phase_accumulates_per_round(self):
        """测试同一轮内同名阶段累加"""
        collector = MetricsCollector("test")
        with collector.phase("map", 1):
            pass
        with collector.phase("map", 1):
            pass
        collector.end_round(1)

        summary = collector.get_summary()
        assert summary["phases"]["map"]["count"] == 2
        assert summary["counters"]["rounds"] == 1
        assert summary["peak_rss_mb"] > 0
        assert set(collector.round_timings[1]) == {"map"}

    def test_record_keeps_bounded_summary(self):
        """测试逐轮指标只保留滚动汇总，并出现在摘要中"""
        collector = MetricsCollector()
        for t in range(1, 501):
            collector.record("regret", float(t % 7), t)

        summary = collector.get_summary()["metrics"]["regret"]
        assert summary == {"count": 500, "last": 500 % 7, "last_round": 500, "max": 6.0, "min": 0.0}
        assert list(collector.metrics) == ["regret"]

    def test_run_summary_contains_metrics(self, experiment_config):
        """测试协议运行摘要带有各指标的汇总"""
        episode = run_protocol(experiment_config(algorithm={"name": "random"}))

        regret = episode.summary["timings"]["metrics"]["count_regret"]
        assert regret["count"] == 3
        assert regret["last_round"] == 3
