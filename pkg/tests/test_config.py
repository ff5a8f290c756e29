"""
配置管理单元测试

测试配置模块的各种功能：
- YAML加载与保存
- 严格校验与交叉检查
- 配置哈希
- 参数扫描与种子展开
- 运行配置的环境变量
"""

from pathlib import Path

import pytest

from coxsense.config import (
    AlgorithmConfig,
    ExperimentConfig,
    RuntimeSettings,
    SuiteConfig,
    SweepConfig,
    get_config,
    set_config,
)
from coxsense.errors import ConfigurationError

PACKAGED_CONFIGS = sorted((Path(__file__).parents[1] / "src" / "coxsense" / "configs").glob("*.yaml"))


class TestExperimentConfig:
    """实验配置测试类"""

    def test_defaults(self):
        """测试默认配置"""
        config = ExperimentConfig()

        assert config.dimension == 1
        assert config.algorithm.name == "thompson"
        assert config.basis.m == 64
        assert config.budget is None

    def test_yaml_round_trip(self, tmp_path, experiment_config):
        """测试保存后重新加载得到相同配置"""
        config = experiment_config(threshold=1.5, algorithm={"name": "top2", "objective": "levelset"})
        path = tmp_path / "config.yaml"
        config.save_yaml(path)

        loaded = ExperimentConfig.from_yaml(path)
        assert loaded == config
        assert loaded.config_hash() == config.config_hash()

    def test_unknown_key_rejected(self):
        """测试未知字段被拒绝并给出字段路径"""
        with pytest.raises(ConfigurationError) as exc_info:
            ExperimentConfig.from_dict({"basis": {"kind": "hat", "nodes": 5}})

        errors = exc_info.value.details["errors"]
        assert any(e.startswith("basis.nodes") for e in errors)

    def test_unknown_algorithm(self):
        """测试未知算法名"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"algorithm": {"name": "gittins"}})

    def test_levelset_requires_threshold(self):
        """测试水平集目标缺少阈值"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"algorithm": {"name": "top2", "objective": "levelset"}})

    def test_suite_levelset_requires_threshold(self):
        """测试套件中的水平集算法同样需要阈值"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"suite": {"algorithms": [{"name": "ucb", "objective": "levelset"}]}})

    def test_mirror_requires_upper_bound(self):
        """测试mirror采样器需要上界且上界大于下界"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"sampler": {"kind": "mirror"}})
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"lower_bound": 0.5, "sampler": {"kind": "mirror", "upper_bound": 0.5}})

    def test_domain_checks(self):
        """测试定义域维度与上下界"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"domain": {"lower": [0.0], "upper": [0.0]}})
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"domain": {"lower": [0.0, 0.0], "upper": [1.0]}})

    def test_missing_referenced_file(self, tmp_path):
        """测试引用不存在的文件"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"truth": str(tmp_path / "missing.csv")})

    def test_analytic_truth_names(self):
        """测试解析真值名字不被当作文件"""
        assert ExperimentConfig.from_dict({"truth": "constant:2.5"}).referenced_files() == []

    def test_zero_cost_rejected(self):
        """测试代价恒为零被拒绝"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"cost": {"kind": "uniform", "c1": 0.0}})

    def test_missing_yaml(self, tmp_path):
        """测试配置文件不存在"""
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_yaml(tmp_path / "nope.yaml")

    def test_non_mapping_yaml(self, tmp_path):
        """测试顶层不是映射的YAML"""
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")

        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_yaml(path)


class TestConfigHash:
    """配置哈希测试类"""

    def test_stable(self, experiment_config):
        """测试相同配置的哈希相同"""
        assert experiment_config().config_hash() == experiment_config().config_hash()
        assert len(experiment_config().config_hash()) == 16

    def test_excludes_output_dir(self, experiment_config):
        """测试输出目录不影响哈希"""
        assert experiment_config(output_dir="a").config_hash() == experiment_config(output_dir="b").config_hash()

    def test_sensitive_to_parameters(self, experiment_config):
        """测试参数变化改变哈希"""
        assert experiment_config(seed=1).config_hash() != experiment_config(seed=2).config_hash()

    def test_with_algorithm(self, experiment_config):
        """测试替换算法与种子"""
        config = experiment_config(suite={"algorithms": [{"name": "random"}]})
        cell = config.with_algorithm(AlgorithmConfig(name="ucb"), seed=9)

        assert cell.algorithm.name == "ucb"
        assert cell.seed == 9
        assert cell.suite is None


class TestSuiteConfig:
    """套件配置测试类"""

    def test_sweep_labels(self):
        """测试参数扫描展开为带标签的算法"""
        sweep = SweepConfig(algorithm=AlgorithmConfig(name="ucb"), parameter="beta", values=[1.0, 2.5])
        expanded = sweep.expand()

        assert [a.display_name for a in expanded] == ["ucb[beta=1]", "ucb[beta=2.5]"]
        assert [a.beta for a in expanded] == [1.0, 2.5]

    def test_integer_sweep(self):
        """测试整数参数的扫描取值"""
        sweep = SweepConfig(algorithm=AlgorithmConfig(name="v_optimal"), parameter="n_resamples", values=[5])

        assert sweep.expand()[0].n_resamples == 5

    def test_resolved_seeds(self):
        """测试未给种子列表时按根种子递增"""
        assert SuiteConfig(repetitions=3).resolved_seeds(10) == [10, 11, 12]
        assert SuiteConfig(seeds=[4, 2]).resolved_seeds(10) == [4, 2]

    def test_resolved_algorithms(self):
        """测试显式算法在前，扫描在后；都为空时用默认算法"""
        suite = SuiteConfig(
            algorithms=[AlgorithmConfig(name="random")],
            sweeps=[SweepConfig(algorithm=AlgorithmConfig(name="ucb"), values=[1.0])],
        )
        default = AlgorithmConfig(name="thompson")

        assert [a.display_name for a in suite.resolved_algorithms(default)] == ["random", "ucb[beta=1]"]
        assert SuiteConfig().resolved_algorithms(default) == [default]


class TestRuntimeSettings:
    """运行配置测试类"""

    def test_environment_variables(self, monkeypatch):
        """测试从COXSENSE_*环境变量读取"""
        monkeypatch.setenv("COXSENSE_JOBS", "4")
        monkeypatch.setenv("COXSENSE_LOG_LEVEL", "DEBUG")

        settings = RuntimeSettings()
        assert settings.jobs == 4
        assert settings.log_level == "DEBUG"

    def test_global_instance(self, monkeypatch):
        """测试全局实例缓存与重置"""
        monkeypatch.setenv("COXSENSE_JOBS", "3")
        set_config(None)
        try:
            assert get_config().jobs == 3
            assert get_config() is get_config()
            set_config(RuntimeSettings(jobs=2))
            assert get_config().jobs == 2
        finally:
            set_config(None)


class TestPackagedConfigs:
    """随包发布的示例配置测试类"""

    def test_configs_present(self):
        """测试示例配置存在"""
        assert len(PACKAGED_CONFIGS) >= 5

    @pytest.mark.parametrize("path", PACKAGED_CONFIGS, ids=lambda p: p.stem)
    def test_config_validates(self, path):
        """测试每个示例配置都能通过校验"""
        config = ExperimentConfig.from_yaml(path)

        assert config.config_hash()
