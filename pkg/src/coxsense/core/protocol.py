"""
感知协议

循环：刷新后验 → 采集策略选区域 → 从真值模拟感知 → 追加观测 → 记录指标，
直到预算耗尽或达到轮数上限。整条轨迹是 (配置, 种子) 的纯函数。
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger

from ..config import ExperimentConfig
from ..errors import ErrorHandler, InvariantViolation, TaskComplete
from .acquisition_registry import AcquisitionBase, acquisition_registry
from .action_set import ActionSet, CostModel, Region, build_action_set
from .basis import BasisModel, RegionIntegrals, build_raw_basis, gamma_transform, region_integrals
from .grid import EvaluationGrid, evaluation_grid
from .kernels import Domain, build_kernel
from .metrics_collector import MetricsCollector
from .posterior import PosteriorModel
from .samplers import PointProcessDraw, SamplerBase, build_sampler, simulate_point_process
from .streams import RandomStreams
from .truth import GroundTruth, IntensityFn, bind_truth, resolve_intensity

TRACE_COLUMNS = ["round", "algorithm", "region_id", "cost", "cum_cost", "n_events", "metric_name", "metric_value"]


def build_basis(config: ExperimentConfig) -> BasisModel:
    """按配置构造Γ变换后的基；NMF基使用独立的 nmf 随机流"""
    domain = Domain.from_config(config.domain)
    kernel = build_kernel(config.kernel, domain)
    nmf_seed = config.seed if config.basis.seed is None else config.basis.seed
    raw = build_raw_basis(config.basis, kernel, domain, rng=RandomStreams(nmf_seed).fresh("nmf"), seed=nmf_seed)
    return gamma_transform(raw, kernel, config.lower_bound, quadrature_order=config.basis.quadrature_order)


@dataclass(eq=False)
class Experiment:
    """一次实验用到的全部静态组件"""
    config: ExperimentConfig
    domain: Domain
    basis: BasisModel
    action_set: ActionSet
    integrals: RegionIntegrals
    cost_model: CostModel
    costs: np.ndarray
    grid: EvaluationGrid
    grid_features: np.ndarray
    membership: np.ndarray
    leaf_of_grid: np.ndarray
    truth: GroundTruth

    @property
    def psi(self) -> np.ndarray:
        return self.integrals.psi

    @classmethod
    def from_config(cls, config: ExperimentConfig, intensity: Optional[IntensityFn] = None,
                    basis: Optional[BasisModel] = None) -> "Experiment":
        """由配置构造；intensity/basis 可由调用方直接给出"""
        domain = Domain.from_config(config.domain)
        basis = basis or build_basis(config)
        action_set = build_action_set(domain, config.actions.max_depth, config.actions.include_ancestors)
        integrals = region_integrals(basis, action_set.regions)
        cost_model = CostModel.from_config(config.cost)
        grid = evaluation_grid(domain, config.eval_grid)
        membership = action_set.membership(grid.points)
        truth = bind_truth(
            config.truth,
            intensity or resolve_intensity(config.truth, domain.dimension),
            grid,
            action_set,
            config.duration,
            config.threshold,
            membership=membership,
        )
        return cls(
            config=config,
            domain=domain,
            basis=basis,
            action_set=action_set,
            integrals=integrals,
            cost_model=cost_model,
            costs=action_set.costs(cost_model),
            grid=grid,
            grid_features=basis.features(grid.points),
            membership=membership,
            leaf_of_grid=_leaf_index(action_set, grid),
            truth=truth,
        )


def _leaf_index(action_set: ActionSet, grid: EvaluationGrid) -> np.ndarray:
    """每个网格点所在最深层区域的id"""
    leaves = sorted(action_set.level(action_set.max_depth), key=lambda r: r.id)
    owner = np.full(grid.size, -1, dtype=int)
    for leaf in leaves:
        inside = leaf.contains(grid.points, tol=0.0) & (owner < 0)
        owner[inside] = leaf.id
    return owner


@dataclass
class RoundRecord:
    round: int
    region_id: int
    cost: float
    cum_cost: float
    n_events: int
    metrics: Dict[str, float] = field(default_factory=dict)
    flags: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)


@dataclass
class EpisodeRecord:
    """一次协议运行的轨迹"""
    algorithm: str
    seed: int
    config_hash: str
    rounds: List[RoundRecord] = field(default_factory=list)
    stopped_reason: str = ""
    error: Optional[Dict[str, Any]] = None
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def total_cost(self) -> float:
        return self.rounds[-1].cum_cost if self.rounds else 0.0

    def __len__(self) -> int:
        return len(self.rounds)

    def metric(self, name: str) -> np.ndarray:
        return np.array([r.metrics.get(name, np.nan) for r in self.rounds])

    def to_frame(self) -> pd.DataFrame:
        """长表，每轮每个指标一行"""
        rows = []
        for r in self.rounds:
            base = [r.round, self.algorithm, r.region_id, r.cost, r.cum_cost, r.n_events]
            for name in sorted(r.metrics):
                rows.append(base + [name, r.metrics[name]])
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)

    def to_csv(self, path: Union[str, Path], header: str = "") -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as f:
            if header:
                f.write(header.rstrip("\n") + "\n")
            self.to_frame().to_csv(f, index=False, float_format="%.17g")
        return path

    def metadata(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "rounds": len(self.rounds),
            "total_cost": self.total_cost,
            "stopped_reason": self.stopped_reason,
            "error": self.error,
            "flags": [{"round": r.round, **r.flags} for r in self.rounds if r.flags],
            "round_timings": [{"round": r.round, **r.timings} for r in self.rounds],
            **self.summary,
        }


@dataclass(eq=False)
class ProtocolState:
    """协议运行时状态，供采集策略读取"""
    experiment: Experiment
    posterior: PosteriorModel
    streams: RandomStreams
    sampler: SamplerBase
    collector: MetricsCollector
    round: int = 0
    spent: float = 0.0
    cum_regret: float = 0.0
    sense_counts: np.ndarray = None
    trace: List[RoundRecord] = field(default_factory=list)
    _pool: Optional[np.ndarray] = None
    _pool_version: int = -1

    def __post_init__(self):
        if self.sense_counts is None:
            self.sense_counts = np.zeros(len(self.experiment.action_set), dtype=int)

    @property
    def config(self) -> ExperimentConfig:
        return self.experiment.config

    @property
    def action_set(self) -> ActionSet:
        return self.experiment.action_set

    @property
    def costs(self) -> np.ndarray:
        return self.experiment.costs

    @property
    def psi(self) -> np.ndarray:
        return self.experiment.psi

    @property
    def duration(self) -> float:
        return self.config.duration

    @property
    def threshold(self) -> Optional[float]:
        return self.config.threshold

    def rng(self, name: str) -> np.random.Generator:
        return self.streams.get(name)

    def posterior_pool(self) -> np.ndarray:
        """本轮的burn-in后样本池（每轮最多采样一次）"""
        if self._pool is None or self._pool_version != self.round:
            with self.collector.phase("sampling", self.round):
                self._pool = self.sampler.sample(self.posterior, self.rng("sampler"), chain=self.round)
            self._pool_version = self.round
        return self._pool

    def draw(self, k: int) -> np.ndarray:
        """第k次重采样：k=0取链的最终迭代，之后从池中用sampler流随机抽取"""
        pool = self.posterior_pool()
        if k == 0:
            return pool[-1]
        return pool[int(self.rng("sampler").integers(len(pool)))]

    def unexplored_region(self) -> Region:
        """最低代价的未感知区域；全部感知过时取感知次数最少者"""
        least = self.sense_counts.min()
        candidates = np.flatnonzero(self.sense_counts == least)
        best = candidates[np.argmin(self.costs[candidates])]
        return self.action_set[int(best)]


MetricsHook = Callable[[ProtocolState, Region, PointProcessDraw], Dict[str, float]]


def run_protocol(config: ExperimentConfig, experiment: Optional[Experiment] = None,
                 metrics_hook: Optional[MetricsHook] = None,
                 acquisition: Optional[AcquisitionBase] = None) -> EpisodeRecord:
    """执行感知循环，返回轨迹"""
    if metrics_hook is None:
        from .harness import round_metrics as metrics_hook

    # 注册全部采集策略
    from .. import acquisitions  # noqa: F401

    streams = RandomStreams(config.seed)
    collector = MetricsCollector(config.algorithm.display_name)
    with collector.phase("setup"):
        experiment = experiment or Experiment.from_config(config)
    posterior = PosteriorModel(experiment.basis, experiment.integrals, config.lower_bound)
    acquisition = acquisition or acquisition_registry.create(config.algorithm)
    state = ProtocolState(
        experiment=experiment,
        posterior=posterior,
        streams=streams,
        sampler=build_sampler(config.sampler, config.lower_bound),
        collector=collector,
    )
    episode = EpisodeRecord(acquisition.label, config.seed, config.config_hash())
    budget = math.inf if config.budget is None else config.budget
    logger.info(f"开始运行 {acquisition.label} (seed={config.seed}, T={config.rounds}, C={budget})")

    while state.round < config.rounds and state.spent < budget:
        t = state.round + 1
        state.round = t
        try:
            with collector.phase("map", t):
                posterior.map_estimate()
            with collector.phase("acquisition", t):
                selection = acquisition.select(state)
            region = selection.region
            if region not in experiment.action_set:
                raise InvariantViolation(f"采集策略返回了动作集之外的区域 {region.id}")
            with collector.phase("simulation", t):
                draw = simulate_point_process(
                    experiment.truth.intensity, region, config.duration, state.rng("simulator")
                )
            posterior.observe(region, config.duration, draw.locations)
            w = float(experiment.cost_model(region))
            state.spent += w
            state.sense_counts[experiment.action_set.index_of(region.id)] += 1
            with collector.phase("metrics", t):
                metrics = metrics_hook(state, region, draw)
            collector.end_round(t)
            for name, value in metrics.items():
                collector.record(name, value, t)
            record = RoundRecord(t, region.id, w, state.spent, draw.count, metrics, selection.flags,
                                 dict(collector.round_timings.get(t, {})))
            state.trace.append(record)
            episode.rounds.append(record)
        except TaskComplete as e:
            ErrorHandler.log_error(e, f"第{t}轮")
            episode.stopped_reason = "task_complete"
            break
        except Exception as e:
            ErrorHandler.log_error(e, f"第{t}轮")
            episode.error = ErrorHandler.format_error_response(e, f"round {t}", include_timestamp=False)
            episode.error["round"] = t
            episode.stopped_reason = "failed"
            break
    else:
        episode.stopped_reason = "round_cap" if state.round >= config.rounds else "budget"

    episode.summary = {
        "timings": collector.get_summary(),
        "acquisition": acquisition.get_stats(),
        "sampler": state.sampler.get_stats(),
        "posterior": dict(posterior.stats),
        "projector": dict(posterior.projector.stats),
    }
    logger.info(
        f"运行结束 {acquisition.label}: 轮数={len(episode)}, 花费={episode.total_cost:.4f}, "
        f"原因={episode.stopped_reason}"
    )
    return episode
