"""
实验编排

- 拟合-测试：把全部历史事件当作整个定义域的一次感知来拟合真值
- 指标：计数遗憾、推断遗憾、水平集F1
- 套件：多算法 × 多种子并行运行，按轮聚合25/50/75%分位数（线性插值）
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from ..config import AlgorithmConfig, ExperimentConfig
from ..errors import ErrorHandler, ParameterError
from .action_set import Region
from .basis import BasisModel
from .grid import EvaluationGrid
from .posterior import PosteriorModel
from .protocol import ProtocolState, RoundRecord, run_protocol
from .samplers import PointProcessDraw
from .truth import GroundTruth, bind_truth

QUANTILES = (0.25, 0.5, 0.75)
AGGREGATE_COLUMNS = ["algorithm", "round", "cum_cost", "metric", "q25", "q50", "q75"]


@dataclass
class MetricSeries:
    """逐轮计数遗憾序列"""
    instantaneous: np.ndarray
    cumulative: np.ndarray
    costs: np.ndarray
    realized: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# 指标
# ---------------------------------------------------------------------------

def best_ratio(truth: GroundTruth, costs: np.ndarray) -> Tuple[int, float]:
    """A* = argmax μ_A/w(A)"""
    ratios = truth.mu / np.asarray(costs, dtype=float)
    index = int(np.argmax(ratios))
    return index, float(ratios[index])


def instantaneous_regret(truth: GroundTruth, costs: np.ndarray, region_id: int) -> float:
    """r_t = w(A_t)·μ_{A*}/w(A*) − μ_{A_t}"""
    _, ratio = best_ratio(truth, costs)
    index = truth.region_ids.index(region_id)
    return float(costs[index] * ratio - truth.mu[index])


def count_regret(truth: GroundTruth, costs: np.ndarray, trace: Sequence[RoundRecord]) -> MetricSeries:
    """期望形式的计数遗憾；实际计数形式作为诊断列"""
    _, ratio = best_ratio(truth, costs)
    index = {rid: i for i, rid in enumerate(truth.region_ids)}
    spent = np.array([costs[index[r.region_id]] for r in trace], dtype=float)
    mu = np.array([truth.mu[index[r.region_id]] for r in trace], dtype=float)
    counts = np.array([r.n_events for r in trace], dtype=float)
    inst = spent * ratio - mu
    return MetricSeries(inst, np.cumsum(inst), spent, spent * ratio - counts)


def inference_regret(truth: GroundTruth, posterior: PosteriorModel,
                     grid_features: Optional[np.ndarray] = None) -> float:
    """λ*_max − λ*(x̂*)，x̂* 为MAP强度的网格最大点"""
    if grid_features is None:
        grid_features = posterior.basis.features(truth.grid.points)
    guess = int(np.argmax(grid_features @ posterior.map_estimate()))
    return max(0.0, truth.lam_max - float(truth.values[guess]))


def f1_score(predicted: np.ndarray, actual: np.ndarray) -> float:
    """(+)类的F1；预测与真值都为空时返回1"""
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    tp = int(np.sum(predicted & actual))
    n_pred, n_true = int(predicted.sum()), int(actual.sum())
    if n_pred == 0 and n_true == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision, recall = tp / n_pred, tp / n_true
    return 2.0 * precision * recall / (precision + recall)


def level_set_f1(truth: GroundTruth, posterior: PosteriorModel, threshold: float,
                 grid_features: Optional[np.ndarray] = None) -> float:
    if grid_features is None:
        grid_features = posterior.basis.features(truth.grid.points)
    predicted = grid_features @ posterior.map_estimate() >= threshold
    return f1_score(predicted, truth.values >= threshold)


def round_metrics(state: ProtocolState, region: Region, draw: PointProcessDraw) -> Dict[str, float]:
    """协议每轮调用的默认指标"""
    exp = state.experiment
    truth = exp.truth
    regret = instantaneous_regret(truth, exp.costs, region.id)
    state.cum_regret += regret
    _, ratio = best_ratio(truth, exp.costs)
    metrics = {
        "count_regret": regret,
        "cum_count_regret": state.cum_regret,
        "realized_regret": float(exp.cost_model(region) * ratio - draw.count),
        "inference_regret": inference_regret(truth, state.posterior, exp.grid_features),
    }
    if state.threshold is not None:
        metrics["f1"] = level_set_f1(truth, state.posterior, state.threshold, exp.grid_features)
    return metrics


# ---------------------------------------------------------------------------
# 拟合-测试
# ---------------------------------------------------------------------------

def event_duration(times: Optional[np.ndarray], explicit: Optional[float] = None) -> float:
    """显式时长优先，否则取首末事件的时间跨度，无时间列时为1"""
    if explicit is not None:
        duration = float(explicit)
    elif times is not None and len(times) > 1:
        duration = float(np.max(times) - np.min(times))
    else:
        duration = 1.0
    if duration <= 0:
        raise ParameterError(f"数据时长必须为正，收到 {duration}")
    return duration


def fit_ground_truth(events: np.ndarray, basis: BasisModel, duration: float, grid: EvaluationGrid,
                     action_set, sensing_duration: float = 1.0, threshold: Optional[float] = None,
                     name: str = "fitted") -> GroundTruth:
    """把全部事件当作整个定义域、时长为 duration 的一次观测求MAP，作为真值

    返回的真值按感知时长 sensing_duration 计算 μ_A。
    """
    events = np.asarray(events, dtype=float)
    if events.size == 0:
        raise ParameterError("事件集为空，无法拟合真值")
    if duration <= 0:
        raise ParameterError(f"数据时长必须为正，收到 {duration}")
    domain = basis.domain
    events = domain.check(events)
    posterior = PosteriorModel(basis)
    whole = Region(-1, domain.lower.copy(), domain.upper.copy(), 0, None)
    posterior.observe(whole, duration, events)
    theta = posterior.map_estimate()
    logger.info(f"拟合真值完成: 事件数={len(events)}, 时长={duration}, KKT残差={posterior.kkt():.2e}")
    return bind_truth(name, lambda pts: basis.intensity(theta, pts), grid, action_set,
                      duration=sensing_duration, threshold=threshold, theta=theta)


# ---------------------------------------------------------------------------
# 套件
# ---------------------------------------------------------------------------

@dataclass
class SuiteResult:
    traces: pd.DataFrame
    aggregate: pd.DataFrame
    summary: Dict[str, Any]
    episodes: List[Dict[str, Any]] = field(default_factory=list)


def _run_cell(payload: Dict[str, Any]) -> Dict[str, Any]:
    """单元格在独立进程中运行：输入输出都是可pickle的普通数据"""
    config = ExperimentConfig.model_validate(payload["config"])
    label = config.algorithm.display_name
    try:
        episode = run_protocol(config)
    except Exception as e:  # 任何单元格失败都不应中断套件
        ErrorHandler.log_error(e, f"{label} seed={config.seed}")
        return {
            "algorithm": label,
            "seed": config.seed,
            "records": [],
            "metadata": {},
            "error": ErrorHandler.format_error_response(e, f"{label} seed={config.seed}", include_timestamp=False),
        }
    frame = episode.to_frame()
    frame.insert(1, "seed", config.seed)
    return {
        "algorithm": label,
        "seed": config.seed,
        "records": frame.to_dict(orient="list"),
        "metadata": episode.metadata(),
        "error": episode.error,
    }


def suite_cells(config: ExperimentConfig) -> List[ExperimentConfig]:
    suite = config.suite
    algorithms: List[AlgorithmConfig] = suite.resolved_algorithms(config.algorithm) if suite else [config.algorithm]
    seeds = suite.resolved_seeds(config.seed) if suite else [config.seed]
    base = config
    if config.basis.seed is None:
        # 同一套件内所有单元格共享同一个NMF基
        base = config.model_copy(update={"basis": config.basis.model_copy(update={"seed": config.seed})})
    return [base.with_algorithm(algorithm, seed) for algorithm in algorithms for seed in seeds]


def aggregate_quantiles(traces: pd.DataFrame) -> pd.DataFrame:
    """按 (算法, 轮, 指标) 聚合跨重复的25/50/75%分位数"""
    if traces.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)
    order = list(dict.fromkeys(traces["algorithm"]))
    grouped = traces.groupby(["algorithm", "round", "metric_name"], sort=False)
    quantiles = grouped["metric_value"].quantile(list(QUANTILES), interpolation="linear").unstack()
    quantiles.columns = ["q25", "q50", "q75"]
    cost = grouped["cum_cost"].median().rename("cum_cost")
    frame = pd.concat([cost, quantiles], axis=1).reset_index().rename(columns={"metric_name": "metric"})
    frame["algorithm"] = pd.Categorical(frame["algorithm"], categories=order, ordered=True)
    frame = frame.sort_values(["algorithm", "round", "metric"], kind="mergesort").reset_index(drop=True)
    frame["algorithm"] = frame["algorithm"].astype(str)
    return frame[AGGREGATE_COLUMNS]


def suite_summary(aggregate: pd.DataFrame, cells: List[Dict[str, Any]]) -> Dict[str, Any]:
    """末轮中位数 + 失败单元格"""
    medians: Dict[str, Dict[str, float]] = {}
    for algorithm, group in aggregate.groupby("algorithm", sort=False):
        last = group[group["round"] == group["round"].max()]
        medians[str(algorithm)] = {row.metric: float(row.q50) for row in last.itertuples()}
    failures = [
        {"algorithm": c["algorithm"], "seed": c["seed"], "error": c["error"]}
        for c in cells if c["error"] is not None
    ]
    return {
        "cells": len(cells),
        "failed_cells": len(failures),
        "failures": failures,
        "final_round_medians": medians,
    }


def run_suite(config: ExperimentConfig, jobs: int = 1) -> SuiteResult:
    """运行全部 (算法, 种子) 单元格并聚合"""
    cells = suite_cells(config)
    payloads = [{"config": c.model_dump(mode="json")} for c in cells]
    logger.info(f"套件开始: {len(cells)} 个单元格, jobs={jobs}")
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]

    frames = [pd.DataFrame(r["records"]) for r in results if r["records"]]
    traces = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    aggregate = aggregate_quantiles(traces)
    summary = suite_summary(aggregate, results)
    summary["config_hash"] = config.config_hash()
    if summary["failed_cells"]:
        logger.warning(f"套件完成，{summary['failed_cells']} 个单元格失败")
    else:
        logger.info("套件完成，全部单元格成功")
    return SuiteResult(traces, aggregate, summary, [r["metadata"] for r in results])
