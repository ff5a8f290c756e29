"""
coxsense 命令行入口

子命令：
- basis   构造基并导出基函数与协方差匹配残差
- fit     由事件CSV拟合地面真值
- run     单次感知协议运行
- suite   多算法 × 多种子套件与分位数聚合
- sample  导出后验链与网格强度样本
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from . import __version__
from .config import ExperimentConfig, get_config
from .core.action_set import build_action_set
from .core.basis import (
    TabulatedBasis,
    covariance_residual,
    export_basis,
    regular_grid,
    sample_truncated_gp,
    save_nmf_basis,
)
from .core.grid import evaluation_grid
from .core.harness import event_duration, fit_ground_truth, run_suite
from .core.plotting import plot_quantile_bands
from .core.posterior import ObservationLog, PosteriorModel
from .core.protocol import build_basis, run_protocol
from .core.samplers import build_sampler, write_chain_trace
from .core.streams import RandomStreams
from .core.truth import save_truth_table
from .errors import CoxSenseError, ErrorHandler, ParameterError
from .io import AXIS_NAMES, dumps_json, ensure_dir, output_header, read_events, write_frame, write_json, write_meta

LOG_FORMAT = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | {message}"
# 每条链写进网格强度表的样本数
INTENSITY_SAMPLES = 20
PRIOR_GRID = {1: 128, 2: 24}


def setup_logging(level: str = "INFO"):
    """设置日志配置"""
    logger.remove()  # 移除默认handler
    logger.add(sys.stdout, level=level, format=LOG_FORMAT, colorize=True)


def _attach_log_file(out: Path):
    logger.add(
        out / "coxsense.log",
        rotation="1 day",
        retention="7 days",
        level="DEBUG",
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        encoding="utf-8",
    )


def load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    """加载配置并应用命令行覆盖；任何校验失败都发生在计算之前"""
    config = ExperimentConfig.from_yaml(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if overrides:
        config = ExperimentConfig.from_dict({**config.model_dump(mode="json"), **overrides})
    return config


def _prepare_output(config: ExperimentConfig) -> Path:
    out = ensure_dir(config.output_dir)
    _attach_log_file(out)
    config.save_yaml(out / "config.yaml")
    return out


def _header(config: ExperimentConfig) -> str:
    return output_header(config.config_hash(), config.seed)


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_basis(config: ExperimentConfig, args: argparse.Namespace) -> int:
    basis = build_basis(config)
    d = basis.domain.dimension
    grid = regular_grid(basis.domain, 256 if d == 1 else 64)
    functions = export_basis(basis.raw, grid)
    residual = covariance_residual(basis)
    logger.info(f"基 {basis.raw.kind}: m={basis.m}, 协方差匹配残差={residual:.3e}")

    out = _prepare_output(config)
    header = _header(config)
    write_frame(functions, out / "basis_functions.csv", header)
    nodes = pd.DataFrame(basis.nodes, columns=list(AXIS_NAMES[:d]))
    nodes.insert(0, "node_index", np.arange(basis.m))
    write_frame(nodes, out / "basis_nodes.csv", header)
    if isinstance(basis.raw, TabulatedBasis) and not config.basis.path:
        save_nmf_basis(basis.raw, out / "nmf_basis.csv", header)
    write_json(out / "basis.json", {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "kind": basis.raw.kind,
        "m": basis.m,
        "covariance_residual": residual,
        "kernel": basis.kernel.describe(),
    })
    write_meta(out / "basis.meta.json", {"command": "basis", "config_hash": config.config_hash()})
    return 0


def cmd_fit(config: ExperimentConfig, args: argparse.Namespace) -> int:
    path = args.events or config.events
    if not path:
        raise ParameterError("fit 需要事件CSV：命令行参数或配置中的 events")
    points, times = read_events(path, config.dimension)
    duration = event_duration(times, config.data_duration)

    basis = build_basis(config)
    domain = basis.domain
    grid = evaluation_grid(domain, config.eval_grid)
    action_set = build_action_set(domain, config.actions.max_depth, config.actions.include_ancestors)
    truth = fit_ground_truth(points, basis, duration, grid, action_set,
                             sensing_duration=config.duration, threshold=config.threshold)

    out = _prepare_output(config)
    header = _header(config)
    save_truth_table(truth, out / "truth.csv", header)
    coefficients = pd.DataFrame({
        "index": np.arange(basis.m),
        "theta": truth.theta,
        "coefficient": basis.coefficients(truth.theta),
    })
    write_frame(coefficients, out / "theta.csv", header)
    write_meta(out / "fit.meta.json", {
        "command": "fit",
        "config_hash": config.config_hash(),
        "events": str(path),
        "n_events": int(len(points)),
        "data_duration": duration,
        "lam_max": truth.lam_max,
        "argmax": truth.argmax_point.tolist(),
    })
    logger.info(f"拟合真值已写入 {out / 'truth.csv'}")
    return 0


def cmd_run(config: ExperimentConfig, args: argparse.Namespace) -> int:
    episode = run_protocol(config)
    out = _prepare_output(config)
    episode.to_csv(out / "trace.csv", _header(config))
    write_meta(out / "run.meta.json", {"command": "run", **episode.metadata()})
    if episode.failed:
        logger.error(f"运行失败: {episode.error.get('message')}")
        return 1
    return 0


def cmd_suite(config: ExperimentConfig, args: argparse.Namespace) -> int:
    jobs = args.jobs or get_config().jobs
    result = run_suite(config, jobs=jobs)
    out = _prepare_output(config)
    header = _header(config)
    write_frame(result.traces, out / "traces.csv", header)
    write_frame(result.aggregate, out / "aggregate.csv", header)
    write_json(out / "summary.json", result.summary)
    write_meta(out / "suite.meta.json", {"command": "suite", "jobs": jobs, "cells": result.episodes})
    if args.plot and not result.aggregate.empty:
        for metric in result.aggregate["metric"].unique():
            plot_quantile_bands(result.aggregate, metric, out / f"{metric}.svg")
    if result.summary["failed_cells"]:
        logger.error(f"{result.summary['failed_cells']}/{result.summary['cells']} 个单元格失败，详见 summary.json")
        return 1
    return 0


def cmd_sample(config: ExperimentConfig, args: argparse.Namespace) -> int:
    if args.log and not Path(args.log).exists():
        raise ParameterError(f"观测日志不存在: {args.log}")
    if args.chains < 1:
        raise ParameterError(f"--chains 必须为正，收到 {args.chains}")
    log = ObservationLog.from_csv(args.log, config.dimension) if args.log else ObservationLog(config.dimension)

    basis = build_basis(config)
    d = basis.domain.dimension
    grid = evaluation_grid(basis.domain, config.eval_grid)
    posterior = PosteriorModel(basis, lower_bound=config.lower_bound)
    for entry in log.entries:
        posterior.observe(entry.region, entry.duration, entry.events)
    logger.info(f"后验: {len(log)} 次观测, {log.total_events} 个事件")

    sampler = build_sampler(config.sampler, config.lower_bound)
    streams = RandomStreams(config.seed)
    features = basis.features(grid.points)
    intensity = pd.DataFrame(grid.points, columns=list(AXIS_NAMES[:d]))
    intensity["map"] = features @ posterior.map_estimate()
    chains: List[np.ndarray] = []
    for c in range(args.chains):
        samples = sampler.sample(posterior, streams.get("sampler"), chain=c)
        chains.append(samples)
        stride = max(1, len(samples) // INTENSITY_SAMPLES)
        picked = samples[::stride][:INTENSITY_SAMPLES]
        values = features @ picked.T
        for k in range(values.shape[1]):
            intensity[f"chain{c}_s{k}"] = values[:, k]

    prior_paths: Optional[np.ndarray] = None
    prior_grid: Optional[np.ndarray] = None
    if args.prior:
        prior_grid = regular_grid(basis.domain, PRIOR_GRID.get(d, 16))
        prior_paths = sample_truncated_gp(basis.kernel, prior_grid, args.prior_paths, streams.fresh("prior"),
                                          lower=config.lower_bound, budget=config.basis.rejection_budget)

    out = _prepare_output(config)
    header = _header(config)
    for c, samples in enumerate(chains):
        write_chain_trace(samples, out / f"chain_{c}.csv", header)
    write_frame(intensity, out / "intensity_samples.csv", header)
    if prior_paths is not None:
        frame = pd.DataFrame(prior_grid, columns=list(AXIS_NAMES[:d]))
        for k in range(prior_paths.shape[1]):
            frame[f"path_{k}"] = prior_paths[:, k]
        write_frame(frame, out / "prior_paths.csv", header)
    write_meta(out / "sample.meta.json", {
        "command": "sample",
        "config_hash": config.config_hash(),
        "chains": args.chains,
        "observations": len(log),
        "events": log.total_events,
        "sampler": sampler.get_stats(),
        "kkt_residual": posterior.kkt(),
    })
    return 0


COMMANDS: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], int]] = {
    "basis": cmd_basis,
    "fit": cmd_fit,
    "run": cmd_run,
    "suite": cmd_suite,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="实验配置YAML路径")
    common.add_argument("--seed", type=int, help="覆盖根随机种子")
    common.add_argument("--out", help="输出目录")
    common.add_argument("--jobs", type=int, help="并行worker数量（默认 COXSENSE_JOBS）")
    common.add_argument("--debug", action="store_true", help="输出DEBUG日志")

    parser = argparse.ArgumentParser(prog="coxsense", description="Cox过程自适应感知实验工具")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", help="可用命令")

    subparsers.add_parser("basis", parents=[common], help="构造基并导出基函数")

    fit_parser = subparsers.add_parser("fit", parents=[common], help="由事件数据拟合地面真值")
    fit_parser.add_argument("events", nargs="?", help="事件CSV（表头 x[,y][,t]）")

    subparsers.add_parser("run", parents=[common], help="运行单次感知协议")

    suite_parser = subparsers.add_parser("suite", parents=[common], help="运行多种子实验套件")
    suite_parser.add_argument("--plot", action="store_true", help="为每个指标输出SVG分位数带图")

    sample_parser = subparsers.add_parser("sample", parents=[common], help="导出后验样本")
    source = sample_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--log", help="观测日志CSV（附带 .regions.json）")
    source.add_argument("--prior", action="store_true", help="空观测先验，并额外导出截断GP先验路径")
    sample_parser.add_argument("--chains", type=int, default=1, help="链数")
    sample_parser.add_argument("--prior-paths", type=int, default=20, help="截断GP先验路径条数")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2

    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs 必须为正")
    setup_logging("DEBUG" if args.debug else get_config().log_level)
    try:
        config = load_experiment(args)
        return COMMANDS[args.command](config, args)
    except Exception as e:
        ErrorHandler.log_error(e, f"coxsense {args.command}")
        response = ErrorHandler.format_error_response(
            e, args.command, include_traceback=not isinstance(e, CoxSenseError), include_timestamp=False
        )
        sys.stderr.write(dumps_json(response).decode("utf-8") + "\n")
        return 1 if isinstance(e, CoxSenseError) else 3


if __name__ == "__main__":
    sys.exit(main())
