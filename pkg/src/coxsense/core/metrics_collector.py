"""
运行指标收集器

记录一次实验运行中各阶段（MAP、采样、采集、模拟、指标）的耗时、
逐轮指标的滚动汇总以及进程内存占用。
"""

import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Optional

import psutil
from loguru import logger


@dataclass
class MetricStats:
    """逐轮指标的滚动汇总，只保留常数大小的状态"""
    count: int = 0
    last: float = float("nan")
    last_round: int = 0
    max: float = float("-inf")
    min: float = float("inf")

    def update(self, value: float, round_index: int):
        self.count += 1
        self.last = value
        self.last_round = round_index
        self.max = max(self.max, value)
        self.min = min(self.min, value)

    def to_dict(self) -> Dict[str, Any]:
        return {"count": self.count, "last": self.last, "last_round": self.last_round, "max": self.max,
                "min": self.min}


@dataclass
class PhaseStats:
    """阶段耗时统计"""
    count: int = 0
    total: float = 0.0
    max: float = 0.0
    min: float = float("inf")

    def update(self, elapsed: float):
        self.count += 1
        self.total += elapsed
        self.max = max(self.max, elapsed)
        self.min = min(self.min, elapsed)

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "count": self.count,
            "total": self.total,
            "mean": self.mean,
            "max": self.max,
            "min": self.min if self.count else 0.0,
        }


class MetricsCollector:
    """单次运行的指标收集器（线程安全）"""

    def __init__(self, run_name: str = ""):
        self.run_name = run_name
        self.metrics: Dict[str, MetricStats] = defaultdict(MetricStats)
        self.phases: Dict[str, PhaseStats] = defaultdict(PhaseStats)
        self.counters: Dict[str, int] = defaultdict(int)
        self.round_timings: Dict[int, Dict[str, float]] = defaultdict(dict)
        self.lock = threading.RLock()
        self._process = psutil.Process()
        self.peak_rss = 0
        self.started = time.perf_counter()
        self._sample_memory()

    def _sample_memory(self) -> int:
        rss = int(self._process.memory_info().rss)
        self.peak_rss = max(self.peak_rss, rss)
        return rss

    @contextmanager
    def phase(self, name: str, round_index: Optional[int] = None):
        """计时上下文：同一轮内同名阶段的耗时累加"""
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            with self.lock:
                self.phases[name].update(elapsed)
                if round_index is not None:
                    timings = self.round_timings[round_index]
                    timings[name] = timings.get(name, 0.0) + elapsed

    def record(self, name: str, value: float, round_index: int):
        with self.lock:
            self.metrics[name].update(float(value), round_index)

    def end_round(self, round_index: int):
        with self.lock:
            self._sample_memory()
            self.counters["rounds"] += 1
        logger.trace(f"[{self.run_name}] 第{round_index}轮耗时: {self.round_timings.get(round_index, {})}")

    def get_summary(self) -> Dict[str, Any]:
        with self.lock:
            self._sample_memory()
            return {
                "wall_time": time.perf_counter() - self.started,
                "phases": {name: stats.to_dict() for name, stats in sorted(self.phases.items())},
                "counters": dict(self.counters),
                "metrics": {name: stats.to_dict() for name, stats in sorted(self.metrics.items())},
                "peak_rss_mb": self.peak_rss / (1024 * 1024),
            }
