"""分位数带SVG图（非交互）"""

from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
from loguru import logger  # noqa: E402

from ..errors import ParameterError  # noqa: E402


def plot_quantile_bands(aggregate: pd.DataFrame, metric: str, path: Union[str, Path],
                        x_axis: str = "round") -> Path:
    """每个算法画中位数线与25–75%带"""
    if x_axis not in ("round", "cum_cost"):
        raise ParameterError(f"x_axis 只能是 round 或 cum_cost，收到 {x_axis}")
    subset = aggregate[aggregate["metric"] == metric]
    if subset.empty:
        raise ParameterError(f"聚合结果中没有指标 '{metric}'")
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    for algorithm, group in subset.groupby("algorithm", sort=False):
        group = group.sort_values("round")
        line, = ax.plot(group[x_axis], group["q50"], label=str(algorithm))
        ax.fill_between(group[x_axis], group["q25"], group["q75"], color=line.get_color(), alpha=0.2)
    ax.set_xlabel("rounds" if x_axis == "round" else "cumulative cost")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    # 固定元数据，保证重复输出一致
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"分位数图已写入 {path}")
    return path
