"""
持久化工具

所有CSV首行是 `# coxsense config_hash=<hash> seed=<seed>`；时间戳只写进 *.meta.json，
相同输入的重复运行除元数据外逐字节一致。
"""

import time
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import orjson
import pandas as pd
from loguru import logger

from .errors import ParameterError, ParseError

AXIS_NAMES = ("x", "y")


def output_header(config_hash: str, seed: Optional[int] = None) -> str:
    header = f"# coxsense config_hash={config_hash}"
    if seed is not None:
        header += f" seed={seed}"
    return header


def ensure_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"无法序列化类型 {type(obj).__name__}")


def dumps_json(data: Any) -> bytes:
    return orjson.dumps(
        data,
        default=_default,
        option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS,
    )


def write_json(path: Union[str, Path], data: Any) -> Path:
    path = Path(path)
    path.write_bytes(dumps_json(data))
    return path


def read_json(path: Union[str, Path]) -> Any:
    return orjson.loads(Path(path).read_bytes())


def write_meta(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    """元数据JSON，附带写出时间"""
    return write_json(path, {**data, "written_at": time.time()})


def write_frame(frame: pd.DataFrame, path: Union[str, Path], header: str = "") -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if header:
            f.write(header.rstrip("\n") + "\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def read_events(path: Union[str, Path], dimension: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """读取事件CSV（表头 `x[,y][,t]`），返回 (位置, 时间或None)

    格式错误抛出带行号的ParseError；没有任何事件抛出ParameterError。
    """
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"事件文件不存在: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    skipped = 0
    while skipped < len(lines) and lines[skipped].lstrip().startswith("#"):
        skipped += 1
    if skipped >= len(lines) or not lines[skipped].strip():
        raise ParameterError(f"事件文件为空: {path}")

    header_line = skipped + 1
    columns = [c.strip() for c in lines[skipped].split(",")]
    required = list(AXIS_NAMES[:dimension])
    missing = [c for c in required if c not in columns]
    if missing:
        raise ParseError(f"表头缺少列 {missing}，需要 {','.join(required)}[,t]", line=header_line)

    frame = pd.read_csv(path, comment="#", dtype=str, skip_blank_lines=False)
    frame.columns = [c.strip() for c in frame.columns]
    if frame.empty:
        raise ParameterError(f"事件文件没有数据行: {path}")
    wanted = required + (["t"] if "t" in frame.columns else [])
    numeric = frame[wanted].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(f"无法解析的数据行: {','.join(str(v) for v in frame.iloc[row].tolist())}",
                         line=header_line + 1 + row)
    points = numeric[required].to_numpy(dtype=float)
    times = numeric["t"].to_numpy(dtype=float) if "t" in numeric.columns else None
    logger.info(f"读取事件 {path}: {len(points)} 个")
    return points, times
