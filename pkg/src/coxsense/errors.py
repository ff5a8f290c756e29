"""
统一错误处理系统

定义CoxSense的异常层次，并提供错误分类、格式化和解决建议功能
"""

import time
import traceback
from enum import Enum
from typing import Any, Dict, List, Optional

from loguru import logger


class CoxSenseError(Exception):
    """CoxSense错误基类"""

    def __init__(self, message: str, details: Any = None):
        self.message = message
        self.details = details
        super().__init__(message)


class ParameterError(CoxSenseError):
    """参数取值不合法"""


class DomainError(CoxSenseError):
    """点位于定义域之外"""


class DegenerateNodesError(CoxSenseError):
    """核矩阵节点重复"""


class BasisDegeneracyError(CoxSenseError):
    """基变换矩阵V接近奇异"""

    def __init__(self, message: str, nodes: Optional[List[int]] = None, details: Any = None):
        self.nodes = list(nodes or [])
        super().__init__(message, details)


class SamplingFailureError(CoxSenseError):
    """截断高斯过程拒绝采样超出预算"""


class CapacityError(CoxSenseError):
    """基大小超过硬上限"""


class ConvergenceError(CoxSenseError):
    """优化器未收敛"""

    def __init__(self, message: str, residual: float = float("nan"), details: Any = None):
        self.residual = residual
        super().__init__(message, details)


class NumericalError(CoxSenseError):
    """数值求解失败（例如QP循环）"""


class DivergenceError(CoxSenseError):
    """Langevin迭代出现非有限值"""

    def __init__(self, message: str, step: int = -1, chain: Optional[int] = None):
        self.step = step
        self.chain = chain
        super().__init__(message, {"step": step, "chain": chain})


class ModelError(CoxSenseError):
    """强度模型不合法（负强度等）"""


class InvariantViolation(CoxSenseError):
    """内部不变量被破坏"""


class ConfigurationError(CoxSenseError):
    """实验配置无效"""


class ParseError(CoxSenseError):
    """输入文件格式错误"""

    def __init__(self, message: str, line: Optional[int] = None, details: Any = None):
        self.line = line
        if line is not None:
            message = f"第{line}行: {message}"
        super().__init__(message, details)


class TaskComplete(CoxSenseError):
    """感兴趣区域为空，任务已完成"""


class ErrorType(Enum):
    """错误类型枚举"""
    PARAMETER_ERROR = "parameter_error"
    DOMAIN_ERROR = "domain_error"
    BASIS_ERROR = "basis_error"
    SAMPLING_ERROR = "sampling_error"
    CONVERGENCE_ERROR = "convergence_error"
    NUMERICAL_ERROR = "numerical_error"
    DIVERGENCE_ERROR = "divergence_error"
    MODEL_ERROR = "model_error"
    CONFIGURATION_ERROR = "configuration_error"
    PARSE_ERROR = "parse_error"
    TASK_COMPLETE = "task_complete"
    UNKNOWN_ERROR = "unknown_error"


_TYPE_MAP = [
    (TaskComplete, ErrorType.TASK_COMPLETE),
    (ParseError, ErrorType.PARSE_ERROR),
    (ConfigurationError, ErrorType.CONFIGURATION_ERROR),
    (DomainError, ErrorType.DOMAIN_ERROR),
    ((DegenerateNodesError, BasisDegeneracyError, CapacityError), ErrorType.BASIS_ERROR),
    (SamplingFailureError, ErrorType.SAMPLING_ERROR),
    (ConvergenceError, ErrorType.CONVERGENCE_ERROR),
    ((NumericalError, InvariantViolation), ErrorType.NUMERICAL_ERROR),
    (DivergenceError, ErrorType.DIVERGENCE_ERROR),
    (ModelError, ErrorType.MODEL_ERROR),
    (ParameterError, ErrorType.PARAMETER_ERROR),
]


class ErrorHandler:
    """统一错误处理器"""

    @staticmethod
    def classify_error(error: Exception) -> ErrorType:
        """根据异常类型和消息分类错误"""
        for exc_types, error_type in _TYPE_MAP:
            if isinstance(error, exc_types):
                return error_type

        error_str = str(error).lower()
        if isinstance(error, (ValueError, TypeError)) and "validation" in error_str:
            return ErrorType.CONFIGURATION_ERROR
        if isinstance(error, (FloatingPointError, ZeroDivisionError)):
            return ErrorType.NUMERICAL_ERROR
        if "singular" in error_str or "not positive definite" in error_str:
            return ErrorType.NUMERICAL_ERROR
        if isinstance(error, (FileNotFoundError, UnicodeDecodeError)):
            return ErrorType.PARSE_ERROR
        return ErrorType.UNKNOWN_ERROR

    @staticmethod
    def get_error_suggestions(error_type: ErrorType, error: Exception) -> List[str]:
        """根据错误类型提供解决建议"""
        suggestions = {
            ErrorType.PARAMETER_ERROR: [
                "检查参数取值范围",
                "参考配置文档中的默认值",
            ],
            ErrorType.DOMAIN_ERROR: [
                "确认查询点位于定义域内",
                "检查domain.lower与domain.upper",
            ],
            ErrorType.BASIS_ERROR: [
                "减小基大小m或增大核长度尺度",
                "检查节点是否重复",
                "尝试使用hat基（V为单位阵）",
            ],
            ErrorType.SAMPLING_ERROR: [
                "调整下界l（l越接近0，截断越宽松）",
                "使用更平滑的核（更大的长度尺度）",
                "增大拒绝采样预算",
            ],
            ErrorType.CONVERGENCE_ERROR: [
                "放宽收敛容差",
                "增大最大迭代次数",
                "检查观测数据是否异常",
            ],
            ErrorType.NUMERICAL_ERROR: [
                "检查约束多面体是否非空",
                "增大迭代上限或改用备用求解器",
            ],
            ErrorType.DIVERGENCE_ERROR: [
                "减小Langevin步长",
                "检查Lipschitz常数估计",
                "尝试mirror采样器",
            ],
            ErrorType.MODEL_ERROR: [
                "确认强度函数非负",
                "检查地面真值配置",
            ],
            ErrorType.CONFIGURATION_ERROR: [
                "检查配置文件格式是否正确",
                "确认没有未知字段",
                "验证配置值的有效性",
            ],
            ErrorType.PARSE_ERROR: [
                "检查CSV表头与列数",
                "确认数值字段可解析",
            ],
            ErrorType.TASK_COMPLETE: [
                "感兴趣区域已为空，可提前结束实验",
            ],
        }
        return list(suggestions.get(error_type, ["查看详细错误日志", "使用--debug重新运行"]))

    @staticmethod
    def format_error_response(
        error: Exception,
        context: Optional[str] = None,
        include_traceback: bool = False,
        include_timestamp: bool = True,
    ) -> Dict[str, Any]:
        """格式化错误响应"""
        error_type = ErrorHandler.classify_error(error)
        response: Dict[str, Any] = {
            "type": "error",
            "error_type": error_type.value,
            "error_class": type(error).__name__,
            "message": getattr(error, "message", str(error)),
            "suggestions": ErrorHandler.get_error_suggestions(error_type, error),
            "context": context,
        }
        details = getattr(error, "details", None)
        if details is not None:
            response["details"] = details
        if include_timestamp:
            response["timestamp"] = time.time()
        if include_traceback:
            response["traceback"] = traceback.format_exc()
        return response

    @staticmethod
    def log_error(error: Exception, context: Optional[str] = None):
        """记录错误日志"""
        error_type = ErrorHandler.classify_error(error)
        if error_type == ErrorType.TASK_COMPLETE:
            logger.info(f"{context or '任务'}: {error}")
        elif error_type in (ErrorType.UNKNOWN_ERROR, ErrorType.NUMERICAL_ERROR):
            logger.error(f"严重错误 [{error_type.value}] {context or ''}: {error}")
        else:
            logger.warning(f"错误 [{error_type.value}] {context or ''}: {error}")
