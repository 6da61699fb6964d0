"""
错误处理

模拟、推断与命令执行共用的异常类型和执行日志装饰器
"""
import time
import logging
from functools import wraps
from typing import Callable, Any, Optional

logger = logging.getLogger('multiplex_sim')


def log_execution(func: Callable) -> Callable:
    """记录函数执行的装饰器"""
    @wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        logger.info(f"开始执行: {func.__name__}")
        start_time = time.time()

        try:
            result = func(*args, **kwargs)
            elapsed = time.time() - start_time
            logger.info(f"执行完成: {func.__name__} (耗时: {elapsed:.2f}秒)")
            return result

        except Exception as e:
            elapsed = time.time() - start_time
            logger.error(
                f"执行失败: {func.__name__} (耗时: {elapsed:.2f}秒) - {str(e)}"
            )
            raise

    return wrapper


class SimulationError(Exception):
    """本项目异常基类"""
    pass


class ParameterDomainError(SimulationError, ValueError):
    """模型参数超出定义域"""
    pass


class DatasetError(SimulationError):
    """数据集解析或校验错误"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"第 {row} 行: {message}"
        super().__init__(message)


class InitializationError(SimulationError):
    """MCMC 初始状态的后验不是有限值"""

    def __init__(self, component: str, detail: str = ""):
        self.component = component
        message = f"初始化失败，非有限项: {component}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ConfigError(SimulationError):
    """运行配置校验失败"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"配置项 '{field}': {message}"
        super().__init__(message)
