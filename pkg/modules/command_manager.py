"""
命令执行框架

提供统一的命令接口、参数校验、注册系统和执行记录。
"""
import json
import logging
import time
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

from error_handler import ConfigError

logger = logging.getLogger(__name__)

USAGE_ERROR = "usage"
FAILURE = "failure"


class CommandParameter:
    """命令参数（也是配置字段）的定义"""

    def __init__(
        self,
        name: str,
        param_type: str,
        description: str = "",
        required: bool = True,
        default: Any = None,
        enum: Optional[List[Any]] = None,
        minimum: Optional[float] = None,
        maximum: Optional[float] = None,
        exclusive_minimum: bool = False,
        exclusive_maximum: bool = False
    ):
        self.name = name
        self.param_type = param_type  # string, number, integer, boolean, array, object
        self.description = description
        self.required = required
        self.default = default
        self.enum = enum
        self.minimum = minimum
        self.maximum = maximum
        self.exclusive_minimum = exclusive_minimum
        self.exclusive_maximum = exclusive_maximum

    def validate(self, value: Any) -> Tuple[bool, Optional[str]]:
        """验证参数值"""
        if self.required and value is None:
            return False, f"参数 '{self.name}' 是必填项"

        if value is None:
            return True, None

        type_map = {
            'string': str,
            'number': (int, float),
            'integer': int,
            'boolean': bool,
            'array': list,
            'object': dict
        }
        expected_type = type_map.get(self.param_type)
        # bool 是 int 的子类，数值参数不接受 true/false
        is_bool = isinstance(value, bool) and self.param_type != 'boolean'
        if (expected_type and not isinstance(value, expected_type)) or is_bool:
            return False, (
                f"参数 '{self.name}' 类型错误，"
                f"期望 {self.param_type}，实际 {type(value).__name__}"
            )

        if self.enum and value not in self.enum:
            return False, f"参数 '{self.name}' 值必须是 {self.enum} 之一"

        if self.param_type in ('number', 'integer'):
            if value != value or value in (float('inf'), float('-inf')):
                return False, f"参数 '{self.name}' 必须是有限值"
            if self.minimum is not None:
                too_small = (
                    value <= self.minimum if self.exclusive_minimum
                    else value < self.minimum
                )
                if too_small:
                    op = '>' if self.exclusive_minimum else '>='
                    return False, f"参数 '{self.name}' 必须 {op} {self.minimum}，实际 {value}"
            if self.maximum is not None:
                too_large = (
                    value >= self.maximum if self.exclusive_maximum
                    else value > self.maximum
                )
                if too_large:
                    op = '<' if self.exclusive_maximum else '<='
                    return False, f"参数 '{self.name}' 必须 {op} {self.maximum}，实际 {value}"

        return True, None

    def check(self, value: Any, field: Optional[str] = None) -> Any:
        """校验并返回值（缺省时返回默认值）；失败抛出 ConfigError"""
        if value is None:
            value = self.default
        ok, message = self.validate(value)
        if not ok:
            raise ConfigError(message, field=field or self.name)
        return value


class Command(ABC):
    """命令基类

    所有子命令都需要继承此类并实现 execute 方法
    """

    def __init__(self):
        self.name: str = ""
        self.description: str = ""
        self.parameters: List[CommandParameter] = []

    @abstractmethod
    def execute(self, **kwargs) -> Dict[str, Any]:
        """执行命令

        Returns:
            {
                'success': bool,
                'result': Any,
                'error': Optional[str]
            }
        """
        pass

    def validate_parameters(
        self, params: Dict[str, Any]
    ) -> Tuple[bool, Optional[str], Dict[str, Any]]:
        """验证并处理参数"""
        validated_params = {}

        for param_def in self.parameters:
            value = params.get(param_def.name, param_def.default)

            is_valid, error_msg = param_def.validate(value)
            if not is_valid:
                return False, error_msg, {}

            validated_params[param_def.name] = (
                value if value is not None else param_def.default
            )

        return True, None, validated_params


class CommandRegistry:
    """命令注册中心

    ledger 为可选的运行记录器，需提供 record(...) 方法。
    """

    def __init__(self, ledger=None):
        self._commands: Dict[str, Command] = {}
        self.ledger = ledger

    def register(self, command: Command) -> None:
        if command.name in self._commands:
            logger.warning(f"命令 '{command.name}' 已存在，将被覆盖")
        self._commands[command.name] = command
        logger.debug(f"注册命令: {command.name}")

    def get(self, command_name: str) -> Optional[Command]:
        return self._commands.get(command_name)

    def execute(self, command_name: str, params: Dict[str, Any]) -> Dict[str, Any]:
        """执行命令并记录

        失败结果带 error_kind：usage（参数或配置错误）或 failure（其它错误）
        """
        start_time = time.time()

        command = self.get(command_name)
        if not command:
            return {
                'success': False,
                'error': f"命令 '{command_name}' 不存在",
                'error_kind': USAGE_ERROR,
                'result': None
            }

        is_valid, error_msg, validated_params = command.validate_parameters(params)
        if not is_valid:
            result = {
                'success': False,
                'error': f"参数验证失败: {error_msg}",
                'error_kind': USAGE_ERROR,
                'result': None
            }
            self._save_execution(command_name, params, result, time.time() - start_time)
            return result

        try:
            result = command.execute(**validated_params)
        except ConfigError as e:
            logger.error(f"❌ 配置错误: {e}")
            result = {
                'success': False,
                'error': str(e),
                'error_kind': USAGE_ERROR,
                'result': None
            }
        except Exception as e:
            logger.error(f"❌ 命令 '{command_name}' 执行失败: {e}", exc_info=True)
            result = {
                'success': False,
                'error': f"{type(e).__name__}: {e}",
                'error_kind': FAILURE,
                'result': None
            }

        self._save_execution(
            command_name, validated_params, result, time.time() - start_time
        )
        return result

    def _save_execution(
        self,
        command_name: str,
        params: Dict[str, Any],
        result: Dict[str, Any],
        execution_time: float
    ) -> None:
        """保存执行记录；记录失败不影响命令结果"""
        if self.ledger is None:
            return
        try:
            self.ledger.record(
                command=command_name,
                seed=params.get('seed'),
                parameters=json.dumps(params, ensure_ascii=False, default=str),
                success=result.get('success', False),
                error_message=result.get('error'),
                outputs=json.dumps(
                    (result.get('result') or {}).get('outputs', []),
                    ensure_ascii=False, default=str
                ),
                execution_time=execution_time,
            )
            status = '成功' if result.get('success') else '失败'
            logger.info(f"📝 记录命令执行: {command_name} ({status}) - {execution_time:.2f}s")
        except Exception as e:
            logger.error(f"保存命令执行记录失败: {e}", exc_info=True)
