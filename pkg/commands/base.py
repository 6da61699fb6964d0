"""
子命令公共部分：通用参数和配置加载
"""
from typing import Any, Dict, List

from config import RunConfig, load_run_config
from modules.command_manager import Command, CommandParameter


def common_parameters() -> List[CommandParameter]:
    return [
        CommandParameter(
            name="config",
            param_type="string",
            description="JSON 运行配置文件路径",
            required=False
        ),
        CommandParameter(
            name="seed",
            param_type="integer",
            description="主随机种子（覆盖配置文件）",
            required=False,
            minimum=0
        ),
        CommandParameter(
            name="workers",
            param_type="integer",
            description="并行进程数",
            required=False,
            minimum=1
        ),
        CommandParameter(
            name="out_dir",
            param_type="string",
            description="输出目录",
            required=False
        ),
    ]


class RunCommand(Command):
    """读取运行配置的子命令基类"""

    # 除 config 以外、作为覆盖项传给 load_run_config 的参数
    override_keys = ("seed", "workers", "out_dir")

    def __init__(self):
        super().__init__()
        self.parameters = common_parameters()

    def load_config(self, kwargs: Dict[str, Any]) -> RunConfig:
        overrides = {key: kwargs.get(key) for key in self.override_keys}
        return load_run_config(kwargs.get("config"), overrides)

    @staticmethod
    def success(outputs, **extra) -> Dict[str, Any]:
        return {
            'success': True,
            'result': {'outputs': [str(p) for p in outputs], **extra},
            'error': None
        }
