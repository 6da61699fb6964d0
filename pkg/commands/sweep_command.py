"""
sweep 子命令

单参数敏感性分析：沿一个轴逐个取值重新评估
"""
import logging
from typing import Any, Dict

from commands.base import RunCommand
from error_handler import ConfigError, log_execution
from modules.command_manager import CommandParameter
from modules.kpi import SWEEP_AXES, sweep, write_sweep

logger = logging.getLogger(__name__)


class SweepCommand(RunCommand):
    """敏感性分析"""

    override_keys = (
        "seed", "workers", "out_dir", "pairing", "prior_predictive", "axis", "values"
    )

    def __init__(self):
        super().__init__()
        self.name = "sweep"
        self.description = "沿一个参数轴做敏感性分析，输出每个取值的 KPI 和合并长表"
        self.parameters += [
            CommandParameter(
                name="axis",
                param_type="string",
                description="扫描轴",
                required=False,
                enum=list(SWEEP_AXES)
            ),
            CommandParameter(
                name="values",
                param_type="array",
                description="扫描取值（缺省时使用该轴的默认取值）",
                required=False
            ),
            CommandParameter(
                name="pairing",
                param_type="boolean",
                description="各策略是否共用同一组随机数",
                required=False
            ),
            CommandParameter(
                name="prior_predictive",
                param_type="boolean",
                description="从先验抽群体参数，不读取后验文件",
                required=False
            ),
        ]

    @log_execution
    def execute(self, **kwargs) -> Dict[str, Any]:
        config = self.load_config(kwargs)
        if config.sweep is None:
            raise ConfigError("需要 --axis 或 sweep.axis", field="sweep.axis")
        lfd = config.require_lfd()
        plan = config.evaluation_plan(config.hyper_draws())

        results = sweep(plan, config.sweep, lfd, config.pcr)
        outputs = write_sweep(results, config.sweep.axis, config.out_dir)
        return self.success(
            outputs,
            axis=config.sweep.axis,
            n_cells=len(results),
        )
