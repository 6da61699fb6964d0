"""
simulate 子命令

在后验样本（或先验预测样本）上评估检测策略，输出 KPI 表
"""
import logging
from typing import Any, Dict

from commands.base import RunCommand
from error_handler import log_execution
from modules.command_manager import CommandParameter
from modules.kpi import evaluate, write_kpi_csv, write_kpi_json
from modules.outbreak import cumulative_incidence_curve
from modules.seeding import cell_salt, derive_rng

logger = logging.getLogger(__name__)


class SimulateCommand(RunCommand):
    """评估检测策略的 KPI"""

    override_keys = ("seed", "workers", "out_dir", "pairing", "prior_predictive")

    def __init__(self):
        super().__init__()
        self.name = "simulate"
        self.description = "模拟暴发并评估五种检测策略，输出 KPI 的 CSV 和 JSON"
        self.parameters += [
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
            CommandParameter(
                name="epidemic_curve",
                param_type="boolean",
                description="同时输出累计感染曲线",
                required=False,
                default=False
            ),
        ]

    @log_execution
    def execute(self, **kwargs) -> Dict[str, Any]:
        config = self.load_config(kwargs)
        lfd = config.require_lfd()
        draws = config.hyper_draws()
        plan = config.evaluation_plan(draws)

        table = evaluate(plan, lfd, config.pcr)
        stem = f"kpi_{config.pathogen.name}"
        outputs = [
            write_kpi_csv(table, config.out_dir / f"{stem}.csv"),
            write_kpi_json(table, config.out_dir / f"{stem}.json"),
        ]

        if kwargs.get("epidemic_curve"):
            curves = config.curves
            rng = derive_rng(config.seed, cell_salt("epidemic-curve"))
            frame = cumulative_incidence_curve(
                config.pathogen, draws[0], curves.horizon, curves.n_sims, rng,
                n_points=curves.n_points,
                condition_on_survival=curves.condition_on_survival,
                max_infections=config.limits.max_infections,
            )
            path = config.out_dir / f"epidemic_curve_{config.pathogen.name}.csv"
            frame.to_csv(path, index=False, float_format="%.10g")
            outputs.append(path)

        logger.info(f"📝 KPI 已写入 {config.out_dir}")
        detection = {
            row.strategy: row.mean for row in table.rows
            if row.metric == "detection_probability"
        }
        return self.success(outputs, detection_probability=detection)
