"""
curves 子命令

输出画图用的曲线数据：累计感染曲线，以及感染后各时刻的
病毒浓度与 LFD/PCR 灵敏度分布
"""
import logging
from typing import Any, Dict

import numpy as np

from commands.base import RunCommand
from error_handler import log_execution
from modules.command_manager import CommandParameter
from modules.outbreak import cumulative_incidence_curve
from modules.seeding import cell_salt, derive_rng
from modules.testmodels import sensitivity_over_time

logger = logging.getLogger(__name__)


class CurvesCommand(RunCommand):
    """曲线数据"""

    override_keys = ("seed", "workers", "out_dir", "prior_predictive")

    def __init__(self):
        super().__init__()
        self.name = "curves"
        self.description = "输出累计感染曲线和检测灵敏度随时间变化的 CSV"
        self.parameters.append(
            CommandParameter(
                name="prior_predictive",
                param_type="boolean",
                description="从先验抽群体参数，不读取后验文件",
                required=False
            )
        )

    @log_execution
    def execute(self, **kwargs) -> Dict[str, Any]:
        config = self.load_config(kwargs)
        curves = config.curves
        lfd = config.require_lfd()
        draws = config.hyper_draws(curves.n_draws)
        name = config.pathogen.name
        config.out_dir.mkdir(parents=True, exist_ok=True)

        incidence = cumulative_incidence_curve(
            config.pathogen, draws[0], curves.horizon, curves.n_sims,
            derive_rng(config.seed, cell_salt("epidemic-curve")),
            n_points=curves.n_points,
            condition_on_survival=curves.condition_on_survival,
            max_infections=config.limits.max_infections,
        )
        incidence_path = config.out_dir / f"epidemic_curve_{name}.csv"
        incidence.to_csv(incidence_path, index=False, float_format="%.10g")

        n_draws = min(curves.n_draws, len(draws))
        idx = np.linspace(0, len(draws) - 1, n_draws).round().astype(int)
        tau_grid = np.arange(0.0, curves.tau_max + curves.tau_step / 2, curves.tau_step)
        profile = sensitivity_over_time(
            [draws[int(i)] for i in idx], lfd, config.pcr, tau_grid, curves.n_per_draw,
            derive_rng(config.seed, cell_salt("sensitivity-curve")),
        )
        profile_path = config.out_dir / f"sensitivity_{name}.csv"
        profile.to_csv(profile_path, index=False, float_format="%.10g")

        logger.info(f"📝 曲线数据已写入 {config.out_dir}")
        return self.success([incidence_path, profile_path])
