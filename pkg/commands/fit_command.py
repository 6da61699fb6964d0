"""
fit 子命令

读取观测数据集，MCMC 拟合群体参数，写出后验样本和诊断报告
"""
import logging
from typing import Any, Dict

from commands.base import RunCommand
from error_handler import ConfigError, log_execution
from modules.inference import fit, load_dataset, write_posterior
from modules.seeding import cell_salt, derive_rng

logger = logging.getLogger(__name__)


class FitCommand(RunCommand):
    """拟合病毒浓度轨迹模型"""

    def __init__(self):
        super().__init__()
        self.name = "fit"
        self.description = "拟合群体病毒动力学参数，输出后验样本 CSV 和诊断 JSON"

    @log_execution
    def execute(self, **kwargs) -> Dict[str, Any]:
        config = self.load_config(kwargs)
        if config.fit is None:
            raise ConfigError("fit 子命令需要 fit 配置段", field="fit")
        fit_config = config.fit

        dataset = load_dataset(
            fit_config.dataset,
            fit_config.anchor_mode,
            fit_config.censor_threshold,
            fit_config.incubation_prior,
            fit_config.ct_curve,
        )
        rng = derive_rng(config.seed, cell_salt("fit"))
        posterior = fit(dataset, config.priors, fit_config.settings, rng)

        posterior_path, diagnostics_path = write_posterior(
            posterior, config.out_dir / fit_config.output
        )
        warnings = posterior.diagnostics.get("warnings", [])
        if warnings:
            logger.warning(f"⚠️ 收敛诊断有 {len(warnings)} 条警告，详见 {diagnostics_path}")
        logger.info(f"✅ 后验样本已写入 {posterior_path}")
        return self.success(
            [posterior_path, diagnostics_path],
            n_draws=len(posterior),
            warnings=warnings,
        )
