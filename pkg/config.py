"""
配置

环境变量（可写在 .env 中）：
    MPX_LOG_DIR     日志目录，默认 ./logs
    MPX_OUT_DIR     默认输出目录，默认 ./output
    MPX_LEDGER_URL  运行记录数据库，默认 sqlite:///<日志目录>/runs.db
    MPX_WORKERS     默认并行进程数，默认为 CPU 核数

运行配置是一个 JSON 文件（schema_version = 1），命令行参数优先。
所有字段在开始计算之前一次性校验，出错抛出 ConfigError 并指明字段。
"""
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import psutil
from dotenv import load_dotenv

from error_handler import ConfigError, SimulationError
from modules.command_manager import CommandParameter
from modules.distributions import DelayDistribution
from modules.inference import (
    PRIOR_PRESETS, AnchorMode, FitSettings, PosteriorDraws, PriorSet,
    ct_to_log10, load_posterior, sample_prior
)
from modules.kpi import SWEEP_AXES, EvaluationPlan, SweepGrid
from modules.outbreak import PathogenProfile, SimLimits, get_pathogen_preset
from modules.seeding import cell_salt, derive_rng
from modules.strategies import StrategyKind
from modules.testmodels import DEFAULT_PCR_LOD, LfdModel, PcrModel

load_dotenv()

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
LOG_DIR = os.getenv("MPX_LOG_DIR", os.path.join(BASE_DIR, "logs"))
OUT_DIR = os.getenv("MPX_OUT_DIR", os.path.join(BASE_DIR, "output"))
LEDGER_URL = os.getenv("MPX_LEDGER_URL", f"sqlite:///{os.path.join(LOG_DIR, 'runs.db')}")
WORKERS = int(os.getenv("MPX_WORKERS", psutil.cpu_count() or 1))

SCHEMA_VERSION = 1


def _number(name, minimum=None, maximum=None, exclusive_minimum=False,
            exclusive_maximum=False, default=None, required=False):
    return CommandParameter(
        name, "number", required=required, default=default,
        minimum=minimum, maximum=maximum,
        exclusive_minimum=exclusive_minimum, exclusive_maximum=exclusive_maximum,
    )


def _integer(name, minimum=None, default=None, required=False):
    return CommandParameter(name, "integer", required=required, default=default, minimum=minimum)


def _section(data: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError("必须是对象", field=name)
    return value


def _check_section(section: Dict[str, Any], prefix: str, specs: List[CommandParameter]) -> Dict[str, Any]:
    known = {spec.name for spec in specs}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"未知字段 {unknown}", field=prefix)
    return {
        spec.name: spec.check(section.get(spec.name), field=f"{prefix}.{spec.name}")
        for spec in specs
    }


LFD_SPECS = [
    _number("beta0", required=True),
    _number("beta1", minimum=0, exclusive_minimum=True, required=True),
    _number("shift", default=0.0),
]
PCR_SPECS = [
    _number("lod", default=DEFAULT_PCR_LOD),
    _number("sens_above_lod", minimum=0, maximum=1, default=0.95),
    _number("turnaround", minimum=0, default=2.0),
]
PLAN_SPECS = [
    CommandParameter("strategies", "array", required=False,
                     default=[k.value for k in StrategyKind]),
    _integer("n_posterior_draws", minimum=1, default=1000),
    _integer("n_replicates_per_draw", minimum=1, default=250),
    CommandParameter("pairing", "boolean", required=False, default=True),
    _number("interval", minimum=0, maximum=1, exclusive_minimum=True,
            exclusive_maximum=True, default=0.95),
]
LIMIT_SPECS = [
    _integer("max_infections", minimum=1, default=10000),
    _number("max_time", minimum=0, exclusive_minimum=True, default=365.0),
]
PATHOGEN_SPECS = [
    CommandParameter("preset", "string", required=False),
    CommandParameter("name", "string", required=False),
    CommandParameter("generation_time", "object", required=False),
    CommandParameter("incubation", "object", required=False),
    _number("r0", minimum=0),
    _number("p_asymptomatic", minimum=0, maximum=1),
]
PRIOR_SPECS = [
    CommandParameter("preset", "string", required=False,
                     default="sars2-mid-turbinate", enum=list(PRIOR_PRESETS)),
    _number("sigma_obs_scale", minimum=0, exclusive_minimum=True),
]
FIT_SPECS = [
    CommandParameter("dataset", "string"),
    CommandParameter("anchor_mode", "string", required=False, default="infection",
                     enum=[m.value for m in AnchorMode]),
    _number("censor_threshold", required=True),
    CommandParameter("ct_curve", "object", required=False),
    CommandParameter("incubation", "object", required=False),
    _integer("n_chains", minimum=1, default=4),
    _integer("n_iterations", minimum=2, default=100_000),
    _number("burn_in_fraction", minimum=0, maximum=1, exclusive_maximum=True, default=0.5),
    _integer("n_retained", minimum=1, default=1000),
    _number("ess_floor", minimum=0, default=100.0),
    CommandParameter("output", "string", required=False, default="posterior.csv"),
]
# 数据集 value 列为 Ct 值时的标准曲线 Ct = intercept - slope * log10(浓度)
CT_CURVE_SPECS = [
    _number("intercept", required=True),
    _number("slope", minimum=0, exclusive_minimum=True, required=True),
]
SWEEP_SPECS = [
    CommandParameter("axis", "string", required=False, enum=list(SWEEP_AXES)),
    CommandParameter("values", "array", required=False),
]
CURVE_SPECS = [
    _number("horizon", minimum=0, exclusive_minimum=True, default=30.0),
    _integer("n_points", minimum=2, default=61),
    _integer("n_sims", minimum=1, default=1000),
    CommandParameter("condition_on_survival", "boolean", required=False, default=False),
    _number("tau_max", minimum=0, exclusive_minimum=True, default=20.0),
    _number("tau_step", minimum=0, exclusive_minimum=True, default=0.5),
    _integer("n_draws", minimum=1, default=100),
    _integer("n_per_draw", minimum=1, default=20),
]
TOP_LEVEL_KEYS = {
    "schema_version", "seed", "out_dir", "workers", "pathogen", "lfd", "pcr",
    "plan", "limits", "posterior", "prior_predictive", "priors", "fit",
    "sweep", "curves",
}


@dataclass
class PlanSettings:
    strategies: List[StrategyKind]
    n_posterior_draws: int = 1000
    n_replicates_per_draw: int = 250
    pairing: bool = True
    interval: float = 0.95


@dataclass
class FitConfig:
    dataset: Path
    anchor_mode: AnchorMode
    censor_threshold: float
    incubation_prior: Optional[DelayDistribution]
    settings: FitSettings
    output: str = "posterior.csv"
    ct_curve: Optional[Tuple[float, float]] = None


@dataclass
class CurveSettings:
    horizon: float = 30.0
    n_points: int = 61
    n_sims: int = 1000
    condition_on_survival: bool = False
    tau_max: float = 20.0
    tau_step: float = 0.5
    n_draws: int = 100
    n_per_draw: int = 20


@dataclass
class RunConfig:
    seed: int
    out_dir: Path
    workers: int
    pathogen: PathogenProfile
    pcr: PcrModel
    plan: PlanSettings
    limits: SimLimits
    priors: PriorSet
    curves: CurveSettings
    lfd: Optional[LfdModel] = None
    posterior_path: Optional[Path] = None
    prior_predictive: bool = False
    fit: Optional[FitConfig] = None
    sweep: Optional[SweepGrid] = None
    source_path: Optional[Path] = None
    schema_version: int = SCHEMA_VERSION

    def require_lfd(self) -> LfdModel:
        if self.lfd is None:
            raise ConfigError("缺少 LFD logistic 参数 beta0/beta1", field="lfd")
        return self.lfd

    def hyper_draws(self, n: Optional[int] = None) -> PosteriorDraws:
        """拟合好的后验样本，或先验预测模式下从先验抽样"""
        n = n or self.plan.n_posterior_draws
        if self.prior_predictive:
            rng = derive_rng(self.seed, cell_salt("prior-predictive"))
            return sample_prior(self.priors, n, rng)
        if self.posterior_path is None:
            raise ConfigError("需要 posterior.path 或 --prior-predictive", field="posterior")
        return load_posterior(self.posterior_path)

    def evaluation_plan(self, draws: PosteriorDraws) -> EvaluationPlan:
        return EvaluationPlan(
            pathogen=self.pathogen.with_overrides(hyper_draws=draws),
            strategies=self.plan.strategies,
            master_seed=self.seed,
            n_posterior_draws=self.plan.n_posterior_draws,
            n_replicates_per_draw=self.plan.n_replicates_per_draw,
            pairing=self.plan.pairing,
            limits=self.limits,
            interval=self.plan.interval,
            workers=self.workers,
        )


def _resolve_path(value: str, base: Optional[Path]) -> Path:
    path = Path(value)
    if not path.is_absolute() and base is not None:
        path = base / path
    return path


def _delay(data: Dict[str, Any], field_name: str) -> DelayDistribution:
    try:
        return DelayDistribution.from_dict(data)
    except KeyError as e:
        raise ConfigError(f"缺少分布参数 {e}", field=field_name)
    except SimulationError as e:
        raise ConfigError(str(e), field=field_name)


def _parse_pathogen(raw) -> PathogenProfile:
    if isinstance(raw, str):
        return get_pathogen_preset(raw)
    if not isinstance(raw, dict):
        raise ConfigError("必须是预设名或对象", field="pathogen")
    values = _check_section(raw, "pathogen", PATHOGEN_SPECS)
    if values["preset"]:
        profile = get_pathogen_preset(values["preset"])
    else:
        missing = [k for k in ("name", "generation_time", "incubation") if not values[k]]
        if missing:
            raise ConfigError(f"未使用预设时必须给出 {missing}", field="pathogen")
        profile = PathogenProfile(
            name=values["name"],
            generation_time=_delay(values["generation_time"], "pathogen.generation_time"),
            incubation=_delay(values["incubation"], "pathogen.incubation"),
        )
    changes = {}
    if values["preset"] and values["generation_time"]:
        changes["generation_time"] = _delay(values["generation_time"], "pathogen.generation_time")
    if values["preset"] and values["incubation"]:
        changes["incubation"] = _delay(values["incubation"], "pathogen.incubation")
    for key in ("r0", "p_asymptomatic"):
        if values[key] is not None:
            changes[key] = float(values[key])
    return profile.with_overrides(**changes) if changes else profile


def load_run_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    读取并校验运行配置

    Args:
        path: JSON 配置文件路径；为 None 时只使用 overrides 和默认值
        overrides: 命令行参数（值为 None 的项忽略）

    Raises:
        FileNotFoundError: 配置文件或其引用的文件不存在
        ConfigError: 任一字段超出定义域
    """
    data: Dict[str, Any] = {}
    base = None
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise FileNotFoundError(f"配置文件不存在: {config_path}")
        try:
            with open(config_path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON 解析失败: {e}", field="config")
        if not isinstance(data, dict):
            raise ConfigError("顶层必须是对象", field="config")
        base = config_path.parent

    unknown = sorted(set(data) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"未知字段 {unknown}", field="config")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"不支持的版本 {version}，期望 {SCHEMA_VERSION}", field="schema_version")

    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    seed = _integer("seed", minimum=0, required=True).check(
        overrides.get("seed", data.get("seed")), field="seed"
    )
    workers = _integer("workers", minimum=1).check(
        overrides.get("workers", data.get("workers", WORKERS)), field="workers"
    )
    out_dir = CommandParameter("out_dir", "string", required=False).check(
        overrides.get("out_dir", data.get("out_dir")), field="out_dir"
    )
    out_dir = _resolve_path(out_dir, base) if out_dir else Path(OUT_DIR)

    pathogen = _parse_pathogen(data.get("pathogen", "sars-cov-2"))

    lfd = None
    lfd_section = _section(data, "lfd")
    if lfd_section:
        lfd = LfdModel(**_check_section(lfd_section, "lfd", LFD_SPECS))

    pcr = PcrModel(**_check_section(_section(data, "pcr"), "pcr", PCR_SPECS))

    plan_values = _check_section(_section(data, "plan"), "plan", PLAN_SPECS)
    if "pairing" in overrides:
        plan_values["pairing"] = bool(overrides["pairing"])
    if not plan_values["strategies"]:
        raise ConfigError("至少需要一种策略", field="plan.strategies")
    plan_values["strategies"] = [StrategyKind.parse(s) for s in plan_values["strategies"]]
    plan = PlanSettings(**plan_values)

    limits = SimLimits(**_check_section(_section(data, "limits"), "limits", LIMIT_SPECS))

    prior_values = _check_section(_section(data, "priors"), "priors", PRIOR_SPECS)
    priors = PRIOR_PRESETS[prior_values["preset"]]
    if prior_values["sigma_obs_scale"] is not None:
        priors = replace(priors, sigma_obs_scale=prior_values["sigma_obs_scale"])

    prior_predictive = CommandParameter("prior_predictive", "boolean", required=False).check(
        overrides.get("prior_predictive", data.get("prior_predictive", False)),
        field="prior_predictive",
    )
    posterior_path = None
    posterior_section = _section(data, "posterior")
    if posterior_section.get("path") is not None:
        raw = CommandParameter("path", "string").check(
            posterior_section["path"], field="posterior.path"
        )
        posterior_path = _resolve_path(raw, base)

    fit = None
    fit_section = _section(data, "fit")
    if fit_section:
        values = _check_section(fit_section, "fit", FIT_SPECS)
        anchor_mode = AnchorMode(values["anchor_mode"])
        incubation = None
        if values["incubation"]:
            incubation = _delay(values["incubation"], "fit.incubation")
        elif anchor_mode == AnchorMode.ONSET:
            incubation = pathogen.incubation
        try:
            settings = FitSettings(
                n_chains=values["n_chains"],
                n_iterations=values["n_iterations"],
                burn_in_fraction=values["burn_in_fraction"],
                n_retained=values["n_retained"],
                ess_floor=values["ess_floor"],
                workers=workers,
            )
        except SimulationError as e:
            raise ConfigError(str(e), field="fit")
        ct_curve = None
        censor_threshold = float(values["censor_threshold"])
        if values["ct_curve"] is not None:
            curve = _check_section(values["ct_curve"], "fit.ct_curve", CT_CURVE_SPECS)
            ct_curve = (float(curve["intercept"]), float(curve["slope"]))
            # 阈值同样以 Ct 给出
            censor_threshold = ct_to_log10(censor_threshold, *ct_curve)
        fit = FitConfig(
            dataset=_resolve_path(values["dataset"], base),
            anchor_mode=anchor_mode,
            censor_threshold=censor_threshold,
            incubation_prior=incubation,
            settings=settings,
            output=values["output"],
            ct_curve=ct_curve,
        )

    sweep = None
    sweep_values = _check_section(_section(data, "sweep"), "sweep", SWEEP_SPECS)
    axis = overrides.get("axis", sweep_values["axis"])
    if axis is not None:
        if axis not in SWEEP_AXES:
            raise ConfigError(f"未知扫描轴 '{axis}'，可选: {list(SWEEP_AXES)}", field="sweep.axis")
        values = overrides.get("values")
        if values is None:
            values = sweep_values["values"] if axis == sweep_values["axis"] else None
        sweep = SweepGrid(axis, values) if values is not None else SweepGrid.default(axis)

    curves = CurveSettings(**_check_section(_section(data, "curves"), "curves", CURVE_SPECS))

    return RunConfig(
        seed=int(seed),
        out_dir=out_dir,
        workers=int(workers),
        pathogen=pathogen,
        pcr=pcr,
        plan=plan,
        limits=limits,
        priors=priors,
        curves=curves,
        lfd=lfd,
        posterior_path=posterior_path,
        prior_predictive=bool(prior_predictive),
        fit=fit,
        sweep=sweep,
        source_path=Path(path) if path else None,
    )
