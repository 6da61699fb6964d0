"""
KPI 评估与敏感性扫描

对每个后验样本模拟 n_replicates 次暴发，逐策略统计样本级指标，
再跨样本汇总为均值和等尾分位区间。

条件化约定（写入 JSON 元数据）：
    时间、感染数、检测数的平均值只在已检出的暴发上计算；
    确认相关的平均值只在得到确认的暴发上计算；
    等待确认期间的 PCR 数只在 LfdConfirmPcr 检出的暴发上计算。
某个样本的分母为空时该样本不参与这一指标；所有样本都为空时
指标记为未定义（NaN，n_draws = 0），而不是 0。
"""
import json
import logging
import math
import numbers
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from error_handler import ConfigError, ParameterDomainError
from modules.kinetics import PopulationHyperparams
from modules.outbreak import InfectionStream, PathogenProfile, SimLimits, simulate_tree
from modules.seeding import cell_salt, derive_rng
from modules.strategies import ResultDraws, StrategyKind, StrategyOutcome, run_strategy
from modules.testmodels import DEFAULT_PCR_LOD, LfdModel, PcrModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KPI_COLUMNS = [
    "schema_version", "pathogen", "strategy", "metric",
    "mean", "lower", "upper", "n_draws", "axis", "axis_value",
]

METRICS = (
    "detection_probability",
    "p_undetected_given_five_symptomatic",
    "mean_t_first_positive",
    "mean_infections_at_first_positive",
    "mean_lfd_used",
    "mean_pcr_used",
    "mean_t_confirmation",
    "mean_infections_at_confirmation",
    "mean_pcr_awaiting_confirmation",
    "all_asymptomatic_fraction",
    "truncated_fraction",
)

PROBABILITY_METRICS = {
    "detection_probability",
    "p_undetected_given_five_symptomatic",
    "all_asymptomatic_fraction",
    "truncated_fraction",
}

CONDITIONING = {
    "p_undetected_given_five_symptomatic": "outbreaks with at least five symptomatic cases",
    "mean_t_first_positive": "detected outbreaks",
    "mean_infections_at_first_positive": "detected outbreaks",
    "mean_lfd_used": "detected outbreaks",
    "mean_pcr_used": "detected outbreaks",
    "mean_t_confirmation": "confirmed outbreaks (LfdConfirmPcr only)",
    "mean_infections_at_confirmation": "confirmed outbreaks (LfdConfirmPcr only)",
    "mean_pcr_awaiting_confirmation": "detected outbreaks (LfdConfirmPcr only)",
}

# 关闭配对时用来区分各策略随机流的固定编号，与计划中的策略顺序无关
_STRATEGY_INDEX = {kind: i for i, kind in enumerate(StrategyKind)}

_TREE_BLOCK = 0
_RESULT_BLOCK = 1


@dataclass
class EvaluationPlan:
    pathogen: PathogenProfile
    strategies: List[StrategyKind]
    master_seed: int
    n_posterior_draws: int = 1000
    n_replicates_per_draw: int = 250
    pairing: bool = True
    limits: SimLimits = field(default_factory=SimLimits)
    interval: float = 0.95
    workers: int = 1

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("至少需要一种策略", field="plan.strategies")
        self.strategies = [
            s if isinstance(s, StrategyKind) else StrategyKind.parse(s)
            for s in self.strategies
        ]
        if self.n_posterior_draws < 1:
            raise ConfigError("必须 >= 1", field="plan.n_posterior_draws")
        if self.n_replicates_per_draw < 1:
            raise ConfigError("必须 >= 1", field="plan.n_replicates_per_draw")
        if not 0 < self.interval < 1:
            raise ConfigError("必须在 (0, 1) 内", field="plan.interval")
        if self.workers < 1:
            raise ConfigError("必须 >= 1", field="workers")


@dataclass(frozen=True)
class KpiRow:
    strategy: str
    metric: str
    mean: float
    lower: float
    upper: float
    n_draws: int


@dataclass
class KpiTable:
    pathogen: str
    rows: List[KpiRow]
    # (策略, 指标) -> 每个后验样本的统计量，分母为空时为 NaN
    draw_level: Dict[Tuple[str, str], np.ndarray]
    metadata: Dict = field(default_factory=dict)

    def get(self, strategy, metric: str) -> KpiRow:
        name = strategy.value if isinstance(strategy, StrategyKind) else strategy
        for row in self.rows:
            if row.strategy == name and row.metric == metric:
                return row
        raise KeyError(f"{name}/{metric}")

    def draws_of(self, strategy, metric: str) -> np.ndarray:
        name = strategy.value if isinstance(strategy, StrategyKind) else strategy
        return self.draw_level[(name, metric)]

    def to_frame(self, axis: Optional[str] = None, axis_value: Optional[float] = None) -> pd.DataFrame:
        frame = pd.DataFrame([
            {
                "schema_version": SCHEMA_VERSION,
                "pathogen": self.pathogen,
                "strategy": row.strategy,
                "metric": row.metric,
                "mean": row.mean,
                "lower": row.lower,
                "upper": row.upper,
                "n_draws": row.n_draws,
                "axis": axis if axis is not None else "",
                "axis_value": axis_value if axis_value is not None else np.nan,
            }
            for row in self.rows
        ], columns=KPI_COLUMNS)
        return frame


SWEEP_AXES = ("pcr_lod", "pcr_sensitivity", "r0", "p_asymptomatic", "lfd_shift")

DEFAULT_SWEEP_VALUES = {
    "pcr_lod": [math.log10(100), DEFAULT_PCR_LOD, math.log10(1000)],
    "pcr_sensitivity": [0.90, 0.95, 0.99],
    "r0": [1.25, 1.5, 2.0],
    "p_asymptomatic": [0.20, 0.33, 0.50],
    "lfd_shift": [-1.0, 0.0, 1.0],
}


@dataclass
class SweepGrid:
    axis: str
    values: List[float]

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(
                f"未知扫描轴 '{self.axis}'，可选: {list(SWEEP_AXES)}", field="sweep.axis"
            )
        if not self.values:
            raise ConfigError("扫描取值不能为空", field="sweep.values")
        for value in self.values:
            # bool 是 int 的子类
            if isinstance(value, bool) or not isinstance(value, numbers.Real):
                raise ConfigError(f"扫描取值必须是数字，实际 {value!r}", field="sweep.values")
        self.values = [float(v) for v in self.values]
        for value in self.values:
            if not _axis_value_valid(self.axis, value):
                raise ConfigError(
                    f"{self.axis} 的取值 {value} 超出定义域", field="sweep.values"
                )
        labels = [axis_value_label(v) for v in self.values]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"扫描取值重复: {labels}", field="sweep.values")

    @classmethod
    def default(cls, axis: str) -> "SweepGrid":
        if axis not in DEFAULT_SWEEP_VALUES:
            raise ConfigError(
                f"未知扫描轴 '{axis}'，可选: {list(SWEEP_AXES)}", field="sweep.axis"
            )
        return cls(axis, list(DEFAULT_SWEEP_VALUES[axis]))


def axis_value_label(value: float) -> str:
    """扫描单元的文件名标签，12 位有效数字"""
    return f"{value:.12g}"


def _axis_value_valid(axis: str, value: float) -> bool:
    if not math.isfinite(value):
        return False
    if axis in ("pcr_sensitivity", "p_asymptomatic"):
        return 0.0 <= value <= 1.0
    if axis == "r0":
        return value >= 0.0
    return True


def _replicate_statistics(outcomes: List[StrategyOutcome]) -> Dict[str, float]:
    """一个后验样本下某策略所有重复的样本级统计量"""
    n = len(outcomes)
    detected = [o for o in outcomes if o.detected]
    five = [o for o in outcomes if o.had_five_symptomatic]
    confirmed = [o for o in detected if o.t_confirmation is not None]
    awaiting = [o for o in detected if o.n_pcr_awaiting_confirmation is not None]

    def mean_of(items, attr):
        if not items:
            return np.nan
        return float(np.mean([getattr(o, attr) for o in items]))

    return {
        "detection_probability": len(detected) / n,
        "p_undetected_given_five_symptomatic": (
            sum(1 for o in five if not o.detected) / len(five) if five else np.nan
        ),
        "mean_t_first_positive": mean_of(detected, "t_first_positive"),
        "mean_infections_at_first_positive": mean_of(detected, "infections_at_first_positive"),
        "mean_lfd_used": mean_of(detected, "n_lfd_used"),
        "mean_pcr_used": mean_of(detected, "n_pcr_used"),
        "mean_t_confirmation": mean_of(confirmed, "t_confirmation"),
        "mean_infections_at_confirmation": mean_of(confirmed, "infections_at_confirmation"),
        "mean_pcr_awaiting_confirmation": mean_of(awaiting, "n_pcr_awaiting_confirmation"),
        "all_asymptomatic_fraction": sum(1 for o in outcomes if o.all_asymptomatic) / n,
        "truncated_fraction": sum(1 for o in outcomes if o.truncated) / n,
    }


def simulate_draw(
    profile: PathogenProfile,
    hyper: PopulationHyperparams,
    strategies: Sequence[StrategyKind],
    lfd: LfdModel,
    pcr: PcrModel,
    limits: SimLimits,
    n_replicates: int,
    master_seed: int,
    salt: int,
    draw_index: int,
    pairing: bool = True
) -> Dict[StrategyKind, List[StrategyOutcome]]:
    """
    一个后验样本下的全部重复模拟

    配对时每个重复只生成一棵树和一组检测均匀数，所有策略共用；
    不配对时每个策略各自生成。
    """
    outcomes = {kind: [] for kind in strategies}
    for rep in range(n_replicates):
        if pairing:
            tree_rng = derive_rng(master_seed, salt, draw_index, rep, _TREE_BLOCK)
            stream = InfectionStream(simulate_tree(profile, hyper, limits, tree_rng))
            draws = ResultDraws.from_rng(
                derive_rng(master_seed, salt, draw_index, rep, _RESULT_BLOCK)
            )
            for kind in strategies:
                outcomes[kind].append(run_strategy(stream, kind, lfd, pcr, draws=draws))
            continue
        for kind in strategies:
            index = _STRATEGY_INDEX[kind]
            tree_rng = derive_rng(master_seed, salt, draw_index, rep, _TREE_BLOCK, index)
            stream = InfectionStream(simulate_tree(profile, hyper, limits, tree_rng))
            draws = ResultDraws.from_rng(
                derive_rng(master_seed, salt, draw_index, rep, _RESULT_BLOCK, index)
            )
            outcomes[kind].append(run_strategy(stream, kind, lfd, pcr, draws=draws))
    return outcomes


def _evaluate_draw(args) -> Dict[str, Dict[str, float]]:
    (profile, hyper, strategies, lfd, pcr, limits,
     n_replicates, master_seed, salt, draw_index, pairing) = args
    outcomes = simulate_draw(
        profile, hyper, strategies, lfd, pcr, limits,
        n_replicates, master_seed, salt, draw_index, pairing,
    )
    return {kind.value: _replicate_statistics(items) for kind, items in outcomes.items()}


def _select_draws(plan: EvaluationPlan) -> List[PopulationHyperparams]:
    posterior = plan.pathogen.hyper_draws
    if posterior is None or len(posterior) == 0:
        raise ParameterDomainError("病原体没有后验样本，请先拟合或使用先验预测模式")
    available = len(posterior)
    n = plan.n_posterior_draws
    if n > available:
        raise ParameterDomainError(
            f"请求 {n} 个后验样本，但只有 {available} 个"
        )
    idx = np.linspace(0, available - 1, n).round().astype(int)
    return [posterior[int(i)] for i in idx]


def _summarise(values: np.ndarray, interval: float) -> Tuple[float, float, float, int]:
    finite = values[~np.isnan(values)]
    if finite.size == 0:
        return np.nan, np.nan, np.nan, 0
    mean = float(finite.mean())
    tail = (1.0 - interval) / 2.0
    lower, upper = np.quantile(finite, [tail, 1.0 - tail])
    # 偏态分布下均值可能落在等尾区间之外
    return mean, float(min(lower, mean)), float(max(upper, mean)), int(finite.size)


def evaluate(
    plan: EvaluationPlan,
    lfd: LfdModel,
    pcr: PcrModel,
    salt: int = 0
) -> KpiTable:
    """
    在所有后验样本上评估各策略的 KPI

    Args:
        salt: 扫描单元的随机流标识；基线评估为 0
    """
    hypers = _select_draws(plan)
    profile = plan.pathogen.with_overrides(hyper_draws=None)
    tasks = [
        (profile, hyper, plan.strategies, lfd, pcr, plan.limits,
         plan.n_replicates_per_draw, plan.master_seed, salt, k, plan.pairing)
        for k, hyper in enumerate(hypers)
    ]
    logger.info(
        f"开始评估 {profile.name}: {len(hypers)} 个后验样本 × "
        f"{plan.n_replicates_per_draw} 次重复, 策略 {[s.value for s in plan.strategies]}"
    )

    if plan.workers > 1 and len(tasks) > 1:
        chunksize = max(1, len(tasks) // (plan.workers * 4))
        with Pool(plan.workers) as pool:
            per_draw = pool.map(_evaluate_draw, tasks, chunksize=chunksize)
    else:
        per_draw = []
        step = max(1, len(tasks) // 10)
        for k, task in enumerate(tasks):
            per_draw.append(_evaluate_draw(task))
            if (k + 1) % step == 0:
                logger.info(f"已完成 {k + 1}/{len(tasks)} 个后验样本")

    rows, draw_level = [], {}
    for kind in plan.strategies:
        for metric in METRICS:
            values = np.array([d[kind.value][metric] for d in per_draw], dtype=float)
            draw_level[(kind.value, metric)] = values
            mean, lower, upper, n_draws = _summarise(values, plan.interval)
            rows.append(KpiRow(kind.value, metric, mean, lower, upper, n_draws))

    truncated = max(
        float(np.nanmean(draw_level[(k.value, "truncated_fraction")])) for k in plan.strategies
    )
    if truncated > 0:
        logger.warning(f"{truncated:.2%} 的暴发在结果确定前触及模拟上限")

    metadata = {
        "schema_version": SCHEMA_VERSION,
        "pathogen": profile.name,
        "r0": profile.r0,
        "p_asymptomatic": profile.p_asymptomatic,
        "lfd": {"beta0": lfd.beta0, "beta1": lfd.beta1, "shift": lfd.shift},
        "pcr": {"lod": pcr.lod, "sens_above_lod": pcr.sens_above_lod, "turnaround": pcr.turnaround},
        "n_posterior_draws": len(hypers),
        "n_replicates_per_draw": plan.n_replicates_per_draw,
        "pairing": plan.pairing,
        "master_seed": plan.master_seed,
        "interval": plan.interval,
        "conditioning": CONDITIONING,
    }
    logger.info(f"✅ 评估完成: {profile.name}")
    return KpiTable(pathogen=profile.name, rows=rows, draw_level=draw_level, metadata=metadata)


def _apply_axis(
    plan: EvaluationPlan, lfd: LfdModel, pcr: PcrModel, axis: str, value: float
) -> Tuple[EvaluationPlan, LfdModel, PcrModel]:
    if axis == "pcr_lod":
        return plan, lfd, replace(pcr, lod=value)
    if axis == "pcr_sensitivity":
        return plan, lfd, replace(pcr, sens_above_lod=value)
    if axis == "lfd_shift":
        return plan, replace(lfd, shift=value), pcr
    if axis == "r0":
        return replace(plan, pathogen=plan.pathogen.with_overrides(r0=value)), lfd, pcr
    if axis == "p_asymptomatic":
        pathogen = plan.pathogen.with_overrides(p_asymptomatic=value)
        return replace(plan, pathogen=pathogen), lfd, pcr
    raise ConfigError(f"未知扫描轴 '{axis}'", field="sweep.axis")


def sweep(
    base_plan: EvaluationPlan,
    grid: SweepGrid,
    lfd: LfdModel,
    pcr: PcrModel
) -> List[Tuple[float, KpiTable]]:
    """逐个取值评估，其余参数保持基线；每个单元的随机流由 (轴, 取值) 派生"""
    results = []
    for value in grid.values:
        plan, cell_lfd, cell_pcr = _apply_axis(base_plan, lfd, pcr, grid.axis, value)
        logger.info(f"扫描 {grid.axis} = {value:g}")
        table = evaluate(plan, cell_lfd, cell_pcr, salt=cell_salt(grid.axis, repr(value)))
        table.metadata["sweep"] = {"axis": grid.axis, "value": value}
        results.append((value, table))
    return results


# ==================== 报告输出 ====================

def _format_frame(frame: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g", na_rep="NaN")


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_kpi_csv(
    table: KpiTable, path, axis: Optional[str] = None, axis_value: Optional[float] = None
) -> Path:
    path = Path(path)
    _format_frame(table.to_frame(axis, axis_value), path)
    return path


def write_kpi_json(table: KpiTable, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "metadata": table.metadata,
        "rows": [
            {k: _json_safe(v) for k, v in row.__dict__.items()} for row in table.rows
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
    return path


def write_sweep(results: List[Tuple[float, KpiTable]], axis: str, out_dir) -> List[Path]:
    """每个单元一对 CSV/JSON，外加一个合并的长表"""
    out_dir = Path(out_dir)
    paths = []
    frames = []
    for value, table in results:
        stem = f"sweep_{axis}_{axis_value_label(value)}"
        paths.append(write_kpi_csv(table, out_dir / f"{stem}.csv", axis, value))
        paths.append(write_kpi_json(table, out_dir / f"{stem}.json"))
        frames.append(table.to_frame(axis, value))
    combined = out_dir / f"sweep_{axis}.csv"
    _format_frame(pd.concat(frames, ignore_index=True), combined)
    paths.append(combined)
    logger.info(f"📝 扫描结果已写入 {combined}")
    return paths
