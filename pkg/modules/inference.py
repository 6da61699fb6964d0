"""
轨迹模型推断

层次模型：
    每个病例 (p, d_i2p, d_p2c) ~ 群体分布(hyper)
    检出观测 y ~ N(f(tau), sigma_obs)
    阴性观测：f(tau) 的正态分布在 censor_threshold 以下的概率质量
以发病为锚点的数据（家庭研究）还要为每个病例推断潜伏期，
tau = 潜伏期 + 距发病天数。

采样器是自适应随机游走 Metropolis-within-Gibbs，分三块：
    每个病例的三元组（病例间条件独立，向量化同时更新）
    潜伏期（同上）
    群体参数与 sigma_obs（逐个坐标更新）
正参数在对数尺度上游走并加 Jacobian 项。步长只在 burn-in 期间
按递减步长朝目标接受率调整，之后冻结。
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import arviz as az
import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import gammaln, log_ndtr

from error_handler import DatasetError, InitializationError, ParameterDomainError
from modules.distributions import DelayDistribution
from modules.kinetics import (
    HYPER_NAMES, PopulationHyperparams, TrajectoryParams, sample_trajectories,
    viral_concentration_array
)

logger = logging.getLogger(__name__)

DATASET_COLUMNS = ["case_id", "t_anchor", "value", "censored"]
DATASET_SCHEMA = "observations/v1"
POSTERIOR_SCHEMA = "posterior/v1"

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
# 在对数尺度上更新的群体参数（mu_p 除外）
_LOG_SCALE_HYPER = np.array([name != "mu_p" for name in HYPER_NAMES])
_SIGMA_OBS = HYPER_NAMES.index("sigma_obs")

_TRUE_TOKENS = {"true", "1", "yes", "y", "t"}
_FALSE_TOKENS = {"false", "0", "no", "n", "f", ""}


class AnchorMode(str, Enum):
    INFECTION = "infection"
    ONSET = "onset"


@dataclass(frozen=True)
class ObservationRecord:
    case_id: str
    t_anchor: float
    value: Optional[float]
    censored: bool

    def __post_init__(self):
        if (self.value is not None) == self.censored:
            raise DatasetError(
                f"病例 {self.case_id}: value 与 censored 必须且只能有一个"
            )


@dataclass
class Dataset:
    anchor_mode: AnchorMode
    records: List[ObservationRecord]
    censor_threshold: float
    incubation_prior: Optional[DelayDistribution] = None

    def __post_init__(self):
        self.anchor_mode = AnchorMode(self.anchor_mode)
        if not self.records:
            raise DatasetError("no records")
        if self.anchor_mode == AnchorMode.ONSET and self.incubation_prior is None:
            raise DatasetError("以发病为锚点的数据集必须提供潜伏期先验")
        if not math.isfinite(self.censor_threshold):
            raise DatasetError("censor_threshold 必须是有限值")
        self._arrays = None

    @property
    def case_ids(self) -> List[str]:
        return list(dict.fromkeys(r.case_id for r in self.records))

    @property
    def n_cases(self) -> int:
        return len(self.case_ids)

    def arrays(self) -> "ObservationArrays":
        if self._arrays is None:
            index = {cid: i for i, cid in enumerate(self.case_ids)}
            self._arrays = ObservationArrays(
                case_index=np.array([index[r.case_id] for r in self.records], dtype=int),
                t_anchor=np.array([r.t_anchor for r in self.records], dtype=float),
                value=np.array(
                    [np.nan if r.value is None else r.value for r in self.records],
                    dtype=float,
                ),
                censored=np.array([r.censored for r in self.records], dtype=bool),
                n_cases=len(index),
            )
        return self._arrays


@dataclass(frozen=True)
class ObservationArrays:
    case_index: np.ndarray
    t_anchor: np.ndarray
    value: np.ndarray
    censored: np.ndarray
    n_cases: int


def simulate_observations(
    hyper: PopulationHyperparams,
    n_cases: int,
    times: Sequence[float],
    censor_threshold: float,
    rng: np.random.Generator,
    incubation: Optional[DelayDistribution] = None
) -> Dataset:
    """
    按层次模型生成合成数据集

    每个病例在 times 的每个时刻观测一次，低于 censor_threshold 的
    观测记为阴性（只保留 censored 标记）。

    给出 incubation 时 times 是距发病天数，每个病例另抽一个潜伏期，
    tau = 潜伏期 + times，得到以发病为锚点的数据集。
    """
    if n_cases < 1 or len(times) == 0:
        raise ParameterDomainError("n_cases >= 1 且 times 不能为空")
    p, d_i2p, d_p2c = sample_trajectories(hyper, n_cases, rng)
    t = np.asarray(times, dtype=float)
    if incubation is None:
        tau = np.broadcast_to(t[None, :], (n_cases, len(t)))
    else:
        tau = t[None, :] + np.asarray(incubation.sample(rng, size=n_cases))[:, None]
    mean = viral_concentration_array(tau, p[:, None], d_i2p[:, None], d_p2c[:, None])
    observed = mean + hyper.sigma_obs * rng.standard_normal(mean.shape)

    records = []
    for i in range(n_cases):
        for j, t_anchor in enumerate(t):
            value = float(observed[i, j])
            if value < censor_threshold:
                records.append(ObservationRecord(f"case{i + 1:03d}", float(t_anchor), None, True))
            else:
                records.append(ObservationRecord(f"case{i + 1:03d}", float(t_anchor), value, False))
    if incubation is None:
        return Dataset(AnchorMode.INFECTION, records, censor_threshold)
    return Dataset(AnchorMode.ONSET, records, censor_threshold, incubation)


def write_dataset(dataset: Dataset, path) -> Path:
    """按 observations/v1 格式写出数据集"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        "case_id": [r.case_id for r in dataset.records],
        "t_anchor": [r.t_anchor for r in dataset.records],
        "value": [r.value for r in dataset.records],
        "censored": ["true" if r.censored else "false" for r in dataset.records],
    })
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# schema: {DATASET_SCHEMA}\n")
        frame.to_csv(f, index=False, float_format="%.4f", na_rep="")
    return path


def ct_to_log10(ct: float, intercept: float, slope: float) -> float:
    """
    由标准曲线 Ct = intercept - slope * log10(浓度) 把 Ct 值换算成浓度

    用于把“Ct 40 = 检测限”之类的说明换算成 censor_threshold。
    """
    if slope <= 0:
        raise ParameterDomainError("标准曲线斜率必须为正")
    return (intercept - ct) / slope


def _parse_bool(token: str, row: int) -> bool:
    token = token.strip().lower()
    if token in _TRUE_TOKENS:
        return True
    if token in _FALSE_TOKENS:
        return False
    raise DatasetError(f"censored 无法解析: '{token}'", row=row)


def _parse_float(token: str, name: str, row: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DatasetError(f"{name} 不是数字: '{token}'", row=row)
    if not math.isfinite(value):
        raise DatasetError(f"{name} 必须是有限值", row=row)
    return value


def load_dataset(
    path,
    anchor_mode,
    censor_threshold: float,
    incubation_prior: Optional[DelayDistribution] = None,
    ct_curve: Optional[Tuple[float, float]] = None
) -> Dataset:
    """
    读取观测 CSV

    表头固定为 case_id,t_anchor,value,censored；可选的首行注释
    "# schema: observations/v1" 声明版本。阴性观测 value 留空、
    censored 为 true。以发病为锚点时 t_anchor 留空的病例（没有
    发病日期）整体剔除。

    给出 ct_curve = (intercept, slope) 时 value 列按 Ct 值读取并换算成
    log10 浓度；censor_threshold 始终是 log10 浓度。
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"数据文件不存在: {path}")
    anchor_mode = AnchorMode(anchor_mode)

    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    n_comments = 0
    for line in lines:
        if not line.startswith("#"):
            break
        n_comments += 1
        if line.lstrip("# ").startswith("schema:"):
            schema = line.split(":", 1)[1].strip()
            if schema != DATASET_SCHEMA:
                raise DatasetError(
                    f"不支持的数据格式版本 '{schema}'，期望 {DATASET_SCHEMA}",
                    row=n_comments,
                )

    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, comment="#", skip_blank_lines=True
        )
    except pd.errors.EmptyDataError:
        raise DatasetError("no records")
    if list(frame.columns) != DATASET_COLUMNS:
        raise DatasetError(
            f"表头必须是 {DATASET_COLUMNS}，实际 {list(frame.columns)}",
            row=n_comments + 1,
        )
    if frame.empty:
        raise DatasetError("no records")

    records = []
    skipped_cases = set()
    for idx, row in enumerate(frame.itertuples(index=False)):
        line_no = n_comments + idx + 2
        case_id = row.case_id.strip()
        if not case_id:
            raise DatasetError("case_id 为空", row=line_no)
        if not row.t_anchor.strip():
            if anchor_mode == AnchorMode.ONSET:
                skipped_cases.add(case_id)
                continue
            raise DatasetError("t_anchor 为空", row=line_no)
        t_anchor = _parse_float(row.t_anchor, "t_anchor", line_no)
        censored = _parse_bool(row.censored, line_no)
        has_value = bool(row.value.strip())
        if has_value and censored:
            raise DatasetError("同时给出了 value 和 censored 标记", row=line_no)
        if not has_value and not censored:
            raise DatasetError("缺少 value 且未标记为 censored", row=line_no)
        value = _parse_float(row.value, "value", line_no) if has_value else None
        if value is not None and ct_curve is not None:
            value = ct_to_log10(value, *ct_curve)
        records.append(ObservationRecord(case_id, t_anchor, value, censored))

    if skipped_cases:
        records = [r for r in records if r.case_id not in skipped_cases]
        logger.info(f"剔除 {len(skipped_cases)} 个没有发病日期的病例")
    if not records:
        raise DatasetError("no records")

    dataset = Dataset(anchor_mode, records, censor_threshold, incubation_prior)
    logger.info(
        f"✅ 读取数据集 {path.name}: {dataset.n_cases} 个病例, {len(records)} 条观测"
    )
    return dataset


@dataclass(frozen=True)
class NormalPrior:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ParameterDomainError(f"先验标准差必须为正: {self}")

    def logpdf(self, x: float) -> float:
        z = (x - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std) - _LOG_SQRT_2PI


@dataclass(frozen=True)
class PriorSet:
    """
    群体参数的正态先验（正参数隐含截断在 0 以上）

    sigma_obs 使用半正态先验，尺度为 sigma_obs_scale。
    """
    mu_p: NormalPrior
    sigma_p: NormalPrior
    alpha_i2p: NormalPrior
    beta_i2p: NormalPrior
    alpha_p2c: NormalPrior
    beta_p2c: NormalPrior
    sigma_obs_scale: float = 1.0

    def __post_init__(self):
        if not self.sigma_obs_scale > 0:
            raise ParameterDomainError("sigma_obs 先验尺度必须为正")

    def normal_priors(self) -> List[NormalPrior]:
        return [getattr(self, name) for name in HYPER_NAMES[:-1]]

    def logpdf(self, values: Sequence[float]) -> float:
        total = sum(
            prior.logpdf(x) for prior, x in zip(self.normal_priors(), values[:-1])
        )
        s = self.sigma_obs_scale
        sigma_obs = values[-1]
        total += -0.5 * (sigma_obs / s) ** 2 - math.log(s) - _LOG_SQRT_2PI + math.log(2)
        return total


PRIOR_PRESETS: Dict[str, PriorSet] = {
    "sars2-mid-turbinate": PriorSet(
        mu_p=NormalPrior(math.log(9), 3),
        sigma_p=NormalPrior(0, 3),
        alpha_i2p=NormalPrior(4, 2),
        beta_i2p=NormalPrior(4, 2),
        alpha_p2c=NormalPrior(6, 2),
        beta_p2c=NormalPrior(4, 2),
    ),
    "influenza": PriorSet(
        mu_p=NormalPrior(math.log(5), 1),
        sigma_p=NormalPrior(1, 1),
        alpha_i2p=NormalPrior(5, 3),
        beta_i2p=NormalPrior(4, 1),
        alpha_p2c=NormalPrior(7, 2),
        beta_p2c=NormalPrior(5, 1),
    ),
}


def get_prior_preset(name: str) -> PriorSet:
    try:
        return PRIOR_PRESETS[name]
    except KeyError:
        raise ParameterDomainError(
            f"未知先验预设 '{name}'，可选: {list(PRIOR_PRESETS.keys())}"
        )


@dataclass
class PosteriorDraws:
    draws: List[PopulationHyperparams]
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    chain: Optional[np.ndarray] = None
    case_summary: Optional[pd.DataFrame] = None

    def __post_init__(self):
        if not self.draws:
            raise ParameterDomainError("后验样本不能为空")

    def __len__(self) -> int:
        return len(self.draws)

    def __getitem__(self, i: int) -> PopulationHyperparams:
        return self.draws[i]

    def as_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([d.to_dict() for d in self.draws], columns=list(HYPER_NAMES))
        if self.chain is not None:
            frame["chain"] = self.chain
        return frame


# ==================== 对数密度 ====================

def _lognormal_logpdf(x, mu, sigma):
    logx = np.log(x)
    return -logx - math.log(sigma) - _LOG_SQRT_2PI - (logx - mu) ** 2 / (2 * sigma ** 2)


def _gamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


def _population_logpdf(p, d_i2p, d_p2c, hyper: np.ndarray) -> np.ndarray:
    """每个病例三元组在群体分布下的对数密度"""
    mu_p, sigma_p, a_i, b_i, a_c, b_c = hyper[:6]
    return (
        _lognormal_logpdf(p, mu_p, sigma_p)
        + _gamma_logpdf(d_i2p, a_i, b_i)
        + _gamma_logpdf(d_p2c, a_c, b_c)
    )


def _observation_loglik(
    obs: ObservationArrays,
    p, d_i2p, d_p2c,
    incubation: Optional[np.ndarray],
    sigma_obs: float,
    threshold: float
) -> np.ndarray:
    """每条观测的对数似然"""
    idx = obs.case_index
    tau = obs.t_anchor if incubation is None else incubation[idx] + obs.t_anchor
    mean = viral_concentration_array(tau, p[idx], d_i2p[idx], d_p2c[idx])
    z_obs = (obs.value - mean) / sigma_obs
    detected = -0.5 * z_obs ** 2 - math.log(sigma_obs) - _LOG_SQRT_2PI
    censored = log_ndtr((threshold - mean) / sigma_obs)
    return np.where(obs.censored, censored, detected)


def _case_loglik(obs, p, d_i2p, d_p2c, incubation, sigma_obs, threshold) -> np.ndarray:
    per_obs = _observation_loglik(obs, p, d_i2p, d_p2c, incubation, sigma_obs, threshold)
    return np.bincount(obs.case_index, weights=per_obs, minlength=obs.n_cases)


def log_posterior_terms(
    dataset: Dataset,
    case_params: Sequence[TrajectoryParams],
    latent_incubations: Optional[Sequence[float]],
    hyper: PopulationHyperparams,
    priors: PriorSet
) -> Dict[str, float]:
    """
    对数后验的各组成部分

    Returns:
        {'detected', 'censored', 'population', 'incubation', 'hyperprior'}
        约束不满足时对应项为 -inf
    """
    n_cases = dataset.n_cases
    if len(case_params) != n_cases:
        raise ParameterDomainError(
            f"case_params 数量 {len(case_params)} 与病例数 {n_cases} 不一致"
        )
    onset = dataset.anchor_mode == AnchorMode.ONSET
    if onset and (latent_incubations is None or len(latent_incubations) != n_cases):
        raise ParameterDomainError("以发病为锚点时需要每个病例的潜伏期")

    p = np.array([c.p for c in case_params])
    d_i2p = np.array([c.d_i2p for c in case_params])
    d_p2c = np.array([c.d_p2c for c in case_params])
    incubation = np.asarray(latent_incubations, dtype=float) if onset else None
    hyper_vec = hyper.as_array()

    terms = {"detected": 0.0, "censored": 0.0, "population": 0.0,
             "incubation": 0.0, "hyperprior": 0.0}
    if onset and np.any(incubation <= 0):
        terms["incubation"] = -np.inf
        return terms

    obs = dataset.arrays()
    per_obs = _observation_loglik(
        obs, p, d_i2p, d_p2c, incubation, hyper.sigma_obs, dataset.censor_threshold
    )
    terms["detected"] = float(per_obs[~obs.censored].sum())
    terms["censored"] = float(per_obs[obs.censored].sum())
    terms["population"] = float(_population_logpdf(p, d_i2p, d_p2c, hyper_vec).sum())
    if onset:
        terms["incubation"] = float(np.sum(dataset.incubation_prior.logpdf(incubation)))
    terms["hyperprior"] = float(priors.logpdf(hyper_vec))
    return terms


def log_posterior(
    dataset: Dataset,
    case_params: Sequence[TrajectoryParams],
    latent_incubations: Optional[Sequence[float]],
    hyper: PopulationHyperparams,
    priors: PriorSet
) -> float:
    """未归一化的对数后验；约束不满足时返回 -inf"""
    total = sum(log_posterior_terms(
        dataset, case_params, latent_incubations, hyper, priors
    ).values())
    return float(total) if np.isfinite(total) else -np.inf


# ==================== 采样器 ====================

class AdaptiveRandomWalk:
    """
    向量化的自适应随机游走 Metropolis 更新

    n_units 个互相条件独立的单元各自接受/拒绝，各自维护步长。
    adapt=True 时按 Robbins-Monro 递减步长把接受率推向 target。
    """

    def __init__(
        self,
        n_units: int,
        dim: int,
        target: float,
        initial_scale: float = 0.1,
        exponent: float = 0.6
    ):
        self.dim = dim
        self.target = target
        self.exponent = exponent
        self.log_scale = np.full(n_units, math.log(initial_scale))
        self.n_proposed = 0
        self.n_accepted = np.zeros(n_units)
        self._adapt_step = 0

    def reset_counts(self) -> None:
        self.n_proposed = 0
        self.n_accepted[:] = 0

    def step(self, x, current_logp, log_target, rng, adapt: bool = False):
        """
        Args:
            x: (n_units, dim) 当前状态
            current_logp: (n_units,) 当前对数目标
            log_target: 函数，(n_units, dim) -> (n_units,)

        Returns:
            (新状态, 新对数目标, 接受掩码)
        """
        scale = np.exp(self.log_scale)[:, None]
        proposal = x + scale * rng.standard_normal(x.shape)
        proposal_logp = log_target(proposal)
        log_u = np.log(rng.random(len(current_logp)))
        with np.errstate(invalid="ignore"):
            accepted = log_u < proposal_logp - current_logp
        accepted &= np.isfinite(proposal_logp)

        x = np.where(accepted[:, None], proposal, x)
        current_logp = np.where(accepted, proposal_logp, current_logp)
        self.n_proposed += 1
        self.n_accepted += accepted

        if adapt:
            self._adapt_step += 1
            gain = self._adapt_step ** -self.exponent
            self.log_scale += gain * (accepted.astype(float) - self.target)
        return x, current_logp, accepted

    @property
    def acceptance_rate(self) -> float:
        if self.n_proposed == 0:
            return float("nan")
        return float(self.n_accepted.mean() / self.n_proposed)


@dataclass(frozen=True)
class FitSettings:
    n_chains: int = 4
    n_iterations: int = 100_000
    burn_in_fraction: float = 0.5
    n_retained: int = 1000
    target_accept_scalar: float = 0.44
    target_accept_block: float = 0.3
    acceptance_band: Tuple[float, float] = (0.2, 0.5)
    ess_floor: float = 100.0
    adapt_exponent: float = 0.6
    workers: int = 1

    def __post_init__(self):
        if self.n_chains < 1 or self.n_iterations < 2 or self.n_retained < 1:
            raise ParameterDomainError("链数、迭代数、保留样本数必须为正")
        if not 0 <= self.burn_in_fraction < 1:
            raise ParameterDomainError("burn_in_fraction 必须在 [0, 1) 内")
        per_chain = self.n_iterations - self.burn_in
        quota = -(-self.n_retained // self.n_chains)
        if per_chain < quota:
            raise ParameterDomainError(
                f"burn-in 之后每条链只有 {per_chain} 个样本，"
                f"不足以保留 {self.n_retained} 个后验样本"
            )
        low, high = self.acceptance_band
        if not 0 < low < high < 1:
            raise ParameterDomainError("acceptance_band 必须满足 0 < low < high < 1")

    @property
    def burn_in(self) -> int:
        return int(self.n_iterations * self.burn_in_fraction)


class _ChainState:
    """一条链的当前状态（正参数存对数）"""

    def __init__(self, dataset: Dataset, priors: PriorSet, rng: np.random.Generator):
        self.dataset = dataset
        self.priors = priors
        self.obs = dataset.arrays()
        self.onset = dataset.anchor_mode == AnchorMode.ONSET
        self.threshold = dataset.censor_threshold
        self._initialise(rng)

    def _initialise(self, rng):
        obs = self.obs
        n = obs.n_cases
        priors = self.priors
        prior_i2p = max(priors.alpha_i2p.mean, 0.5) / max(priors.beta_i2p.mean, 0.5)

        if self.onset:
            incubation = np.full(n, self.dataset.incubation_prior.mean)
        else:
            incubation = None
        tau = obs.t_anchor if incubation is None else incubation[obs.case_index] + obs.t_anchor

        p0 = np.full(n, max(math.exp(priors.mu_p.mean), 1.0))
        d_i2p0 = np.full(n, prior_i2p)
        d_p2c0 = np.full(n, 2.0 * prior_i2p)
        for i in range(n):
            mask = (obs.case_index == i) & ~obs.censored
            if not mask.any():
                continue
            values, taus = obs.value[mask], tau[mask]
            k = int(np.argmax(values))
            p0[i] = max(values[k], 1.0)
            if taus[k] > 0:
                d_i2p0[i] = taus[k]
            d_p2c0[i] = max(taus.max() - d_i2p0[i] + 1.0, 1.0)

        jitter = lambda size: 0.05 * rng.standard_normal(size)
        self.case_z = np.column_stack([
            np.log(p0) + jitter(n), np.log(d_i2p0) + jitter(n), np.log(d_p2c0) + jitter(n)
        ])
        self.incubation_z = (np.log(incubation) + jitter(n)) if self.onset else None

        def gamma_moments(x):
            m, v = x.mean(), max(x.var(), 0.25 * x.mean() ** 2, 1e-3)
            return m * m / v, m / v

        log_p0 = np.log(p0)
        a_i, b_i = gamma_moments(d_i2p0)
        a_c, b_c = gamma_moments(d_p2c0)
        self.hyper = np.array([
            log_p0.mean(), max(log_p0.std(), 0.1), a_i, b_i, a_c, b_c, 1.0
        ])

        terms = self._terms()
        for name, value in terms.items():
            if not np.isfinite(value):
                raise InitializationError(name, f"值为 {value}")
        self.case_loglik = _case_loglik(
            obs, *self.case_values(), self.incubation, self.hyper[_SIGMA_OBS], self.threshold
        )

    @property
    def incubation(self) -> Optional[np.ndarray]:
        return None if self.incubation_z is None else np.exp(self.incubation_z)

    def case_values(self):
        values = np.exp(self.case_z)
        return values[:, 0], values[:, 1], values[:, 2]

    def _terms(self) -> Dict[str, float]:
        p, d_i2p, d_p2c = self.case_values()
        return log_posterior_terms(
            self.dataset,
            [TrajectoryParams(*row) for row in zip(p, d_i2p, d_p2c)],
            None if self.incubation is None else list(self.incubation),
            PopulationHyperparams.from_array(self.hyper),
            self.priors,
        )


def _hyper_log_target(hyper, case_values, priors, loglik_total) -> float:
    """群体参数坐标更新用的对数目标（对数尺度坐标含 Jacobian）"""
    if np.any(hyper[_LOG_SCALE_HYPER] <= 0):
        return -np.inf
    population = _population_logpdf(*case_values, hyper).sum()
    jacobian = np.log(hyper[_LOG_SCALE_HYPER]).sum()
    return float(population + priors.logpdf(hyper) + jacobian + loglik_total)


def _run_chain(args) -> Dict[str, Any]:
    """跑一条链；返回 burn-in 之后的群体参数轨迹和诊断量"""
    dataset, priors, settings, seed, chain_id = args
    rng = np.random.default_rng(seed)
    state = _ChainState(dataset, priors, rng)
    obs = state.obs
    n_cases = obs.n_cases
    n_hyper = len(HYPER_NAMES)

    case_rw = AdaptiveRandomWalk(
        n_cases, 3, settings.target_accept_block, exponent=settings.adapt_exponent
    )
    incubation_rw = AdaptiveRandomWalk(
        n_cases, 1, settings.target_accept_scalar, exponent=settings.adapt_exponent
    ) if state.onset else None
    hyper_rw = [
        AdaptiveRandomWalk(1, 1, settings.target_accept_scalar, exponent=settings.adapt_exponent)
        for _ in range(n_hyper)
    ]

    burn_in = settings.burn_in
    n_keep = settings.n_iterations - burn_in
    trace = np.empty((n_keep, n_hyper))
    case_sum = np.zeros((n_cases, 3))

    def population_z(z):
        values = np.exp(z)
        return _population_logpdf(values[:, 0], values[:, 1], values[:, 2], state.hyper)

    logger.info(f"链 {chain_id} 开始: {settings.n_iterations} 次迭代, burn-in {burn_in}")
    for it in range(settings.n_iterations):
        adapt = it < burn_in
        if it == burn_in:
            for rw in [case_rw, incubation_rw, *hyper_rw]:
                if rw is not None:
                    rw.reset_counts()
        sigma_obs = state.hyper[_SIGMA_OBS]

        # 病例三元组
        def case_target(z):
            values = np.exp(z)
            loglik = _case_loglik(
                obs, values[:, 0], values[:, 1], values[:, 2],
                state.incubation, sigma_obs, state.threshold
            )
            return loglik + population_z(z) + z.sum(axis=1)

        current = state.case_loglik + population_z(state.case_z) + state.case_z.sum(axis=1)
        state.case_z, _, _ = case_rw.step(state.case_z, current, case_target, rng, adapt)
        case_values = state.case_values()

        # 潜伏期
        if incubation_rw is not None:
            prior = dataset.incubation_prior

            def incubation_target(z):
                incubation = np.exp(z[:, 0])
                loglik = _case_loglik(
                    obs, *case_values, incubation, sigma_obs, state.threshold
                )
                return loglik + prior.logpdf(incubation) + z[:, 0]

            z = state.incubation_z[:, None]
            current = incubation_target(z)
            z, _, _ = incubation_rw.step(z, current, incubation_target, rng, adapt)
            state.incubation_z = z[:, 0]

        state.case_loglik = _case_loglik(
            obs, *case_values, state.incubation, sigma_obs, state.threshold
        )
        loglik_total = state.case_loglik.sum()

        # 群体参数逐坐标更新（对数尺度坐标在 u 空间游走）
        u = np.where(_LOG_SCALE_HYPER, np.log(state.hyper), state.hyper)
        for j in range(n_hyper):
            def to_hyper(u_vec):
                return np.where(_LOG_SCALE_HYPER, np.exp(u_vec), u_vec)

            def hyper_target(x, j=j):
                u_new = u.copy()
                u_new[j] = x[0, 0]
                hyper = to_hyper(u_new)
                total = loglik_total
                if j == _SIGMA_OBS:
                    total = _case_loglik(
                        obs, *case_values, state.incubation, hyper[_SIGMA_OBS],
                        state.threshold,
                    ).sum()
                return np.array([_hyper_log_target(hyper, case_values, priors, total)])

            x = np.array([[u[j]]])
            current = hyper_target(x)
            x, _, accepted = hyper_rw[j].step(x, current, hyper_target, rng, adapt)
            if accepted[0]:
                u[j] = x[0, 0]
                state.hyper = to_hyper(u)
                if j == _SIGMA_OBS:
                    state.case_loglik = _case_loglik(
                        obs, *case_values, state.incubation, state.hyper[_SIGMA_OBS],
                        state.threshold,
                    )
                    loglik_total = state.case_loglik.sum()

        if not adapt:
            trace[it - burn_in] = state.hyper
            case_sum += np.column_stack(case_values)

    acceptance = {"case": case_rw.acceptance_rate}
    if incubation_rw is not None:
        acceptance["incubation"] = incubation_rw.acceptance_rate
    for name, rw in zip(HYPER_NAMES, hyper_rw):
        acceptance[name] = rw.acceptance_rate
    logger.info(f"链 {chain_id} 完成, 接受率: {json.dumps(acceptance)}")
    return {
        "trace": trace,
        "acceptance": acceptance,
        "case_mean": case_sum / max(n_keep, 1),
    }


# ==================== 诊断 ====================

def chain_diagnostics(traces: np.ndarray) -> Tuple[Dict[str, float], Dict[str, float]]:
    """
    每个群体参数的 bulk 有效样本量与秩归一化 split R-hat

    Args:
        traces: (n_chains, n_draws, n_params)，参数顺序同 HYPER_NAMES
    """
    posterior = az.convert_to_dataset(
        {name: traces[:, :, j] for j, name in enumerate(HYPER_NAMES)}
    )
    ess = az.ess(posterior)
    rhat = az.rhat(posterior)
    return (
        {name: float(ess[name]) for name in HYPER_NAMES},
        {name: float(rhat[name]) for name in HYPER_NAMES},
    )


def _thin_indices(n_available: int, quota: int) -> np.ndarray:
    return np.unique(np.linspace(0, n_available - 1, quota).round().astype(int))


def fit(
    dataset: Dataset,
    priors: PriorSet,
    settings: FitSettings,
    rng: np.random.Generator
) -> PosteriorDraws:
    """
    MCMC 拟合群体参数

    每条链的种子由 rng 统一抽出，链可并行执行，合并顺序按链编号，
    所以结果与 worker 数无关。返回恰好 n_retained 个稀疏化后的样本。
    """
    seeds = rng.integers(0, 2**32 - 1, size=settings.n_chains)
    tasks = [(dataset, priors, settings, int(seed), c) for c, seed in enumerate(seeds)]
    if settings.workers > 1 and settings.n_chains > 1:
        with Pool(min(settings.workers, settings.n_chains)) as pool:
            results = pool.map(_run_chain, tasks)
    else:
        results = [_run_chain(task) for task in tasks]

    base, extra = divmod(settings.n_retained, settings.n_chains)
    draws, chain_ids = [], []
    for c, result in enumerate(results):
        quota = base + (1 if c < extra else 0)
        if quota == 0:
            continue
        idx = _thin_indices(len(result["trace"]), quota)
        for row in result["trace"][idx]:
            draws.append(PopulationHyperparams.from_array(row))
            chain_ids.append(c)

    traces = np.stack([r["trace"] for r in results])   # (chains, draws, params)
    ess, rhat = chain_diagnostics(traces)
    acceptance = [r["acceptance"] for r in results]

    warnings = []
    low, high = settings.acceptance_band
    for c, rates in enumerate(acceptance):
        for block, rate in rates.items():
            if not low <= rate <= high:
                warnings.append(f"链 {c} 的 {block} 接受率 {rate:.3f} 不在 [{low}, {high}] 内")
    for name, value in ess.items():
        if value < settings.ess_floor:
            warnings.append(f"{name} 的有效样本量 {value:.1f} 低于 {settings.ess_floor}")
    for warning in warnings:
        logger.warning(warning)

    case_mean = np.mean([r["case_mean"] for r in results], axis=0)
    case_summary = pd.DataFrame({
        "case_id": dataset.case_ids,
        "p": case_mean[:, 0],
        "d_i2p": case_mean[:, 1],
        "d_p2c": case_mean[:, 2],
    })

    diagnostics = {
        "n_chains": settings.n_chains,
        "n_iterations": settings.n_iterations,
        "burn_in": settings.burn_in,
        "n_retained": len(draws),
        "acceptance": acceptance,
        "ess": ess,
        "rhat": rhat,
        "warnings": warnings,
    }
    logger.info(f"✅ 拟合完成: 保留 {len(draws)} 个后验样本, {len(warnings)} 条警告")
    return PosteriorDraws(
        draws=draws,
        diagnostics=diagnostics,
        chain=np.array(chain_ids),
        case_summary=case_summary,
    )


def sample_prior(priors: PriorSet, n: int, rng: np.random.Generator) -> PosteriorDraws:
    """从先验抽群体参数（先验预测模式），正参数用截断在 0 以上的正态"""
    if n < 1:
        raise ParameterDomainError("n 必须 >= 1")
    columns = []
    for name, prior in zip(HYPER_NAMES[:-1], priors.normal_priors()):
        if name == "mu_p":
            columns.append(rng.normal(prior.mean, prior.std, size=n))
        else:
            lower = (0.0 - prior.mean) / prior.std
            columns.append(stats.truncnorm.rvs(
                lower, np.inf, loc=prior.mean, scale=prior.std, size=n, random_state=rng
            ))
    columns.append(np.abs(rng.normal(0.0, priors.sigma_obs_scale, size=n)))
    values = np.column_stack(columns)
    # 截断正态的下界样本可能正好为 0
    values[:, 1:] = np.maximum(values[:, 1:], 1e-6)
    return PosteriorDraws(
        draws=[PopulationHyperparams.from_array(row) for row in values],
        diagnostics={"source": "prior", "n_retained": n},
    )


# ==================== 后验文件 ====================

def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".diagnostics.json")


def write_posterior(draws: PosteriorDraws, path) -> Tuple[Path, Path]:
    """写出后验样本 CSV 和诊断 JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    draws.as_frame().to_csv(path, index=False, float_format="%.12g")
    sidecar = _sidecar_path(path)
    payload = {"schema": POSTERIOR_SCHEMA, **draws.diagnostics}
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True, default=float)
    if draws.case_summary is not None:
        draws.case_summary.to_csv(
            path.with_name(path.stem + ".cases.csv"), index=False, float_format="%.12g"
        )
    return path, sidecar


def load_posterior(path) -> PosteriorDraws:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"后验文件不存在: {path}")
    frame = pd.read_csv(path)
    missing = [name for name in HYPER_NAMES if name not in frame.columns]
    if missing:
        raise DatasetError(f"后验文件缺少列: {missing}")
    draws = [
        PopulationHyperparams.from_array(row)
        for row in frame[list(HYPER_NAMES)].to_numpy()
    ]
    diagnostics = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as f:
            diagnostics = json.load(f)
    chain = frame["chain"].to_numpy() if "chain" in frame.columns else None
    return PosteriorDraws(draws=draws, diagnostics=diagnostics, chain=chain)
