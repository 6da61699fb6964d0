"""
病毒浓度轨迹

log10 拷贝数/ml 尺度上的两段线性轨迹：感染后线性上升到峰值，
再线性下降到清除。每个病例的轨迹由三元组 (p, d_i2p, d_p2c) 确定，
三元组从群体分布中独立抽样：
    p ~ lognormal(mu_p, sigma_p^2)
    d_i2p ~ gamma(alpha_i2p, rate=beta_i2p)
    d_p2c ~ gamma(alpha_p2c, rate=beta_p2c)
"""
import math
from dataclasses import dataclass, fields
from typing import Tuple

import numpy as np

from error_handler import ParameterDomainError

HYPER_NAMES = (
    "mu_p", "sigma_p",
    "alpha_i2p", "beta_i2p",
    "alpha_p2c", "beta_p2c",
    "sigma_obs",
)

MIN_POSITIVE = 1e-9


@dataclass(frozen=True)
class TrajectoryParams:
    """单个病例的轨迹参数"""
    p: float        # 峰值浓度，log10 拷贝数/ml
    d_i2p: float    # 感染到峰值，天
    d_p2c: float    # 峰值到清除，天

    def __post_init__(self):
        for name in ("p", "d_i2p", "d_p2c"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterDomainError(
                    f"轨迹参数 {name} 必须为正的有限值，实际 {value}"
                )

    @property
    def clearance_time(self) -> float:
        return self.d_i2p + self.d_p2c


@dataclass(frozen=True)
class PopulationHyperparams:
    """群体分布参数和观测噪声"""
    mu_p: float
    sigma_p: float
    alpha_i2p: float
    beta_i2p: float
    alpha_p2c: float
    beta_p2c: float
    sigma_obs: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, f.name)) for f in fields(self)):
            raise ParameterDomainError(f"群体参数必须是有限值: {self}")
        for name in HYPER_NAMES[1:]:
            if getattr(self, name) <= 0:
                raise ParameterDomainError(
                    f"群体参数 {name} 必须为正，实际 {getattr(self, name)}"
                )

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in HYPER_NAMES])

    @classmethod
    def from_array(cls, values) -> "PopulationHyperparams":
        return cls(*(float(v) for v in values))

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in HYPER_NAMES}


def viral_concentration(tau: float, params: TrajectoryParams) -> float:
    """
    感染后 tau 天的病毒浓度（log10 拷贝数/ml）

    不做截断：清除之后返回负值，由调用方按各自约定处理。
    """
    if not (tau >= 0):
        raise ParameterDomainError(f"感染时长 tau 必须 >= 0，实际 {tau}")
    if tau <= params.d_i2p:
        return tau * params.p / params.d_i2p
    return params.p - (tau - params.d_i2p) * params.p / params.d_p2c


def viral_concentration_array(tau, p, d_i2p, d_p2c) -> np.ndarray:
    """
    向量化版本，供似然计算使用

    tau < 0 时沿用上升段的线性延长（结果为负，即不可检出）。
    """
    tau = np.asarray(tau, dtype=float)
    rise = tau * p / d_i2p
    fall = p - (tau - d_i2p) * p / d_p2c
    return np.where(tau <= d_i2p, rise, fall)


def sample_trajectory(
    hyper: PopulationHyperparams,
    rng: np.random.Generator
) -> TrajectoryParams:
    """从群体分布抽取一个病例的轨迹参数"""
    # 形状参数很小时 gamma 抽样可能下溢为 0
    return TrajectoryParams(
        p=max(rng.lognormal(hyper.mu_p, hyper.sigma_p), MIN_POSITIVE),
        d_i2p=max(rng.gamma(hyper.alpha_i2p, 1.0 / hyper.beta_i2p), MIN_POSITIVE),
        d_p2c=max(rng.gamma(hyper.alpha_p2c, 1.0 / hyper.beta_p2c), MIN_POSITIVE),
    )


def sample_trajectories(
    hyper: PopulationHyperparams,
    n: int,
    rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """批量抽样，返回 (p, d_i2p, d_p2c) 三个数组"""
    p = np.maximum(rng.lognormal(hyper.mu_p, hyper.sigma_p, size=n), MIN_POSITIVE)
    d_i2p = np.maximum(rng.gamma(hyper.alpha_i2p, 1.0 / hyper.beta_i2p, size=n), MIN_POSITIVE)
    d_p2c = np.maximum(rng.gamma(hyper.alpha_p2c, 1.0 / hyper.beta_p2c, size=n), MIN_POSITIVE)
    return p, d_i2p, d_p2c
