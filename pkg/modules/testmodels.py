"""
检测灵敏度模型

LFD：log10 浓度上的 logistic 曲线，shift 把整条曲线左右平移
（shift = +1 相当于样本中病毒多 10 倍，检测更灵敏）。
PCR：检测限（LoD）以上固定灵敏度，以下为 0，结果有固定回报延迟。

logistic 系数没有默认值，必须在运行配置中给出（已发表的中心估计
请从原始 LFD 灵敏度研究中获取）。
"""
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from error_handler import ParameterDomainError
from modules.kinetics import (
    PopulationHyperparams, sample_trajectories, viral_concentration_array
)

DEFAULT_PCR_LOD = math.log10(500)


@dataclass(frozen=True)
class LfdModel:
    beta0: float
    beta1: float
    shift: float = 0.0

    def __post_init__(self):
        for name in ("beta0", "beta1", "shift"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterDomainError(f"LFD 参数 {name} 必须是有限值")
        if self.beta1 <= 0:
            raise ParameterDomainError(
                f"LFD 斜率 beta1 必须为正，实际 {self.beta1}"
            )


@dataclass(frozen=True)
class PcrModel:
    lod: float = DEFAULT_PCR_LOD
    sens_above_lod: float = 0.95
    turnaround: float = 2.0

    def __post_init__(self):
        if not math.isfinite(self.lod):
            raise ParameterDomainError("PCR 检测限必须是有限值")
        if not 0.0 <= self.sens_above_lod <= 1.0:
            raise ParameterDomainError(
                f"PCR 灵敏度必须在 [0, 1] 内，实际 {self.sens_above_lod}"
            )
        if not (math.isfinite(self.turnaround) and self.turnaround >= 0):
            raise ParameterDomainError(
                f"PCR 回报延迟必须 >= 0，实际 {self.turnaround}"
            )


def lfd_sensitivity(v: float, model: LfdModel) -> float:
    """浓度 v 下 LFD 阳性概率；v <= 0 视为无病毒"""
    if v <= 0:
        return 0.0
    return float(expit(model.beta0 + model.beta1 * (v + model.shift)))


def pcr_positive_prob(v: float, model: PcrModel) -> float:
    """浓度 v 下 PCR 阳性概率；恰好等于 LoD 算可检出"""
    if v < model.lod:
        return 0.0
    return model.sens_above_lod


def lfd_sensitivity_array(v, model: LfdModel) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.where(v > 0, expit(model.beta0 + model.beta1 * (v + model.shift)), 0.0)


def pcr_positive_prob_array(v, model: PcrModel) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.where(v >= model.lod, model.sens_above_lod, 0.0)


def sample_result(prob: float, rng: np.random.Generator) -> bool:
    """以概率 prob 返回阳性"""
    return result_from_uniform(prob, rng.random())


def result_from_uniform(prob: float, u: float) -> bool:
    """
    用预先抽好的均匀数判定结果

    各策略共享同一个 u 时即为公共随机数；u 取自 [0, 1)，
    所以 prob = 0 恒阴、prob = 1 恒阳。
    """
    return u < prob


def sensitivity_over_time(
    draws: Sequence[PopulationHyperparams],
    lfd: LfdModel,
    pcr: PcrModel,
    tau_grid: Sequence[float],
    n_per_draw: int,
    rng: np.random.Generator,
    quantiles: Sequence[float] = (0.025, 0.5, 0.975)
) -> pd.DataFrame:
    """
    感染后各时刻的浓度与检测灵敏度分布

    每个后验样本抽 n_per_draw 条轨迹，汇总后按时刻给出分位数和均值。

    Returns:
        长表: tau, quantity(concentration/lfd/pcr), mean, q* 列
    """
    if n_per_draw < 1 or len(draws) == 0:
        raise ParameterDomainError("需要至少一个后验样本和 n_per_draw >= 1")
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(tau < 0):
        raise ParameterDomainError("tau_grid 必须 >= 0")

    blocks = [sample_trajectories(hyper, n_per_draw, rng) for hyper in draws]
    p = np.concatenate([b[0] for b in blocks])[:, None]
    d_i2p = np.concatenate([b[1] for b in blocks])[:, None]
    d_p2c = np.concatenate([b[2] for b in blocks])[:, None]
    conc = viral_concentration_array(tau[None, :], p, d_i2p, d_p2c)

    quantities = {
        "concentration": np.maximum(conc, 0.0),
        "lfd": lfd_sensitivity_array(conc, lfd),
        "pcr": pcr_positive_prob_array(conc, pcr),
    }
    rows = []
    for name, values in quantities.items():
        qs = np.quantile(values, quantiles, axis=0)
        means = values.mean(axis=0)
        for j, t in enumerate(tau):
            row = {"tau": t, "quantity": name, "mean": means[j]}
            for q, col in zip(quantiles, qs):
                row[f"q{q:g}"] = col[j]
            rows.append(row)
    return pd.DataFrame(rows)
