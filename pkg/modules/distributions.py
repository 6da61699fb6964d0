"""
延迟分布

潜伏期、代际间隔等延迟的分布描述，支持 gamma（shape/rate 参数化）
和 lognormal（logmean/logsd）两种族。推断模块用它计算对数密度，
暴发模拟模块用它抽样。
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy import stats

from error_handler import ParameterDomainError

FAMILIES = ("gamma", "lognormal")


@dataclass(frozen=True)
class DelayDistribution:
    """
    延迟分布描述

    gamma: a = shape, b = rate（均值 = shape / rate）
    lognormal: a = logmean, b = logsd
    """
    family: str
    a: float
    b: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterDomainError(
                f"未知分布族 '{self.family}'，可选: {list(FAMILIES)}"
            )
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ParameterDomainError(f"分布参数必须是有限值: {self}")
        if self.b <= 0 or (self.family == "gamma" and self.a <= 0):
            raise ParameterDomainError(f"分布参数必须为正: {self}")

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "DelayDistribution":
        return cls("gamma", float(shape), float(rate))

    @classmethod
    def lognormal(cls, logmean: float, logsd: float) -> "DelayDistribution":
        return cls("lognormal", float(logmean), float(logsd))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DelayDistribution":
        family = data.get("family")
        if family == "gamma":
            return cls.gamma(data["shape"], data["rate"])
        if family == "lognormal":
            return cls.lognormal(data["logmean"], data["logsd"])
        raise ParameterDomainError(
            f"未知分布族 '{family}'，可选: {list(FAMILIES)}"
        )

    def to_dict(self) -> Dict[str, Any]:
        if self.family == "gamma":
            return {"family": "gamma", "shape": self.a, "rate": self.b}
        return {"family": "lognormal", "logmean": self.a, "logsd": self.b}

    @property
    def mean(self) -> float:
        if self.family == "gamma":
            return self.a / self.b
        return math.exp(self.a + self.b ** 2 / 2)

    @property
    def variance(self) -> float:
        if self.family == "gamma":
            return self.a / self.b ** 2
        return (math.exp(self.b ** 2) - 1) * math.exp(2 * self.a + self.b ** 2)

    def sample(
        self,
        rng: np.random.Generator,
        size: Optional[int] = None
    ) -> Union[float, np.ndarray]:
        if self.family == "gamma":
            return rng.gamma(self.a, 1.0 / self.b, size=size)
        return rng.lognormal(self.a, self.b, size=size)

    def logpdf(self, x):
        """对数密度；x <= 0 处为 -inf"""
        x = np.asarray(x, dtype=float)
        if self.family == "gamma":
            return stats.gamma.logpdf(x, a=self.a, scale=1.0 / self.b)
        return stats.lognorm.logpdf(x, s=self.b, scale=math.exp(self.a))
