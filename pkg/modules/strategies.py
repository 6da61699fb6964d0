"""
检测策略

只检测按发病时刻排序的前五个有症状病例。五种策略：
    AllLfd                 发病即做 LFD，首个阳性即检出
    AllPcr                 发病即送 PCR，turnaround 后出结果
    Concurrent             先 LFD，阴性立即补做 PCR
    LfdConfirmPcr          LFD 阳性后做确认 PCR，期间继续 LFD
    LfdRetestPcrIfAllNeg   五个 LFD 全阴时，五人同时复检 PCR

LFD 结果即时返回。每次检测的阳性与否由预先抽好的均匀数决定，
同一病例同一类检测在不同策略下共用一个均匀数（公共随机数）。
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from error_handler import ConfigError
from modules.kinetics import viral_concentration
from modules.outbreak import InfectionRecord, InfectionStream
from modules.testmodels import (
    LfdModel, PcrModel, lfd_sensitivity, pcr_positive_prob, result_from_uniform
)

logger = logging.getLogger(__name__)

PANEL_SIZE = 5


class StrategyKind(str, Enum):
    ALL_LFD = "AllLfd"
    ALL_PCR = "AllPcr"
    CONCURRENT = "Concurrent"
    LFD_CONFIRM_PCR = "LfdConfirmPcr"
    LFD_RETEST_PCR_IF_ALL_NEG = "LfdRetestPcrIfAllNeg"

    @classmethod
    def parse(cls, name: str) -> "StrategyKind":
        for kind in cls:
            if kind.value.lower() == str(name).lower():
                return kind
        raise ConfigError(
            f"未知策略 '{name}'，可选: {[k.value for k in cls]}",
            field="strategies",
        )


@dataclass(frozen=True)
class ResultDraws:
    """
    一次暴发中所有检测用到的均匀数

    行 = 前五个有症状病例的名次；列 = 检测槽位
    """
    uniforms: np.ndarray

    LFD = 0
    PCR_AT_ONSET = 1
    PCR_RETEST = 2

    @classmethod
    def from_rng(cls, rng: np.random.Generator) -> "ResultDraws":
        return cls(rng.random((PANEL_SIZE, 3)))

    def u(self, rank: int, slot: int) -> float:
        return float(self.uniforms[rank, slot])


@dataclass
class StrategyOutcome:
    kind: StrategyKind
    detected: bool
    t_first_positive: Optional[float]
    infections_at_first_positive: Optional[int]
    n_lfd_used: int
    n_pcr_used: int
    had_five_symptomatic: bool
    all_asymptomatic: bool
    truncated: bool
    n_individuals_tested: int
    # 只有 LfdConfirmPcr 填写
    t_confirmation: Optional[float] = None
    infections_at_confirmation: Optional[int] = None
    n_pcr_awaiting_confirmation: Optional[int] = None
    confirmation_failed: bool = False


@dataclass
class Resolution:
    """策略在给定病例组上的判定结果（尚未统计感染数）"""
    detected: bool = False
    t_first_positive: Optional[float] = None
    n_lfd_used: int = 0
    n_pcr_used: int = 0
    n_individuals_tested: int = 0
    t_confirmation: Optional[float] = None
    n_pcr_awaiting_confirmation: Optional[int] = None
    confirmation_failed: bool = False


def _concentration_at(case: InfectionRecord, t: float) -> float:
    return viral_concentration(t - case.t_infect, case.trajectory)


def _lfd_positive(case, rank, t, lfd, draws) -> bool:
    prob = lfd_sensitivity(_concentration_at(case, t), lfd)
    return result_from_uniform(prob, draws.u(rank, ResultDraws.LFD))


def _pcr_positive(case, rank, t, pcr, draws, slot=ResultDraws.PCR_AT_ONSET) -> bool:
    prob = pcr_positive_prob(_concentration_at(case, t), pcr)
    return result_from_uniform(prob, draws.u(rank, slot))


class DetectionStrategy(ABC):
    """策略基类，子类实现 resolve"""

    kind: StrategyKind
    description: str = ""

    @abstractmethod
    def resolve(
        self,
        cases: List[InfectionRecord],
        lfd: LfdModel,
        pcr: PcrModel,
        draws: ResultDraws
    ) -> Resolution:
        """cases 已按发病时刻排序，最多 PANEL_SIZE 个"""
        pass


class AllLfdStrategy(DetectionStrategy):
    kind = StrategyKind.ALL_LFD
    description = "前五个有症状病例做 LFD，首个 LFD 阳性即检出"

    def resolve(self, cases, lfd, pcr, draws):
        for rank, case in enumerate(cases):
            if _lfd_positive(case, rank, case.t_onset, lfd, draws):
                return Resolution(
                    detected=True,
                    t_first_positive=case.t_onset,
                    n_lfd_used=rank + 1,
                    n_individuals_tested=rank + 1,
                )
        return Resolution(n_lfd_used=len(cases), n_individuals_tested=len(cases))


class AllPcrStrategy(DetectionStrategy):
    kind = StrategyKind.ALL_PCR
    description = "前五个有症状病例做 PCR，等待结果期间新发病例照常送检"

    def resolve(self, cases, lfd, pcr, draws):
        arrivals = [
            case.t_onset + pcr.turnaround
            for rank, case in enumerate(cases)
            if _pcr_positive(case, rank, case.t_onset, pcr, draws)
        ]
        if not arrivals:
            return Resolution(n_pcr_used=len(cases), n_individuals_tested=len(cases))
        t_detect = min(arrivals)
        dispatched = sum(1 for case in cases if case.t_onset <= t_detect)
        return Resolution(
            detected=True,
            t_first_positive=t_detect,
            n_pcr_used=dispatched,
            n_individuals_tested=dispatched,
        )


class ConcurrentStrategy(DetectionStrategy):
    kind = StrategyKind.CONCURRENT
    description = "先做 LFD，阴性立即补做 PCR"

    def resolve(self, cases, lfd, pcr, draws):
        events = []
        lfd_negative = []
        for rank, case in enumerate(cases):
            if _lfd_positive(case, rank, case.t_onset, lfd, draws):
                events.append(case.t_onset)
                lfd_negative.append(False)
                continue
            lfd_negative.append(True)
            if _pcr_positive(case, rank, case.t_onset, pcr, draws):
                events.append(case.t_onset + pcr.turnaround)

        if not events:
            return Resolution(
                n_lfd_used=len(cases),
                n_pcr_used=len(cases),
                n_individuals_tested=len(cases),
            )
        t_detect = min(events)
        tested = [case.t_onset <= t_detect for case in cases]
        return Resolution(
            detected=True,
            t_first_positive=t_detect,
            n_lfd_used=sum(tested),
            n_pcr_used=sum(t and neg for t, neg in zip(tested, lfd_negative)),
            n_individuals_tested=sum(tested),
        )


class LfdConfirmPcrStrategy(DetectionStrategy):
    kind = StrategyKind.LFD_CONFIRM_PCR
    description = "LFD 阳性即检出，并立即做确认 PCR；等待确认期间继续 LFD"

    def resolve(self, cases, lfd, pcr, draws):
        lfd_positive = [
            _lfd_positive(case, rank, case.t_onset, lfd, draws)
            for rank, case in enumerate(cases)
        ]
        if not any(lfd_positive):
            return Resolution(n_lfd_used=len(cases), n_individuals_tested=len(cases))

        first_rank = lfd_positive.index(True)
        t_first = cases[first_rank].t_onset
        confirmations = [
            case.t_onset + pcr.turnaround
            for rank, case in enumerate(cases)
            if lfd_positive[rank]
            and _pcr_positive(case, rank, case.t_onset, pcr, draws)
        ]
        t_confirm = min(confirmations) if confirmations else None
        # 确认结果到达后停止检测；始终没有确认时五人全部检测完
        horizon = t_confirm if t_confirm is not None else float("inf")
        awaiting = sum(
            1 for rank, case in enumerate(cases)
            if lfd_positive[rank] and t_first < case.t_onset <= horizon
        )
        return Resolution(
            detected=True,
            t_first_positive=t_first,
            n_lfd_used=first_rank + 1,
            # 首个阳性时刻同时送出的确认 PCR
            n_pcr_used=1,
            n_individuals_tested=sum(1 for case in cases if case.t_onset <= horizon),
            t_confirmation=t_confirm,
            n_pcr_awaiting_confirmation=awaiting,
            confirmation_failed=t_confirm is None,
        )


class LfdRetestPcrIfAllNegStrategy(DetectionStrategy):
    kind = StrategyKind.LFD_RETEST_PCR_IF_ALL_NEG
    description = "五个 LFD 全阴时，在第五个阴性出现的时刻五人同时复检 PCR"

    def resolve(self, cases, lfd, pcr, draws):
        for rank, case in enumerate(cases):
            if _lfd_positive(case, rank, case.t_onset, lfd, draws):
                return Resolution(
                    detected=True,
                    t_first_positive=case.t_onset,
                    n_lfd_used=rank + 1,
                    n_individuals_tested=rank + 1,
                )
        if len(cases) < PANEL_SIZE:
            return Resolution(n_lfd_used=len(cases), n_individuals_tested=len(cases))

        t_retest = cases[-1].t_onset
        positive = any(
            _pcr_positive(case, rank, t_retest, pcr, draws, slot=ResultDraws.PCR_RETEST)
            for rank, case in enumerate(cases)
        )
        return Resolution(
            detected=positive,
            t_first_positive=t_retest + pcr.turnaround if positive else None,
            n_lfd_used=PANEL_SIZE,
            n_pcr_used=PANEL_SIZE,
            n_individuals_tested=PANEL_SIZE,
        )


class StrategyRegistry:
    """策略注册中心"""

    def __init__(self):
        self._strategies: Dict[StrategyKind, DetectionStrategy] = {}

    def register(self, strategy: DetectionStrategy) -> None:
        if strategy.kind in self._strategies:
            logger.warning(f"策略 '{strategy.kind.value}' 已存在，将被覆盖")
        self._strategies[strategy.kind] = strategy

    def get(self, kind) -> DetectionStrategy:
        if not isinstance(kind, StrategyKind):
            kind = StrategyKind.parse(kind)
        return self._strategies[kind]


strategy_registry = StrategyRegistry()
for _strategy in (
    AllLfdStrategy(),
    AllPcrStrategy(),
    ConcurrentStrategy(),
    LfdConfirmPcrStrategy(),
    LfdRetestPcrIfAllNegStrategy(),
):
    strategy_registry.register(_strategy)


def run_strategy(
    stream: InfectionStream,
    kind,
    lfd: LfdModel,
    pcr: PcrModel,
    rng: Optional[np.random.Generator] = None,
    draws: Optional[ResultDraws] = None
) -> StrategyOutcome:
    """
    在一棵传播树上执行一种检测策略

    draws 为 None 时从 rng 抽取；配对比较时各策略应拿到相同的 draws。
    """
    strategy = strategy_registry.get(kind)
    if draws is None:
        if rng is None:
            raise ValueError("rng 和 draws 至少提供一个")
        draws = ResultDraws.from_rng(rng)

    panel = stream.symptomatic_panel(PANEL_SIZE)
    resolution = strategy.resolve(panel.cases, lfd, pcr, draws)
    truncated = not panel.complete

    infections_first = None
    if resolution.detected:
        infections_first, complete = stream.count_infected_by(
            resolution.t_first_positive
        )
        truncated = truncated or not complete

    infections_confirm = None
    if resolution.t_confirmation is not None:
        infections_confirm, complete = stream.count_infected_by(
            resolution.t_confirmation
        )
        truncated = truncated or not complete

    if truncated:
        logger.debug(f"{strategy.kind.value}: 传播树在结果确定前被截断")

    return StrategyOutcome(
        kind=strategy.kind,
        detected=resolution.detected,
        t_first_positive=resolution.t_first_positive,
        infections_at_first_positive=infections_first,
        n_lfd_used=resolution.n_lfd_used,
        n_pcr_used=resolution.n_pcr_used,
        had_five_symptomatic=len(panel.cases) >= PANEL_SIZE,
        all_asymptomatic=not panel.cases and stream.extinct,
        truncated=truncated,
        n_individuals_tested=resolution.n_individuals_tested,
        t_confirmation=resolution.t_confirmation,
        infections_at_confirmation=infections_confirm,
        n_pcr_awaiting_confirmation=resolution.n_pcr_awaiting_confirmation,
        confirmation_failed=resolution.confirmation_failed,
    )
