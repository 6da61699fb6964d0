"""Tests for KPI evaluation, sweeps and report writers."""

import json
import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from error_handler import ConfigError, ParameterDomainError
from modules.inference import PosteriorDraws
from modules.kpi import (
    KPI_COLUMNS,
    METRICS,
    PROBABILITY_METRICS,
    EvaluationPlan,
    SweepGrid,
    evaluate,
    sweep,
    write_kpi_csv,
    write_kpi_json,
    write_sweep,
)
from modules.outbreak import SimLimits, get_pathogen_preset
from modules.strategies import StrategyKind
from modules.testmodels import LfdModel

CONFIRM_ONLY = (
    "mean_t_confirmation",
    "mean_infections_at_confirmation",
    "mean_pcr_awaiting_confirmation",
)


def make_plan(hyper, n_draws=10, n_reps=50, strategies=None, **kwargs):
    pathogen = get_pathogen_preset("sars-cov-2").with_overrides(
        hyper_draws=PosteriorDraws(draws=[hyper] * n_draws)
    )
    return EvaluationPlan(
        pathogen=pathogen,
        strategies=list(StrategyKind) if strategies is None else strategies,
        master_seed=kwargs.pop("master_seed", 11),
        n_posterior_draws=n_draws,
        n_replicates_per_draw=n_reps,
        limits=kwargs.pop("limits", SimLimits(max_infections=500)),
        **kwargs,
    )


@pytest.fixture
def baseline(reference_hyper, reference_lfd, reference_pcr):
    return evaluate(make_plan(reference_hyper), reference_lfd, reference_pcr)


class TestDeterminism:

    def test_same_seed_same_table(self, reference_hyper, reference_lfd, reference_pcr):
        plan = make_plan(reference_hyper, n_draws=5, n_reps=1)
        a = evaluate(plan, reference_lfd, reference_pcr).to_frame()
        b = evaluate(plan, reference_lfd, reference_pcr).to_frame()
        pd.testing.assert_frame_equal(a, b)

    def test_independent_of_worker_count(self, reference_hyper, reference_lfd, reference_pcr):
        serial = evaluate(make_plan(reference_hyper, n_draws=4, n_reps=20),
                          reference_lfd, reference_pcr)
        parallel = evaluate(make_plan(reference_hyper, n_draws=4, n_reps=20, workers=2),
                            reference_lfd, reference_pcr)
        pd.testing.assert_frame_equal(serial.to_frame(), parallel.to_frame())

    def test_independent_of_strategy_order_without_pairing(
        self, reference_hyper, reference_lfd, reference_pcr
    ):
        kinds = [StrategyKind.ALL_LFD, StrategyKind.ALL_PCR]
        forward = evaluate(
            make_plan(reference_hyper, n_draws=3, n_reps=30, strategies=kinds, pairing=False),
            reference_lfd, reference_pcr,
        )
        backward = evaluate(
            make_plan(reference_hyper, n_draws=3, n_reps=30, strategies=kinds[::-1],
                      pairing=False),
            reference_lfd, reference_pcr,
        )
        for kind in kinds:
            np.testing.assert_array_equal(
                forward.draws_of(kind, "detection_probability"),
                backward.draws_of(kind, "detection_probability"),
            )


class TestMetricDomains:

    def test_every_cell_present(self, baseline):
        assert len(baseline.rows) == len(StrategyKind) * len(METRICS)

    def test_probabilities_and_intervals(self, baseline):
        for row in baseline.rows:
            if row.n_draws == 0:
                continue
            assert row.lower <= row.mean <= row.upper
            if row.metric in PROBABILITY_METRICS:
                assert 0.0 <= row.lower and row.upper <= 1.0

    def test_confirmation_metrics_only_for_confirm_strategy(self, baseline):
        for kind in StrategyKind:
            for metric in CONFIRM_ONLY:
                row = baseline.get(kind, metric)
                if kind is StrategyKind.LFD_CONFIRM_PCR:
                    assert row.n_draws > 0
                else:
                    assert math.isnan(row.mean)
                    assert row.n_draws == 0

    def test_all_pcr_never_uses_lfd(self, baseline):
        assert baseline.get(StrategyKind.ALL_PCR, "mean_lfd_used").mean == 0.0
        assert baseline.get(StrategyKind.ALL_LFD, "mean_pcr_used").mean == 0.0


class TestPairedDominance:
    """Per-draw orderings that hold when strategies share trees and uniforms."""

    def test_concurrent_detects_at_least_as_often(self, baseline):
        lfd_only = baseline.draws_of(StrategyKind.ALL_LFD, "detection_probability")
        concurrent = baseline.draws_of(StrategyKind.CONCURRENT, "detection_probability")
        retest = baseline.draws_of(
            StrategyKind.LFD_RETEST_PCR_IF_ALL_NEG, "detection_probability"
        )
        confirm = baseline.draws_of(StrategyKind.LFD_CONFIRM_PCR, "detection_probability")
        assert np.all(concurrent >= lfd_only)
        assert np.all(retest >= lfd_only)
        np.testing.assert_array_equal(confirm, lfd_only)

    def test_pcr_only_detects_later(self, baseline):
        assert (
            baseline.get(StrategyKind.ALL_PCR, "mean_t_first_positive").mean
            > baseline.get(StrategyKind.CONCURRENT, "mean_t_first_positive").mean
        )

    def test_asymptomatic_fraction_shared(self, baseline):
        fractions = {
            baseline.get(kind, "all_asymptomatic_fraction").mean for kind in StrategyKind
        }
        assert len(fractions) == 1


class TestDegeneratePosterior:
    """A saturated LFD detects every outbreak that has a symptomatic case."""

    def test_detection_complements_silent_extinction(self, reference_hyper, reference_pcr):
        # 清除期很长，发病时浓度必为正；LFD 对任何正浓度都阳性
        hyper = replace(reference_hyper, alpha_p2c=40.0)
        lfd = LfdModel(beta0=50.0, beta1=1.0)
        plan = make_plan(hyper, n_draws=20, n_reps=250,
                         strategies=[StrategyKind.ALL_LFD],
                         limits=SimLimits(max_infections=200))
        table = evaluate(plan, lfd, reference_pcr)
        detection = table.get(StrategyKind.ALL_LFD, "detection_probability").mean
        silent = table.get(StrategyKind.ALL_LFD, "all_asymptomatic_fraction").mean
        # r0 = 1.5、无症状比例 0.33 时全无症状灭绝的概率约 0.0835
        assert detection == pytest.approx(1 - 0.0835, abs=0.015)
        assert detection + silent == pytest.approx(1.0, abs=0.002)


class TestValidation:

    def test_plan_rejects_bad_values(self, reference_hyper):
        with pytest.raises(ConfigError):
            make_plan(reference_hyper, strategies=[])
        with pytest.raises(ConfigError):
            make_plan(reference_hyper, interval=1.0)
        with pytest.raises(ConfigError):
            make_plan(reference_hyper, strategies=["AllRapid"])

    def test_plan_accepts_strategy_names(self, reference_hyper):
        plan = make_plan(reference_hyper, strategies=["AllLfd", "Concurrent"])
        assert plan.strategies == [StrategyKind.ALL_LFD, StrategyKind.CONCURRENT]

    def test_more_draws_than_available(self, reference_hyper, reference_lfd, reference_pcr):
        plan = make_plan(reference_hyper, n_draws=3)
        plan.n_posterior_draws = 10
        with pytest.raises(ParameterDomainError):
            evaluate(plan, reference_lfd, reference_pcr)

    def test_sweep_grid(self):
        assert SweepGrid.default("r0").values == [1.25, 1.5, 2.0]
        with pytest.raises(ConfigError):
            SweepGrid("r0", [])
        with pytest.raises(ConfigError):
            SweepGrid("p_asymptomatic", [1.5])
        with pytest.raises(ConfigError):
            SweepGrid("generation_time", [1.0])
        with pytest.raises(ConfigError):
            SweepGrid("r0", [float("nan")])
        with pytest.raises(ConfigError):
            SweepGrid("r0", ["fast"])
        with pytest.raises(ConfigError):
            SweepGrid("r0", [True])
        with pytest.raises(ConfigError):
            SweepGrid("r0", [1.5, 1.5 + 1e-14])


class TestSweep:

    @pytest.mark.slow
    def test_r0_grid_orders_detection_and_spread(
        self, reference_hyper, reference_lfd, reference_pcr
    ):
        plan = make_plan(reference_hyper, n_draws=20, n_reps=500,
                         strategies=[StrategyKind.ALL_LFD],
                         limits=SimLimits(max_infections=100))
        results = sweep(plan, SweepGrid.default("r0"), reference_lfd, reference_pcr)
        assert [value for value, _ in results] == [1.25, 1.5, 2.0]
        kind = StrategyKind.ALL_LFD
        detection = [t.get(kind, "detection_probability").mean for _, t in results]
        assert detection[0] <= detection[1] <= detection[2]
        spread = [t.get(kind, "mean_infections_at_first_positive").mean for _, t in results]
        assert spread[0] < spread[2]
        assert results[2][1].metadata["r0"] == 2.0
        assert results[2][1].metadata["sweep"] == {"axis": "r0", "value": 2.0}

    def test_write_sweep(self, reference_hyper, reference_lfd, reference_pcr, tmp_path):
        plan = make_plan(reference_hyper, n_draws=2, n_reps=5,
                         strategies=[StrategyKind.ALL_LFD])
        results = sweep(plan, SweepGrid("lfd_shift", [-1.0, 1.0]), reference_lfd, reference_pcr)
        paths = write_sweep(results, "lfd_shift", tmp_path)
        names = sorted(p.name for p in paths)
        assert names == [
            "sweep_lfd_shift.csv",
            "sweep_lfd_shift_-1.csv", "sweep_lfd_shift_-1.json",
            "sweep_lfd_shift_1.csv", "sweep_lfd_shift_1.json",
        ]
        combined = pd.read_csv(tmp_path / "sweep_lfd_shift.csv")
        assert set(combined["axis_value"]) == {-1.0, 1.0}
        assert (combined["axis"] == "lfd_shift").all()

    def test_close_values_get_distinct_files(
        self, reference_hyper, reference_lfd, reference_pcr, tmp_path
    ):
        plan = make_plan(reference_hyper, n_draws=2, n_reps=2,
                         strategies=[StrategyKind.ALL_LFD])
        grid = SweepGrid("r0", [1.5, 1.500001])
        paths = write_sweep(sweep(plan, grid, reference_lfd, reference_pcr), "r0", tmp_path)
        assert len({p.name for p in paths}) == len(paths) == 5
        assert (tmp_path / "sweep_r0_1.500001.csv").exists()

    @pytest.mark.slow
    def test_asymptomatic_share(self, reference_hyper, reference_lfd, reference_pcr):
        plan = make_plan(reference_hyper, n_draws=50, n_reps=200)
        results = sweep(plan, SweepGrid.default("p_asymptomatic"), reference_lfd, reference_pcr)
        by_asym = dict(results)
        for kind in StrategyKind:
            assert (
                by_asym[0.2].get(kind, "detection_probability").mean
                > by_asym[0.5].get(kind, "detection_probability").mean
            )
        # 无症状比例越高，检出时已有的感染越多
        for kind in (StrategyKind.ALL_LFD, StrategyKind.CONCURRENT):
            infections = [
                table.get(kind, "mean_infections_at_first_positive").mean
                for _, table in results
            ]
            assert infections[0] <= infections[1] <= infections[2]

    @pytest.mark.slow
    def test_concurrent_insensitive_to_pcr_lod(
        self, reference_hyper, reference_lfd, reference_pcr
    ):
        plan = make_plan(reference_hyper, n_draws=50, n_reps=200)
        by_lod = dict(sweep(
            plan, SweepGrid("pcr_lod", [2.0, 3.0]), reference_lfd, reference_pcr
        ))
        gap = abs(
            by_lod[2.0].get(StrategyKind.CONCURRENT, "detection_probability").mean
            - by_lod[3.0].get(StrategyKind.CONCURRENT, "detection_probability").mean
        )
        assert gap < 0.05


class TestMonteCarloError:

    @pytest.mark.slow
    def test_doubling_replicates_shrinks_error(
        self, reference_hyper, reference_lfd, reference_pcr
    ):
        # 后验退化为单点时，样本级检出概率的离散只来自重复次数
        spread = {}
        for n_reps in (25, 50):
            plan = make_plan(reference_hyper, n_draws=400, n_reps=n_reps,
                             strategies=[StrategyKind.ALL_LFD],
                             limits=SimLimits(max_infections=50))
            table = evaluate(plan, reference_lfd, reference_pcr)
            spread[n_reps] = table.draws_of(StrategyKind.ALL_LFD, "detection_probability").std()
        assert spread[50] / spread[25] == pytest.approx(1 / math.sqrt(2), rel=0.2)


class TestWriters:

    def test_csv_columns(self, baseline, tmp_path):
        path = write_kpi_csv(baseline, tmp_path / "kpi.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == KPI_COLUMNS
        assert (frame["schema_version"] == 1).all()
        assert (frame["pathogen"] == "sars-cov-2").all()
        undefined = frame[
            (frame["strategy"] == "AllLfd") & (frame["metric"] == "mean_t_confirmation")
        ]
        assert undefined["mean"].isna().all()
        assert (undefined["n_draws"] == 0).all()

    def test_json_uses_null_for_undefined(self, baseline, tmp_path):
        path = write_kpi_json(baseline, tmp_path / "kpi.json")
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        assert "NaN" not in path.read_text(encoding="utf-8")
        row = next(
            r for r in payload["rows"]
            if r["strategy"] == "AllPcr" and r["metric"] == "mean_t_confirmation"
        )
        assert row["mean"] is None
        assert payload["metadata"]["pairing"] is True
        assert "mean_t_first_positive" in payload["metadata"]["conditioning"]

    def test_rewrite_is_byte_identical(self, baseline, tmp_path):
        a = write_kpi_csv(baseline, tmp_path / "a.csv").read_bytes()
        b = write_kpi_csv(baseline, tmp_path / "b.csv").read_bytes()
        assert a == b
