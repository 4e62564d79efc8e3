import json

import numpy as np
import pytest

import gvhd.evaluation as evaluation
from gvhd.cohort import Scaler, fit_scaler, generate_cohort
from gvhd.config import RunConfig, TrainConfig
from gvhd.errors import IntegrityError, NonFiniteGradientError
from gvhd.evaluation import (
    EvalReport, RunMetrics, aggregate, cross_validate, load_report, protocol_cells, run_seeds, write_report,
)

from conftest import SMALL_MODEL


@pytest.fixture
def tiny_cfg(small_generator):
    return RunConfig(generator=small_generator, model=SMALL_MODEL,
                     training=TrainConfig(epochs=2, batch_size=16, k_folds=4, seeds=[0, 1]))


@pytest.fixture
def tiny_cohort(small_generator):
    return generate_cohort(small_generator)


@pytest.fixture
def tiny_report(tiny_cohort, tiny_cfg):
    return cross_validate(tiny_cohort, tiny_cfg)


class TestProtocol:
    def test_one_run_per_seed_and_fold(self, tiny_report):
        assert [(r.seed, r.fold) for r in tiny_report.runs] == [(s, f) for s in (0, 1) for f in range(4)]
        assert len(tiny_report.baseline_runs) == 8

    def test_every_patient_tested_once_per_seed(self, tiny_cohort, tiny_cfg):
        cells = protocol_cells(tiny_cohort.labels, tiny_cfg)
        for seed in (0, 1):
            idx = np.concatenate([t for s, _, t in cells if s == seed])
            assert np.array_equal(np.sort(idx), np.arange(len(tiny_cohort.records)))

    def test_run_seeds_distinct(self):
        seen = {run_seeds(s, f) for s in range(3) for f in range(5)}
        assert len(seen) == 15

    def test_metrics_in_range(self, tiny_report):
        for r in tiny_report.runs + tiny_report.baseline_runs:
            assert 0 <= r.auc <= 1 and 0 <= r.auprc <= 1 and 0 <= r.recall <= 1 and 0 <= r.specificity <= 1

    def test_deterministic(self, tiny_cohort, tiny_cfg, tiny_report):
        assert cross_validate(tiny_cohort, tiny_cfg).to_json() == tiny_report.to_json()

    def test_baseline_can_be_disabled(self, tiny_cohort, tiny_cfg):
        tiny_cfg.baseline = False
        tiny_cfg.training.seeds = [0]
        rep = cross_validate(tiny_cohort, tiny_cfg)
        assert rep.baseline_runs is None and rep.to_dict()["baseline"] is None


class TestLeakage:
    def test_sentinel_catches_scaler_fit_on_all_patients(self, tiny_cohort, tiny_cfg, monkeypatch):
        everyone = frozenset(r.id for r in tiny_cohort.records)

        def leaky(train):
            s = fit_scaler(train)
            return Scaler(s.mean, s.std, everyone)

        monkeypatch.setattr(evaluation, "fit_scaler", leaky)
        with pytest.raises(IntegrityError, match="non-training"):
            cross_validate(tiny_cohort, tiny_cfg)

    def test_scaler_sees_only_inner_training_ids(self, tiny_cohort, tiny_cfg, monkeypatch):
        fitted = []

        def spy(train):
            s = fit_scaler(train)
            fitted.append(s.fitted_ids)
            return s

        monkeypatch.setattr(evaluation, "fit_scaler", spy)
        tiny_cfg.training.seeds = [0]
        cells = protocol_cells(tiny_cohort.labels, tiny_cfg)
        cross_validate(tiny_cohort, tiny_cfg)
        ids = np.array([r.id for r in tiny_cohort.records])
        for ids_fit, (_, _, test_idx) in zip(fitted, cells):
            assert not ids_fit & set(ids[test_idx])


class TestFailure:
    def test_failing_run_propagates(self, tiny_cohort, tiny_cfg, monkeypatch):
        def boom(*a, **k):
            raise NonFiniteGradientError("gradient of head.l1.w is not finite")

        monkeypatch.setattr(evaluation, "train", boom)
        with pytest.raises(NonFiniteGradientError):
            cross_validate(tiny_cohort, tiny_cfg)


class TestReport:
    def test_schema(self, tiny_report):
        d = json.loads(tiny_report.to_json())
        assert d["format"] == "gvhd-report/1"
        assert set(d) == {"format", "config", "cohort", "backend", "runs", "aggregate", "baseline", "training"}
        assert set(d["aggregate"]) >= {"auc", "auprc", "recall", "specificity"}
        assert set(d["aggregate"]["auc"]) == {"mean", "std"}
        assert d["training"][0]["history"] == "histories/history_seed0_fold0.csv"

    def test_aggregate_is_population_std(self):
        runs = [RunMetrics(0, i, a, 0.1, 0.5, 0.5, 0.3) for i, a in enumerate([0.6, 0.8])]
        agg = aggregate(runs)
        assert agg["auc"]["mean"] == pytest.approx(0.7) and agg["auc"]["std"] == pytest.approx(0.1)

    def test_write_and_load(self, tiny_report, tmp_path):
        paths = write_report(tiny_report, tmp_path)
        assert (tmp_path / "histories" / "history_seed1_fold3.csv").exists() and len(paths) == 2 + 8
        back = load_report(tmp_path)
        assert [r.to_dict() for r in back.runs] == [r.to_dict() for r in tiny_report.runs]
        assert back.aggregate == tiny_report.aggregate

    def test_csv_rows(self, tiny_report):
        lines = tiny_report.to_csv().splitlines()
        assert lines[0].startswith("model,seed,fold,auc,auprc,recall,specificity")
        assert sum(1 for l in lines if l.startswith("full,mean")) == 1
        assert len(lines) == 1 + 2 * (8 + 2)

    def test_summary_mentions_both_models(self, tiny_report):
        s = tiny_report.summary()
        assert "full model" in s and "logistic baseline" in s
