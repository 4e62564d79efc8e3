"""Stratified k-fold x multi-seed evaluation harness and its report files.

For every (seed, fold):

1. the fold is held out for testing;
2. the remaining patients are split (stratified) into inner train / validation;
3. the scaler is fit on inner train only, and this is asserted from its provenance;
4. the network is trained with best-validation-AUC checkpointing;
5. the operating threshold is chosen by Youden's J on the validation split;
6. AUC, AUPRC, recall and specificity are measured on the held-out fold.

The logistic baseline, when enabled, goes through the same splits, scaler and
threshold rule. Report files carry no timing or host information, so reruns
with the same config produce byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import BACKEND_NAME
from .baseline import baseline_scores, fit_logistic_baseline
from .cohort import Cohort, apply_scaler, fit_scaler, stratified_holdout, stratified_kfold
from .config import RunConfig
from .errors import IntegrityError
from .metrics import auprc, confusion_at_threshold, roc_auc, select_threshold
from .model import GVHDModel
from .optim import train
from .records import PatientBatch

log = logging.getLogger(__name__)

REPORT_FORMAT = "gvhd-report/1"
METRICS = ("auc", "auprc", "recall", "specificity")


@dataclass
class RunMetrics:
    seed: int
    fold: int
    auc: float
    auprc: float
    recall: float
    specificity: float
    threshold: float

    def to_dict(self) -> dict:
        return {"seed": self.seed, "fold": self.fold, "auc": self.auc, "auprc": self.auprc,
                "recall": self.recall, "specificity": self.specificity, "threshold": self.threshold}


@dataclass
class RunOutput:
    model: RunMetrics
    baseline: RunMetrics | None
    history_csv: str
    best_epoch: int | None


def aggregate(runs: list[RunMetrics]) -> dict[str, dict[str, float]]:
    """Mean and population standard deviation of each metric over runs."""
    out = {}
    for m in METRICS + ("threshold",):
        v = np.array([getattr(r, m) for r in runs], dtype=np.float64)
        out[m] = {"mean": float(v.mean()), "std": float(v.std(ddof=0))}
    return out


@dataclass
class EvalReport:
    config: dict
    cohort: dict
    runs: list[RunMetrics]
    baseline_runs: list[RunMetrics] | None = None
    training: list[dict] = field(default_factory=list)
    histories: dict[str, str] = field(default_factory=dict)
    backend: str = BACKEND_NAME

    @property
    def aggregate(self) -> dict:
        return aggregate(self.runs)

    @property
    def baseline_aggregate(self) -> dict | None:
        return aggregate(self.baseline_runs) if self.baseline_runs else None

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "cohort": self.cohort,
            "backend": self.backend,
            "runs": [r.to_dict() for r in self.runs],
            "aggregate": self.aggregate,
            "baseline": None if self.baseline_runs is None else {
                "model": "logistic_regression_aggregated",
                "runs": [r.to_dict() for r in self.baseline_runs],
                "aggregate": self.baseline_aggregate,
            },
            "training": self.training,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "seed", "fold", *METRICS, "threshold"])
        groups = [("full", self.runs)]
        if self.baseline_runs:
            groups.append(("logistic", self.baseline_runs))
        for name, runs in groups:
            for r in runs:
                w.writerow([name, r.seed, r.fold, *(repr(getattr(r, m)) for m in METRICS), repr(r.threshold)])
            agg = aggregate(runs)
            for stat in ("mean", "std"):
                w.writerow([name, stat, "", *(repr(agg[m][stat]) for m in METRICS), repr(agg["threshold"][stat])])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("format") != REPORT_FORMAT:
            raise IntegrityError(f"unsupported report format {d.get('format')!r}")
        base = d.get("baseline")
        return cls(
            config=d["config"], cohort=d["cohort"],
            runs=[RunMetrics(**r) for r in d["runs"]],
            baseline_runs=[RunMetrics(**r) for r in base["runs"]] if base else None,
            training=d.get("training", []), backend=d.get("backend", ""),
        )

    def summary(self) -> str:
        lines = []
        for name, agg in (("full model", self.aggregate), ("logistic baseline", self.baseline_aggregate)):
            if agg is None:
                continue
            cells = "  ".join(f"{m} {agg[m]['mean']:.3f} ± {agg[m]['std']:.3f}" for m in METRICS)
            lines.append(f"{name:<18} {cells}")
        lines.append(f"runs: {len(self.runs)}")
        return "\n".join(lines)


def run_seeds(seed: int, fold: int) -> tuple[int, int, int]:
    """(inner split seed, model init seed, training seed) for one run."""
    a, b, c = np.random.SeedSequence([seed, fold]).generate_state(3)
    return int(a), int(b), int(c)


def _metrics(seed: int, fold: int, valid: PatientBatch, valid_scores, test: PatientBatch, test_scores) -> RunMetrics:
    theta = select_threshold(valid.labels, valid_scores)
    c = confusion_at_threshold(test.labels, test_scores, theta)
    return RunMetrics(seed, fold, roc_auc(test.labels, test_scores), auprc(test.labels, test_scores),
                      float(c.recall), float(c.specificity), theta)


def evaluate_run(data: PatientBatch, shapes, cfg: RunConfig, seed: int, fold: int,
                 test_idx: np.ndarray) -> RunOutput:
    """Train and evaluate one (seed, fold) cell of the protocol."""
    split_seed, init_seed, train_seed = run_seeds(seed, fold)
    rest = np.setdiff1d(np.arange(len(data)), test_idx)
    keep, held = stratified_holdout(data.labels[rest], cfg.training.valid_fraction, split_seed)
    tr_idx, va_idx = rest[keep], rest[held]

    raw_train = data.subset(tr_idx)
    scaler = fit_scaler(raw_train)
    train_ids = frozenset(raw_train.ids)
    if not scaler.fitted_ids <= train_ids:
        leaked = sorted(scaler.fitted_ids - train_ids)[:5]
        raise IntegrityError(f"scaler statistics include non-training patients, e.g. {leaked}")

    tr = apply_scaler(raw_train, scaler)
    va = apply_scaler(data.subset(va_idx), scaler)
    te = apply_scaler(data.subset(test_idx), scaler)

    model = GVHDModel(shapes, cfg.model, cfg.ablation, seed=init_seed)
    result = train(model, tr, va, cfg.training, seed=train_seed)
    m = _metrics(seed, fold, va, model.predict_scores(va), te, model.predict_scores(te))

    b = None
    if cfg.baseline:
        lr = fit_logistic_baseline(tr, scaler)
        b = _metrics(seed, fold, va, baseline_scores(lr, va, scaler), te, baseline_scores(lr, te, scaler))
    log.info("seed %d fold %d: auc %.4f auprc %.4f%s", seed, fold, m.auc, m.auprc,
             f" (baseline auc {b.auc:.4f})" if b else "")
    return RunOutput(m, b, result.history_csv(), result.best_epoch)


# worker-side state for forked pools: the cohort is inherited, not pickled per task
_SHARED: dict = {}


def _pool_task(args):
    seed, fold, test_idx = args
    return evaluate_run(_SHARED["data"], _SHARED["shapes"], _SHARED["cfg"], seed, fold, test_idx)


def protocol_cells(labels: np.ndarray, cfg: RunConfig) -> list[tuple[int, int, np.ndarray]]:
    cells = []
    for seed in cfg.training.seeds:
        for fold, test_idx in enumerate(stratified_kfold(labels, cfg.training.k_folds, seed)):
            cells.append((seed, fold, test_idx))
    return cells


def cross_validate(cohort: Cohort, cfg: RunConfig, jobs: int = 1) -> EvalReport:
    """Run every (seed, fold) cell and assemble the report in (seed, fold) order.

    Any failing run propagates its exception; there is no partial report.
    """
    cfg.validate()
    data = cohort.batch()
    shapes = cohort.manifest.shapes
    cells = protocol_cells(data.labels, cfg)
    if jobs > 1:
        _SHARED.update(data=data, shapes=shapes, cfg=cfg)
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(min(jobs, len(cells))) as pool:
                outputs = pool.map(_pool_task, cells, chunksize=1)
        finally:
            _SHARED.clear()
    else:
        outputs = [evaluate_run(data, shapes, cfg, s, f, t) for s, f, t in cells]

    man = cohort.manifest
    report = EvalReport(
        config=cfg.to_dict(),
        cohort={"config_hash": man.config_hash, "n_patients": man.n_patients,
                "n_positive": man.n_positive, "seed": man.seed},
        runs=[o.model for o in outputs],
        baseline_runs=[o.baseline for o in outputs] if cfg.baseline else None,
    )
    for (seed, fold, _), o in zip(cells, outputs):
        name = f"history_seed{seed}_fold{fold}.csv"
        report.histories[name] = o.history_csv
        report.training.append({"seed": seed, "fold": fold, "best_epoch": o.best_epoch,
                                "history": f"histories/{name}"})
    return report


def write_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    (out / "histories").mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "report.csv"]
    paths[0].write_text(report.to_json())
    paths[1].write_text(report.to_csv())
    for name, text in report.histories.items():
        p = out / "histories" / name
        p.write_text(text)
        paths.append(p)
    return paths


def load_report(path: str | Path) -> EvalReport:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return EvalReport.from_dict(json.loads(p.read_text()))
