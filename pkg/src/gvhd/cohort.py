"""Synthetic cohorts, on-disk format, train-only scaling, folds and baseline features.

Files written by :func:`save_cohort`::

    <dir>/cohort.manifest.json   shapes, counts, generator config + hash, signal placement
    <dir>/cohort.jsonl           one patient object per line

Every float is written with 17 significant digits so a load/save round trip
is bit-exact. Missing lab cells are stored as value 0 with mask 0.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, logit

from .config import GeneratorConfig, Shapes
from .errors import ConfigError, IntegrityError
from .records import ModalityBlock, PatientBatch, PatientRecord, stack_records

MANIFEST_NAME = "cohort.manifest.json"
DATA_NAME = "cohort.jsonl"
FORMAT_VERSION = "gvhd-cohort/1"
INTERVALS = {"lab": "1-hour", "dx": "3-month", "drug": "1-day"}

N_SIGNAL_DRUGS = 8
N_SIGNAL_LABS = 6
N_SIGNAL_DX = 3

# signal strengths per unit effect_size
DX_LATE_LOGIT = 1.5
LAB_DRIFT_SD = 0.75
DRUG_LATE_GAIN = 0.5
DRUG_EARLY_CUT = 0.5
TIME_SKEW = 0.25

# demographic category frequencies of the source cohort
MALE_FRACTION = 0.651
RACE_PROBS = (0.872, 0.044, 0.036, 0.035, 0.013)
ETHNICITY_PROBS = (0.840, 0.140, 0.020)
AGE_MEAN, AGE_SD, AGE_MIN, AGE_MAX = 56.7, 10.0, 22.0, 76.0


def config_hash(cfg: GeneratorConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class CohortManifest:
    shapes: Shapes
    n_patients: int
    n_positive: int
    generator: dict
    config_hash: str
    seed: int
    signal: dict = field(default_factory=dict)
    realized: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        s = self.shapes
        return {
            "format": FORMAT_VERSION,
            "n_patients": self.n_patients,
            "n_positive": self.n_positive,
            "modalities": {
                "demo": {"features": s.demo_features},
                "lab": {"steps": s.lab_steps, "features": s.lab_features, "interval": INTERVALS["lab"]},
                "dx": {"steps": s.dx_steps, "features": s.dx_features, "interval": INTERVALS["dx"]},
                "drug": {"steps": s.drug_steps, "features": s.drug_features, "interval": INTERVALS["drug"]},
            },
            "generator": self.generator,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "signal": self.signal,
            "realized": self.realized,
            "data_file": DATA_NAME,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CohortManifest":
        try:
            if d.get("format") != FORMAT_VERSION:
                raise IntegrityError(f"unsupported cohort format {d.get('format')!r}")
            m = d["modalities"]
            shapes = Shapes(
                demo_features=m["demo"]["features"],
                lab_features=m["lab"]["features"], lab_steps=m["lab"]["steps"],
                dx_features=m["dx"]["features"], dx_steps=m["dx"]["steps"],
                drug_features=m["drug"]["features"], drug_steps=m["drug"]["steps"],
            )
            return cls(shapes=shapes, n_patients=d["n_patients"], n_positive=d["n_positive"],
                       generator=d["generator"], config_hash=d["config_hash"], seed=d["seed"],
                       signal=d.get("signal", {}), realized=d.get("realized", {}))
        except KeyError as exc:
            raise IntegrityError(f"manifest missing field {exc}") from exc


@dataclass
class Cohort:
    manifest: CohortManifest
    records: list[PatientRecord]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def batch(self) -> PatientBatch:
        return stack_records(self.records)


# ------------------------------------------------------------------ generation

def _signal_layout(cfg: GeneratorConfig) -> dict:
    s = cfg.shapes
    rng = np.random.default_rng([cfg.seed, 7])
    return {
        "drugs": sorted(rng.choice(s.drug_features, min(N_SIGNAL_DRUGS, s.drug_features), replace=False).tolist()),
        "labs": sorted(rng.choice(s.lab_features, min(N_SIGNAL_LABS, s.lab_features), replace=False).tolist()),
        "dx": sorted(rng.choice(s.dx_features, min(N_SIGNAL_DX, s.dx_features), replace=False).tolist()),
    }


def _population(cfg: GeneratorConfig) -> dict:
    s = cfg.shapes
    rng = np.random.default_rng([cfg.seed, 3])
    return {
        "lab_mean": rng.normal(50.0, 30.0, s.lab_features),
        "lab_sd": rng.uniform(2.0, 20.0, s.lab_features),
        "dx_prob": rng.uniform(0.03, 0.25, s.dx_features),
        "drug_rate": rng.exponential(0.15, s.drug_features),
    }


def _time_index(rng, steps: int, skew: float) -> np.ndarray:
    """Sorted uniforms; ``skew > 0`` pulls visits toward the end of the window."""
    u = rng.uniform(0.0, 1.0, steps)
    if skew > 0:
        u = u ** (1.0 / (1.0 + skew))
    return np.sort(u)


def _patient(idx: int, label: int, cfg: GeneratorConfig, pop: dict, signal: dict) -> PatientRecord:
    s = cfg.shapes
    rng = np.random.default_rng([cfg.seed, 1, idx])
    eff = cfg.effect_size * label

    gender = float(rng.uniform() < MALE_FRACTION)
    race = float(rng.choice(len(RACE_PROBS), p=np.array(RACE_PROBS) / sum(RACE_PROBS)))
    ethnicity = float(rng.choice(len(ETHNICITY_PROBS), p=np.array(ETHNICITY_PROBS) / sum(ETHNICITY_PROBS)))
    age = float(np.clip(rng.normal(AGE_MEAN, AGE_SD), AGE_MIN, AGE_MAX))
    demo = np.array([gender, race, ethnicity, (age - AGE_MIN) / (AGE_MAX - AGE_MIN)])
    if s.demo_features != 4:
        demo = np.resize(demo, s.demo_features)

    skew = TIME_SKEW * eff

    # diagnoses: binary flags per 3-month bucket; signal flags rise late in the window
    g_dx = _time_index(rng, s.dx_steps, skew)
    logits = np.broadcast_to(logit(pop["dx_prob"]), (s.dx_steps, s.dx_features)).copy()
    logits[:, signal["dx"]] += eff * DX_LATE_LOGIT * (g_dx[:, None] > 0.5)
    dx = (rng.uniform(size=logits.shape) < expit(logits)).astype(np.float64)

    # labs: patient offset + noise; signal labs drift linearly over the window
    g_lab = _time_index(rng, s.lab_steps, skew)
    sd = pop["lab_sd"]
    offset = rng.normal(0.0, 0.5, s.lab_features) * sd
    lab = pop["lab_mean"] + offset + rng.normal(0.0, 0.5, (s.lab_steps, s.lab_features)) * sd
    slope = np.zeros(s.lab_features)
    slope[signal["labs"]] = LAB_DRIFT_SD * eff
    lab = lab + (g_lab[:, None] - 0.5) * slope * sd
    mask = (rng.uniform(size=lab.shape) >= cfg.missing_ratio).astype(np.float64)
    lab = np.where(mask > 0, lab, 0.0)

    # drugs: daily dose counts; positives receive signal drugs later in the window
    g_drug = _time_index(rng, s.drug_steps, skew)
    activity = rng.gamma(4.0, 0.25)
    rate = np.broadcast_to(pop["drug_rate"] * activity, (s.drug_steps, s.drug_features)).copy()
    late = g_drug[:, None] > 0.5
    gain = np.where(late, 1.0 + DRUG_LATE_GAIN * eff, max(0.0, 1.0 - DRUG_EARLY_CUT * eff))
    rate[:, signal["drugs"]] *= gain
    drug = rng.poisson(rate).astype(np.float64)

    return PatientRecord(
        id=f"P{idx:05d}",
        demo=demo,
        dx=ModalityBlock(dx, g_dx),
        lab=ModalityBlock(lab, g_lab, mask),
        drug=ModalityBlock(drug, g_drug),
        label=int(label),
    )


def assign_labels(cfg: GeneratorConfig) -> np.ndarray:
    """Top ``round(n * prevalence)`` patients by latent logistic risk plus noise."""
    n = cfg.n_patients
    risk = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, 0, i])
        risk[i] = rng.logistic() + rng.normal(0.0, 0.5)
    n_pos = int(round(n * cfg.prevalence))
    order = np.argsort(-risk, kind="stable")
    labels = np.zeros(n, dtype=np.int64)
    labels[order[:n_pos]] = 1
    return labels


def generate_patient(idx: int, cfg: GeneratorConfig, labels: np.ndarray | None = None) -> PatientRecord:
    """Generate one patient; identical whether produced alone or inside :func:`generate_cohort`."""
    labels = assign_labels(cfg) if labels is None else labels
    return _patient(idx, int(labels[idx]), cfg, _population(cfg), _signal_layout(cfg))


def generate_cohort(cfg: GeneratorConfig, seed: int | None = None) -> Cohort:
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    cfg.validate()
    labels = assign_labels(cfg)
    pop = _population(cfg)
    signal = _signal_layout(cfg)
    records = [_patient(i, int(labels[i]), cfg, pop, signal) for i in range(cfg.n_patients)]
    masks = np.stack([r.lab.mask for r in records])
    manifest = CohortManifest(
        shapes=cfg.shapes,
        n_patients=len(records),
        n_positive=int(labels.sum()),
        generator=dataclasses.asdict(cfg),
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        signal={
            **signal,
            "lab_drift_sd_per_effect": LAB_DRIFT_SD,
            "drug_late_gain_per_effect": DRUG_LATE_GAIN,
            "drug_early_cut_per_effect": DRUG_EARLY_CUT,
            "dx_late_logit_per_effect": DX_LATE_LOGIT,
            "time_skew_per_effect": TIME_SKEW,
            "late_window": "g > 0.5",
        },
        realized={"prevalence": float(labels.mean()), "missing_ratio": float(1.0 - masks.mean())},
    )
    return Cohort(manifest, records)


# ------------------------------------------------------------------ file format

def _fmt(a: np.ndarray) -> str:
    return "[" + ",".join(map("%.17g".__mod__, np.asarray(a, dtype=np.float64).reshape(-1).tolist())) + "]"


def _fmt_matrix(a: np.ndarray) -> str:
    return "[" + ",".join(_fmt(row) for row in a) + "]"


def _fmt_mask(a: np.ndarray) -> str:
    return "[" + ",".join("[" + ",".join("1" if x else "0" for x in row) + "]" for row in (a > 0.5)) + "]"


def _record_line(r: PatientRecord) -> str:
    return (
        '{"id":' + json.dumps(r.id)
        + ',"label":' + str(int(r.label))
        + ',"demo":' + _fmt(r.demo)
        + ',"dx":{"time_index":' + _fmt(r.dx.time_index) + ',"values":' + _fmt_matrix(r.dx.values) + "}"
        + ',"lab":{"time_index":' + _fmt(r.lab.time_index) + ',"values":' + _fmt_matrix(r.lab.values)
        + ',"mask":' + _fmt_mask(r.lab.mask) + "}"
        + ',"drug":{"time_index":' + _fmt(r.drug.time_index) + ',"values":' + _fmt_matrix(r.drug.values) + "}"
        + "}"
    )


def save_cohort(cohort: Cohort, directory: str | Path) -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    data_path, manifest_path = d / DATA_NAME, d / MANIFEST_NAME
    with open(data_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in cohort.records:
            fh.write(_record_line(r))
            fh.write("\n")
    manifest_path.write_text(json.dumps(cohort.manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest_path, data_path


def _expect(pid: str, modality: str, arr: np.ndarray, shape: tuple) -> np.ndarray:
    if arr.shape != shape:
        raise IntegrityError(f"patient {pid}: {modality} has shape {arr.shape}, manifest declares {shape}")
    return arr


def load_cohort(directory: str | Path) -> Cohort:
    d = Path(directory)
    try:
        manifest = CohortManifest.from_dict(json.loads((d / MANIFEST_NAME).read_text()))
    except FileNotFoundError as exc:
        raise IntegrityError(f"no cohort manifest at {d / MANIFEST_NAME}") from exc
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"corrupt manifest: {exc}") from exc
    s = manifest.shapes
    records = []
    with open(d / DATA_NAME, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pid = str(obj["id"])
                label = int(obj["label"])
                demo = _expect(pid, "demo", np.array(obj["demo"], dtype=np.float64), (s.demo_features,))
                blocks = {}
                for name, steps, feats in (("dx", s.dx_steps, s.dx_features), ("lab", s.lab_steps, s.lab_features),
                                           ("drug", s.drug_steps, s.drug_features)):
                    o = obj[name]
                    vals = _expect(pid, name, np.array(o["values"], dtype=np.float64), (steps, feats))
                    g = _expect(pid, f"{name}.time_index", np.array(o["time_index"], dtype=np.float64), (steps,))
                    mask = None
                    if name == "lab":
                        mask = _expect(pid, "lab.mask", np.array(o["mask"], dtype=np.float64), (steps, feats))
                    blocks[name] = ModalityBlock(vals, g, mask)
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, IntegrityError):
                    raise
                raise IntegrityError(f"{DATA_NAME}:{lineno}: malformed patient row ({exc})") from exc
            if label not in (0, 1):
                raise IntegrityError(f"patient {pid}: label {label} not in {{0, 1}}")
            records.append(PatientRecord(pid, demo, blocks["dx"], blocks["lab"], blocks["drug"], label))
    if len(records) != manifest.n_patients:
        raise IntegrityError(f"manifest declares {manifest.n_patients} patients, data file has {len(records)}")
    n_pos = sum(r.label for r in records)
    if n_pos != manifest.n_positive:
        raise IntegrityError(f"manifest declares {manifest.n_positive} positives, data file has {n_pos}")
    return Cohort(manifest, records)


# ------------------------------------------------------------------ scaling

STD_FLOOR = 1e-8


@dataclass
class Scaler:
    """Per-feature standardisation statistics fit on training patients only.

    ``fitted_ids`` records which patients contributed, so callers can prove
    that no held-out patient leaked into the statistics.
    """

    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    fitted_ids: frozenset = frozenset()

    def scaled_zero(self, modality: str) -> np.ndarray:
        return (0.0 - self.mean[modality]) / self.std[modality]


def _stats(x: np.ndarray, weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    if weights is None:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
    else:
        n = np.maximum(weights.sum(axis=0), 1.0)
        mean = (x * weights).sum(axis=0) / n
        std = np.sqrt((((x - mean) ** 2) * weights).sum(axis=0) / n)
    return mean, np.maximum(std, STD_FLOOR)


def fit_scaler(train: PatientBatch | Sequence[PatientRecord]) -> Scaler:
    b = train if isinstance(train, PatientBatch) else stack_records(list(train))
    s_lab = b.lab.values.reshape(-1, b.lab.features)
    w_lab = b.lab.mask.reshape(-1, b.lab.features)
    mean, std = {}, {}
    mean["demo"], std["demo"] = _stats(b.demo)
    mean["lab"], std["lab"] = _stats(s_lab, w_lab)
    mean["dx"], std["dx"] = _stats(b.dx.values.reshape(-1, b.dx.features))
    mean["drug"], std["drug"] = _stats(b.drug.values.reshape(-1, b.drug.features))
    return Scaler(mean, std, frozenset(b.ids))


def apply_scaler(data: PatientBatch | PatientRecord, scaler: Scaler, inverse: bool = False):
    """Standardise (or invert) every modality; masked lab cells stay at the sentinel 0."""
    def tx(x, m):
        return x * scaler.std[m] + scaler.mean[m] if inverse else (x - scaler.mean[m]) / scaler.std[m]

    lab_vals = np.where(data.lab.mask > 0.5, tx(data.lab.values, "lab"), 0.0)
    lab = ModalityBlock(lab_vals, data.lab.time_index, data.lab.mask)
    dx = ModalityBlock(tx(data.dx.values, "dx"), data.dx.time_index)
    drug = ModalityBlock(tx(data.drug.values, "drug"), data.drug.time_index)
    demo = tx(data.demo, "demo")
    if isinstance(data, PatientRecord):
        return PatientRecord(data.id, demo, dx, lab, drug, data.label)
    return PatientBatch(list(data.ids), demo, dx, lab, drug, data.labels.copy())


# ------------------------------------------------------------------ folds

def stratified_kfold(labels, k: int, seed: int) -> list[np.ndarray]:
    """Partition indices into ``k`` folds whose positive counts differ by at most one."""
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels != 1)
    if k < 2:
        raise ConfigError("k must be >= 2")
    if len(pos) < k:
        raise ConfigError(f"{len(pos)} positives cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    folds: list[list[int]] = [[] for _ in range(k)]
    for i, idx in enumerate(pos):
        folds[i % k].append(int(idx))
    start = len(pos) % k
    for i, idx in enumerate(neg):
        folds[(start + i) % k].append(int(idx))
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


def stratified_holdout(labels, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split indices into (kept, held-out) with at least one positive and negative held out."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    kept, held = [], []
    for cls in (1, 0):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_out = min(max(1, int(round(len(idx) * fraction))), max(len(idx) - 1, 0))
        held.append(idx[:n_out])
        kept.append(idx[n_out:])
    return np.sort(np.concatenate(kept)), np.sort(np.concatenate(held))


# ------------------------------------------------------------------ baseline features

def aggregate_baseline_features(data: PatientBatch | PatientRecord, dx_zero=None, lab_fill=None) -> np.ndarray:
    """Flat patient-level features for classical models.

    Demographics as-is; one any-diagnosis indicator (any dx cell differing
    from ``dx_zero``, the encoding of "absent"); per-lab mean/min/max over time
    after filling missing cells with ``lab_fill`` (0 = mean on the scaled
    axis); per-drug totals over time.
    """
    single = isinstance(data, PatientRecord)
    b = stack_records([data]) if single else data
    F_lab = b.lab.features
    zero = np.zeros(b.dx.features) if dx_zero is None else np.asarray(dx_zero)
    fill = np.zeros(F_lab) if lab_fill is None else np.asarray(lab_fill)
    any_dx = np.any(np.abs(b.dx.values - zero) > 1e-12, axis=(1, 2)).astype(np.float64)[:, None]
    labs = np.where(b.lab.mask > 0.5, b.lab.values, fill)
    feats = np.concatenate(
        [b.demo, any_dx, labs.mean(axis=1), labs.min(axis=1), labs.max(axis=1), b.drug.values.sum(axis=1)],
        axis=1,
    )
    return feats[0] if single else feats


def realized_missing_ratio(records: Iterable[PatientRecord]) -> float:
    masks = [r.lab.mask for r in records]
    return float(1.0 - np.mean(np.stack(masks)))
