"""Run configuration: a strict JSON-backed tree of dataclasses.

Unknown keys anywhere in the tree raise :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

MODALITIES = ("demo", "lab", "dx", "drug")
OBJECTIVES = ("auc_margin", "bce", "bce_progressive")


@dataclass
class Shapes:
    demo_features: int = 4
    lab_features: int = 74
    lab_steps: int = 24
    dx_features: int = 20
    dx_steps: int = 12
    drug_features: int = 280
    drug_steps: int = 24


@dataclass
class GeneratorConfig:
    n_patients: int = 2100
    prevalence: float = 0.02
    missing_ratio: float = 0.729
    effect_size: float = 2.0
    shapes: Shapes = field(default_factory=Shapes)
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 2:
            raise ConfigError("n_patients must be >= 2")
        if not 0.0 < self.prevalence < 1.0:
            raise ConfigError("prevalence must lie in (0, 1)")
        if round(self.prevalence * self.n_patients) < 2:
            raise ConfigError(
                f"prevalence*n_patients = {self.prevalence * self.n_patients:g} < 2; folds need positives"
            )
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ConfigError("missing_ratio must lie in [0, 1)")
        if self.effect_size < 0:
            raise ConfigError("effect_size must be >= 0")


@dataclass
class ModelConfig:
    hidden: int = 32
    ffn_hidden: int = 128
    n_frequencies: int = 12
    extension_width: int = 4
    branch_hidden: int = 16
    heads: int = 4
    kernel_height: int = 3

    def validate(self) -> None:
        if self.hidden % self.heads:
            raise ConfigError(f"hidden width {self.hidden} not divisible by heads {self.heads}")
        if self.kernel_height % 2 == 0:
            raise ConfigError("kernel_height must be odd")
        if min(self.hidden, self.ffn_hidden, self.n_frequencies, self.extension_width, self.branch_hidden) < 1:
            raise ConfigError("model widths must be positive")


@dataclass
class AblationConfig:
    use_time_index: bool = True
    missing_aware: bool = True
    use_fusion: bool = True
    modalities: list[str] = field(default_factory=lambda: list(MODALITIES))

    def validate(self) -> None:
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad or not self.modalities or len(set(self.modalities)) != len(self.modalities):
            raise ConfigError(f"modalities must be a non-empty subset of {MODALITIES}, got {self.modalities}")

    def ordered_modalities(self) -> list[str]:
        return [m for m in MODALITIES if m in self.modalities]


@dataclass
class TrainConfig:
    objective: str = "auc_margin"
    batch_size: int = 64
    sampler_ratio: float = 0.5
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    proximal_weight: float = 1e-4
    grad_clip: float = 5.0
    epochs: int = 100
    valid_fraction: float = 0.2
    k_folds: int = 5
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not 0.0 < self.sampler_ratio < 1.0:
            raise ConfigError("sampler_ratio must lie in (0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0 or self.k_folds < 2 or not self.seeds:
            raise ConfigError("epochs >= 0, k_folds >= 2 and a non-empty seed list are required")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ConfigError("valid_fraction must lie in (0, 1)")


@dataclass
class Paths:
    """Relative ``cohort`` and ``report`` paths are resolved under the output directory."""

    cohort: str = "cohort"
    report: str = "report"
    out_dir: str = ""

    def resolved_out_dir(self) -> str:
        return self.out_dir or os.environ.get("GVHD_OUT_DIR", "") or "runs"

    def _under_out(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.resolved_out_dir()) / path

    def cohort_dir(self) -> Path:
        return self._under_out(self.cohort)

    def report_dir(self) -> Path:
        return self._under_out(self.report)


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    baseline: bool = True

    def validate(self) -> "RunConfig":
        self.generator.validate()
        self.model.validate()
        self.training.validate()
        self.ablation.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _build(cls, data, "").validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) at {where or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = _dataclass_type(f)
        path = f"{where}.{name}" if where else name
        if sub is not None:
            kwargs[name] = _build(sub, value, path)
        else:
            kwargs[name] = _coerce(f, value, path)
    return cls(**kwargs)


_NESTED = {
    "paths": Paths, "generator": GeneratorConfig, "model": ModelConfig,
    "training": TrainConfig, "ablation": AblationConfig, "shapes": Shapes,
}


def _dataclass_type(f):
    return _NESTED.get(f.name)


def _coerce(f, value, path):
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
    return value
