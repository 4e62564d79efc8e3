"""Patient record containers.

A :class:`ModalityBlock` holds either one patient's arrays (``[T, F]``) or a
stacked batch (``[B, T, F]``); encoders accept both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class ModalityBlock:
    values: np.ndarray
    time_index: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.time_index = np.asarray(self.time_index, dtype=np.float64)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.float64)

    @property
    def steps(self) -> int:
        return self.values.shape[-2]

    @property
    def features(self) -> int:
        return self.values.shape[-1]

    def check(self, name: str) -> None:
        if self.values.ndim not in (2, 3) or self.time_index.shape != self.values.shape[:-1]:
            raise DimensionError(
                f"{name}: values {self.values.shape} and time_index {self.time_index.shape} disagree"
            )
        if self.mask is not None and self.mask.shape != self.values.shape:
            raise DimensionError(f"{name}: mask {self.mask.shape} != values {self.values.shape}")
        g = self.time_index
        if g.size and (g.min() < 0.0 or g.max() > 1.0 or np.any(np.diff(g, axis=-1) < 0)):
            raise ContractError(f"{name}: time_index must be non-decreasing within [0, 1]")


@dataclass
class PatientRecord:
    id: str
    demo: np.ndarray
    dx: ModalityBlock
    lab: ModalityBlock
    drug: ModalityBlock
    label: int

    def __post_init__(self):
        self.demo = np.asarray(self.demo, dtype=np.float64)


@dataclass
class PatientBatch:
    ids: list[str]
    demo: np.ndarray
    dx: ModalityBlock
    lab: ModalityBlock
    drug: ModalityBlock
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index) -> "PatientBatch":
        index = np.asarray(index, dtype=np.intp)
        return PatientBatch(
            ids=[self.ids[i] for i in index],
            demo=self.demo[index],
            dx=ModalityBlock(self.dx.values[index], self.dx.time_index[index]),
            lab=ModalityBlock(self.lab.values[index], self.lab.time_index[index], self.lab.mask[index]),
            drug=ModalityBlock(self.drug.values[index], self.drug.time_index[index]),
            labels=self.labels[index],
        )


def stack_records(records: Sequence[PatientRecord]) -> PatientBatch:
    if not records:
        raise ContractError("cannot stack an empty record list")
    return PatientBatch(
        ids=[r.id for r in records],
        demo=np.stack([r.demo for r in records]),
        dx=ModalityBlock(np.stack([r.dx.values for r in records]), np.stack([r.dx.time_index for r in records])),
        lab=ModalityBlock(
            np.stack([r.lab.values for r in records]),
            np.stack([r.lab.time_index for r in records]),
            np.stack([r.lab.mask for r in records]),
        ),
        drug=ModalityBlock(np.stack([r.drug.values for r in records]), np.stack([r.drug.time_index for r in records])),
        labels=np.array([r.label for r in records], dtype=np.int64),
    )


def unstack(batch: PatientBatch) -> list[PatientRecord]:
    return [
        PatientRecord(
            id=batch.ids[i],
            demo=batch.demo[i],
            dx=ModalityBlock(batch.dx.values[i], batch.dx.time_index[i]),
            lab=ModalityBlock(batch.lab.values[i], batch.lab.time_index[i], batch.lab.mask[i]),
            drug=ModalityBlock(batch.drug.values[i], batch.drug.time_index[i]),
            label=int(batch.labels[i]),
        )
        for i in range(len(batch))
    ]
