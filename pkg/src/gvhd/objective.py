"""Training objectives and class-aware batch samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, TrainingSetupError

BCE_CLAMP = 1e-7


def pairwise_auc_margin_loss(scores_pos, scores_neg) -> Tensor:
    """Mean over all positive/negative pairs of ``log(1 + exp(-(s_i - s_j)))``."""
    sp, sn = ad.as_tensor(scores_pos), ad.as_tensor(scores_neg)
    if sp.data.size == 0 or sn.data.size == 0:
        raise ContractError("pairwise AUC loss needs at least one positive and one negative score")
    diff = ad.sub(ad.reshape(sp, (-1, 1)), ad.reshape(sn, (1, -1)))
    return ad.mean(ad.softplus(ad.mul(diff, -1.0)))


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy computed from logits: softplus(-l) for y=1, softplus(l) for y=0."""
    logits = ad.as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    sign = Tensor(1.0 - 2.0 * y)
    return ad.mean(ad.softplus(ad.mul(logits, sign)))


def bce_loss(scores, labels) -> Tensor:
    """BCE on probabilities, clamped to ``[1e-7, 1 - 1e-7]`` and evaluated in logit space."""
    s = ad.as_tensor(scores)
    clipped = np.clip(s.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    # identity on the clamp interior so gradients pass through unchanged
    s = ad.add(s, Tensor(clipped - s.data))
    logit = ad.sub(ad.log(s), ad.log(ad.sub(1.0, s)))
    return bce_with_logits(logit, labels)


@dataclass
class Batch:
    indices: np.ndarray
    labels: np.ndarray

    @property
    def positive_count(self) -> int:
        return int(self.labels.sum())


def positives_per_batch(batch_size: int, ratio: float) -> int:
    """Positive slots in a batch: ``ceil(batch_size * ratio)``, at least one and leaving one negative."""
    n = math.ceil(batch_size * ratio - 1e-9)
    return int(min(max(n, 1), batch_size - 1))


class _NegativeStream:
    """Negatives without replacement; reshuffled when a pass is exhausted."""

    def __init__(self, negatives: np.ndarray, rng: np.random.Generator):
        self.pool = np.asarray(negatives, dtype=np.intp)
        self.rng = rng
        self.order = self.rng.permutation(self.pool)
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        out = []
        while n > 0:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(self.pool)
                self.pos = 0
            chunk = self.order[self.pos:self.pos + n]
            self.pos += len(chunk)
            n -= len(chunk)
            out.append(chunk)
        return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


class DualSampler:
    """Batches with a fixed positive fraction.

    Positives are drawn with replacement from the positive pool; negatives are
    drawn without replacement and reshuffled after every full pass.
    """

    def __init__(self, labels, batch_size: int, ratio: float, rng: np.random.Generator):
        labels = np.asarray(labels)
        self.labels = labels
        self.positives = np.flatnonzero(labels == 1)
        self.negatives = np.flatnonzero(labels == 0)
        if len(self.positives) == 0:
            raise TrainingSetupError("training split contains no positives")
        if len(self.negatives) == 0:
            raise TrainingSetupError("training split contains no negatives")
        if not 0.0 < ratio < 1.0:
            raise TrainingSetupError(f"sampler ratio must lie in (0, 1), got {ratio}")
        self.batch_size = batch_size
        self.ratio = ratio
        self.rng = rng
        self._neg = _NegativeStream(self.negatives, rng)

    def batches_per_epoch(self) -> int:
        n_neg = self.batch_size - positives_per_batch(self.batch_size, self.ratio)
        return max(1, math.ceil(len(self.negatives) / n_neg))

    def sample(self, ratio: float | None = None) -> Batch:
        n_pos = positives_per_batch(self.batch_size, self.ratio if ratio is None else ratio)
        pos = self.rng.choice(self.positives, size=n_pos, replace=True)
        neg = self._neg.take(self.batch_size - n_pos)
        idx = np.concatenate([pos, neg])
        return Batch(indices=idx, labels=self.labels[idx])


def dual_sample_batch(sampler: DualSampler) -> Batch:
    return sampler.sample()


def progressive_fraction(epoch: int, n_epochs: int, start: float, prevalence: float) -> float:
    """Linear decay of the positive fraction from ``start`` to ``prevalence`` over training."""
    if n_epochs <= 1:
        return start
    frac = start + (prevalence - start) * epoch / (n_epochs - 1)
    return float(min(start, max(prevalence, frac)))


def progressive_sample_batch(sampler: DualSampler, epoch: int, n_epochs: int, prevalence: float) -> Batch:
    return sampler.sample(progressive_fraction(epoch, n_epochs, sampler.ratio, prevalence))


class UniformSampler:
    """Plain shuffled batches without replacement (the unbalanced reference)."""

    def __init__(self, labels, batch_size: int, rng: np.random.Generator):
        self.labels = np.asarray(labels)
        self.batch_size = batch_size
        self._stream = _NegativeStream(np.arange(len(self.labels)), rng)

    def sample(self) -> Batch:
        idx = self._stream.take(self.batch_size)
        return Batch(indices=idx, labels=self.labels[idx])
