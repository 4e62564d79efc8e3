"""Momentum SGD with an epoch-anchored proximal term, and the training loop."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .errors import NonFiniteGradientError, UndefinedMetricError
from .metrics import auprc, roc_auc
from .model import GVHDModel
from .objective import (
    DualSampler, UniformSampler, bce_with_logits, pairwise_auc_margin_loss, progressive_fraction,
)
from .params import ModelParams
from .records import PatientBatch

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    reference: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3


class MomentumSGD:
    """``v <- mu v + g``; ``theta <- theta - lr v - lr wd theta``.

    ``g`` is the clipped loss gradient plus ``2 * proximal_weight * (theta - theta_ref)``,
    where ``theta_ref`` is re-anchored at each epoch boundary.
    """

    def __init__(self, params: ModelParams, lr: float = 1e-3, momentum: float = 0.9,
                 weight_decay: float = 1e-4, proximal_weight: float = 1e-4, grad_clip: float | None = 5.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.proximal_weight = proximal_weight
        self.grad_clip = grad_clip
        self.state = OptimizerState(
            velocity={p.name: np.zeros_like(p.data) for p in params.trainable()},
            reference={p.name: p.data.copy() for p in params.trainable()},
            lr=lr,
        )

    def epoch_boundary(self) -> None:
        for p in self.params.trainable():
            self.state.reference[p.name] = p.data.copy()

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad`` buffers; returns the pre-clip norm."""
        params = self.params.trainable()
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r} at step {self.state.step}")
        norm = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / norm
        lr = self.state.lr
        for p in params:
            g = p.grad * scale
            if self.proximal_weight:
                g = g + 2.0 * self.proximal_weight * (p.data - self.state.reference[p.name])
            v = self.state.velocity[p.name]
            v *= self.momentum
            v += g
            decay = lr * self.weight_decay * p.data if self.weight_decay else 0.0
            p.data -= lr * v
            if self.weight_decay:
                p.data -= decay
        self.state.step += 1
        return norm


def optimizer_step(optimizer: MomentumSGD) -> OptimizerState:
    optimizer.step()
    return optimizer.state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_auc: float
    valid_auprc: float


@dataclass
class TrainResult:
    model: GVHDModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_auc", "valid_auprc"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.valid_auc), repr(r.valid_auprc)])
        return buf.getvalue()


def batch_loss(model: GVHDModel, batch: PatientBatch, objective: str):
    logits = model.logits(batch)
    y = batch.labels
    if objective == "auc_margin":
        scores = ad.sigmoid(logits)
        return pairwise_auc_margin_loss(ad.take(scores, np.flatnonzero(y == 1)), ad.take(scores, np.flatnonzero(y == 0)))
    return bce_with_logits(logits, y)


def _safe(metric, y, s) -> float:
    try:
        return metric(y, s)
    except UndefinedMetricError:
        return float("nan")


def train(model: GVHDModel, train_split: PatientBatch, valid_split: PatientBatch,
          cfg: TrainConfig, seed: int = 0) -> TrainResult:
    """Fit ``model`` in place and restore the parameters of the best-validation-AUC epoch.

    ``train_split`` and ``valid_split`` must already be scaled with statistics
    from ``train_split``. With zero epochs the initial parameters are returned.
    """
    result = TrainResult(model=model)
    if cfg.epochs == 0:
        return result
    rng = np.random.default_rng(seed)
    labels = train_split.labels
    dual = DualSampler(labels, cfg.batch_size, cfg.sampler_ratio, rng)
    uniform = UniformSampler(labels, cfg.batch_size, rng) if cfg.objective == "bce" else None
    prevalence = float(labels.mean())
    steps = dual.batches_per_epoch()
    opt = MomentumSGD(model.params, cfg.lr, cfg.momentum, cfg.weight_decay, cfg.proximal_weight, cfg.grad_clip)
    best_auc, best_state = -np.inf, model.params.state()
    for epoch in range(cfg.epochs):
        losses = []
        for _ in range(steps):
            if cfg.objective == "bce":
                b = uniform.sample()
            elif cfg.objective == "bce_progressive":
                b = dual.sample(progressive_fraction(epoch, cfg.epochs, cfg.sampler_ratio, prevalence))
            else:
                b = dual.sample()
            sub = train_split.subset(b.indices)
            model.params.zero_grad()
            with ad.Tape() as tape:
                loss = batch_loss(model, sub, cfg.objective)
            ad.backward(loss, tape, model.params)
            tape.clear()
            opt.step()
            losses.append(loss.item())
        opt.epoch_boundary()
        scores = model.predict_scores(valid_split)
        rec = EpochRecord(epoch, float(np.mean(losses)), _safe(roc_auc, valid_split.labels, scores),
                          _safe(auprc, valid_split.labels, scores))
        result.history.append(rec)
        log.debug("epoch %d loss %.5f valid auc %.4f auprc %.4f", epoch, rec.train_loss, rec.valid_auc, rec.valid_auprc)
        if np.isfinite(rec.valid_auc) and rec.valid_auc > best_auc:
            best_auc, best_state, result.best_epoch = rec.valid_auc, model.params.state(), epoch
    model.params.load_state(best_state)
    model.params.zero_grad()
    return result
