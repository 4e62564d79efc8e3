"""Full multi-modal network: parameter construction and the forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import AblationConfig, ModelConfig, Shapes
from .encoders import (
    encode_demographics, encode_diagnosis, encode_drug, encode_lab,
    lab_temporal_embedding, masked_dimension_extension,
)
from .errors import DimensionError
from .fusion import align_modalities, fuse, predict_logit
from .params import ModelParams, glorot
from .records import PatientBatch, PatientRecord, stack_records


def build_params(shapes: Shapes, cfg: ModelConfig, ablation: AblationConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases, drawn in a fixed order from ``seed``."""
    rng = np.random.default_rng(seed)
    p = ModelParams()
    d, hid = cfg.hidden, cfg.ffn_hidden
    t_extra = 1 if ablation.use_time_index else 0
    mods = ablation.ordered_modalities()

    def two_layer(name, fan_in, width, fan_out):
        p.dense(rng, f"{name}.l1", fan_in, width)
        p.dense(rng, f"{name}.l2", width, fan_out)

    def gru(name, f_in):
        p.add(f"{name}.w", glorot(rng, f_in, 3 * d, (f_in, 3 * d)))
        p.add(f"{name}.u", glorot(rng, d, 3 * d, (d, 3 * d)))
        p.add(f"{name}.b", np.zeros(3 * d))

    if "demo" in mods:
        two_layer("demo.ffn", shapes.demo_features, hid, d)
    if "lab" in mods:
        K, F = cfg.n_frequencies, shapes.lab_features
        p.add("lab.temporal.freq", np.arange(1, K + 1, dtype=np.float64))
        p.add("lab.temporal.sin_coeff", glorot(rng, K, F, (K, F)))
        p.add("lab.temporal.cos_coeff", glorot(rng, K, F, (K, F)))
        two_layer("lab.observed", 2, cfg.branch_hidden, cfg.extension_width)
        two_layer("lab.missing", 1, cfg.branch_hidden, cfg.extension_width)
        gru("lab.gru", F * cfg.extension_width + t_extra)
    if "dx" in mods:
        gru("dx.gru", shapes.dx_features + t_extra)
    if "drug" in mods:
        f_in = shapes.drug_features + t_extra
        k = cfg.kernel_height
        p.add("drug.conv.kernels", glorot(rng, k * f_in, d, (d, k, f_in)))
        p.add("drug.conv.bias", np.zeros(d))
    for m in mods:
        two_layer(f"fusion.align.{m}", d, hid, d)
    if ablation.use_fusion:
        for name in ("w_q", "w_k", "w_v", "w_o"):
            p.add(f"fusion.attn.{name}", glorot(rng, d, d, (d, d)))
        p.add("fusion.norm.gain", np.ones(d))
        p.add("fusion.norm.bias", np.zeros(d))
    two_layer("head", len(mods) * d, hid, 1)
    return p


@dataclass
class GVHDModel:
    """Parameters plus the configuration needed to run them."""

    shapes: Shapes
    model_cfg: ModelConfig = field(default_factory=ModelConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0
    params: ModelParams | None = None
    lab_impute: np.ndarray | None = None

    def __post_init__(self):
        if self.params is None:
            self.params = build_params(self.shapes, self.model_cfg, self.ablation, self.seed)

    @property
    def modalities(self) -> list[str]:
        return self.ablation.ordered_modalities()

    def check_batch(self, batch: PatientBatch) -> None:
        s = self.shapes
        expected = {
            "demo": (s.demo_features,),
            "lab": (s.lab_steps, s.lab_features),
            "dx": (s.dx_steps, s.dx_features),
            "drug": (s.drug_steps, s.drug_features),
        }
        got = {
            "demo": batch.demo.shape[1:],
            "lab": batch.lab.values.shape[1:],
            "dx": batch.dx.values.shape[1:],
            "drug": batch.drug.values.shape[1:],
        }
        for m in self.modalities:
            if tuple(got[m]) != expected[m]:
                raise DimensionError(f"modality {m!r}: expected shape {expected[m]}, got {tuple(got[m])}")
        batch.lab.check("lab")
        batch.dx.check("dx")
        batch.drug.check("drug")

    def latents(self, batch: PatientBatch) -> dict[str, Tensor]:
        p, ab = self.params, self.ablation
        out: dict[str, Tensor] = {}
        for m in self.modalities:
            if m == "demo":
                out[m] = encode_demographics(batch.demo, p)
            elif m == "lab":
                P = lab_temporal_embedding(batch.lab.time_index, p)
                H0 = masked_dimension_extension(batch.lab, P, p, ab.missing_aware, self.lab_impute)
                out[m] = encode_lab(H0, batch.lab.time_index, p, ab.use_time_index)
            elif m == "dx":
                out[m] = encode_diagnosis(batch.dx, p, ab.use_time_index)
            else:
                out[m] = encode_drug(batch.drug, p, ab.use_time_index)
        return out

    def logits(self, batch: PatientBatch, attention_out: list | None = None) -> Tensor:
        self.check_batch(batch)
        Z = align_modalities(self.latents(batch), self.params, self.modalities)
        Zp = fuse(Z, self.params, self.model_cfg.heads, self.ablation.use_fusion, attention_out)
        return predict_logit(Zp, self.params)

    def forward(self, batch: PatientBatch) -> Tensor:
        return ad.sigmoid(self.logits(batch))

    def predict_scores(self, batch: PatientBatch, chunk: int = 256) -> np.ndarray:
        """Risk scores without recording a tape."""
        out = []
        for start in range(0, len(batch), chunk):
            idx = np.arange(start, min(start + chunk, len(batch)))
            out.append(self.forward(batch.subset(idx)).data)
        return np.concatenate(out) if out else np.zeros(0)


def forward(patient: PatientRecord | PatientBatch, model: GVHDModel) -> Tensor:
    """Risk score for one patient (scalar tensor) or a batch (``[B]``)."""
    if isinstance(patient, PatientRecord):
        return ad.reshape(model.forward(stack_records([patient])), ())
    return model.forward(patient)
