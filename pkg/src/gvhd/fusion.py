"""Cross-modal alignment, attention fusion and the risk head."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import ffn
from .errors import ConfigError, DimensionError

# Row order of the stacked modality matrix.
ROW_ORDER = ("demo", "lab", "dx", "drug")


def align_modalities(latents: dict[str, Tensor], params, order=ROW_ORDER) -> Tensor:
    """Project each latent through its own MLP to width d and stack as rows.

    Returns ``[B, m, d]`` (or ``[m, d]`` for unbatched latents) with rows in
    ``order``; row 0 is demographics under the default order.
    """
    rows = [ffn(latents[m], params, f"fusion.align.{m}") for m in order]
    axis = rows[0].ndim - 1
    return ad.stack(rows, axis=axis)


def multi_head_attention(Z: Tensor, params, heads: int, attention_out: list | None = None) -> Tensor:
    *lead, m, d = Z.shape
    if d % heads:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x):
        # [..., m, d] -> [..., heads, m, dh]
        return ad.swapaxes(ad.reshape(x, tuple(lead) + (m, heads, dh)), -3, -2)

    q = split(ad.matmul(Z, params["fusion.attn.w_q"]))
    k = split(ad.matmul(Z, params["fusion.attn.w_k"]))
    v = split(ad.matmul(Z, params["fusion.attn.w_v"]))
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
    weights = ad.softmax(scores, axis=-1)
    if attention_out is not None:
        attention_out.append(weights.data)
    ctx = ad.matmul(weights, v)
    ctx = ad.reshape(ad.swapaxes(ctx, -3, -2), tuple(lead) + (m, d))
    return ad.matmul(ctx, params["fusion.attn.w_o"])


def fuse(Z: Tensor, params, heads: int = 4, use_fusion: bool = True, attention_out: list | None = None) -> Tensor:
    """``LayerNorm(Z + MHA(Z))``; identity when ``use_fusion`` is off."""
    if Z.ndim < 2:
        raise DimensionError(f"fuse expects [..., m, d], got {Z.shape}")
    if Z.shape[-1] % heads:
        raise ConfigError(f"width {Z.shape[-1]} not divisible by {heads} heads")
    if not use_fusion:
        return Z
    attended = multi_head_attention(Z, params, heads, attention_out)
    return ad.layer_norm(ad.add(Z, attended), params["fusion.norm.gain"], params["fusion.norm.bias"])


def predict_logit(Zp: Tensor, params) -> Tensor:
    """Flatten the fused rows and map them to one logit per patient."""
    squeezed = Zp.ndim == 2
    flat = ad.reshape(Zp, (1, -1)) if squeezed else ad.flatten(Zp, 1)
    logit = ffn(flat, params, "head")
    return ad.reshape(logit, () if squeezed else (logit.shape[0],))


def predict(Zp: Tensor, params) -> Tensor:
    return ad.sigmoid(predict_logit(Zp, params))
