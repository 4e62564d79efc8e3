"""Modality encoders mapping raw blocks to fixed-width latent vectors.

All encoders accept single-patient arrays or stacked batches; the leading
batch axis is optional and preserved.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, EmptySequenceError
from .records import ModalityBlock

TWO_PI = 2.0 * np.pi


def ffn(x, params, prefix: str):
    """Two-layer feed-forward net ``relu(x W1 + b1) W2 + b2`` over the last axis."""
    x = ad.as_tensor(x)
    if x.ndim == 1:
        return ad.reshape(ffn(ad.reshape(x, (1, -1)), params, prefix), (-1,))
    h = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}.l1.w"]), params[f"{prefix}.l1.b"]))
    return ad.add(ad.matmul(h, params[f"{prefix}.l2.w"]), params[f"{prefix}.l2.b"])


def _batched(x: np.ndarray, core_ndim: int) -> tuple[np.ndarray, bool]:
    if x.ndim == core_ndim:
        return x[None], True
    return x, False


def _with_time(values: np.ndarray, time_index: np.ndarray, use_time_index: bool) -> np.ndarray:
    if not use_time_index:
        return values
    return np.concatenate([values, time_index[..., None]], axis=-1)


def _unbatch(out: Tensor, squeezed: bool) -> Tensor:
    return ad.reshape(out, out.shape[1:]) if squeezed else out


def encode_demographics(x, params) -> Tensor:
    x_arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    expected = params["demo.ffn.l1.w"].shape[0]
    if x_arr.shape[-1] != expected:
        raise DimensionError(f"demographics: expected {expected} features, got {x_arr.shape}")
    squeezed = x_arr.ndim == 1
    xt = x if isinstance(x, Tensor) else Tensor(x_arr)
    if squeezed:
        xt = ad.reshape(xt, (1, -1))
    return _unbatch(ffn(xt, params, "demo.ffn"), squeezed)


def encode_diagnosis(block: ModalityBlock, params, use_time_index: bool = True) -> Tensor:
    if block.mask is not None:
        raise ContractError("diagnosis blocks carry no mask")
    if block.steps == 0:
        raise EmptySequenceError("diagnosis block has no steps")
    values, squeezed = _batched(block.values, 2)
    g, _ = _batched(block.time_index, 1)
    x = _with_time(values, g, use_time_index)
    h = ad.gru_sequence(Tensor(x), params["dx.gru.w"], params["dx.gru.u"], params["dx.gru.b"])
    return _unbatch(h, squeezed)


def lab_temporal_embedding(time_index, params) -> Tensor:
    """Learnable Fourier features of the time index, one value per (step, lab).

    ``P[t, f] = sum_k a[k, f] sin(2 pi w_k g_t) + b[k, f] cos(2 pi w_k g_t)``.
    """
    g = np.asarray(time_index, dtype=np.float64)
    phase = ad.mul(Tensor(TWO_PI * g[..., None]), params["lab.temporal.freq"])
    return ad.add(
        ad.matmul(ad.sin(phase), params["lab.temporal.sin_coeff"]),
        ad.matmul(ad.cos(phase), params["lab.temporal.cos_coeff"]),
    )


def masked_dimension_extension(
    block: ModalityBlock,
    P: Tensor,
    params,
    missing_aware: bool = True,
    impute_values: np.ndarray | None = None,
    fused: bool = True,
) -> Tensor:
    """Lift every lab cell into ``e`` dims; observed cells see (value, P), missing cells only P.

    Returns ``[..., T, F * e]``. With ``missing_aware`` off, missing cells are
    filled with ``impute_values`` (per-feature, default 0 = scaled mean) and all
    cells go through the observed branch. ``fused=False`` evaluates the same
    map from primitive ops (both branches on every cell, then a select).
    """
    if block.mask is None:
        raise ContractError("lab block needs a mask for masked dimension extension")
    if P.shape != block.values.shape:
        raise DimensionError(f"temporal embedding {P.shape} != lab values {block.values.shape}")
    observed = block.mask > 0.5
    fill = np.zeros(block.features) if impute_values is None else np.asarray(impute_values, dtype=np.float64)
    if not missing_aware:
        # imputed cells are treated as observed
        vals = np.where(observed, block.values, fill)
        observed = np.ones_like(observed)
    else:
        # masked cells are replaced before the observed branch can read them
        vals = np.where(observed, block.values, 0.0)
    if fused:
        weights = {
            "w1o": params["lab.observed.l1.w"], "b1o": params["lab.observed.l1.b"],
            "w2o": params["lab.observed.l2.w"], "b2o": params["lab.observed.l2.b"],
            "w1m": params["lab.missing.l1.w"], "b1m": params["lab.missing.l1.b"],
            "w2m": params["lab.missing.l2.w"], "b2m": params["lab.missing.l2.b"],
        }
        out = ad.masked_cell_lift(vals, P, observed, weights)
    else:
        cell_shape = block.values.shape + (1,)
        p_cell = ad.reshape(P, cell_shape)
        obs_in = ad.concat([Tensor(vals.reshape(cell_shape)), p_cell], axis=-1)
        out = ffn(obs_in, params, "lab.observed")
        if missing_aware:
            out = ad.where(observed[..., None], out, ffn(p_cell, params, "lab.missing"))
    e = out.shape[-1]
    return ad.reshape(out, block.values.shape[:-1] + (block.features * e,))


def encode_lab(H0: Tensor, time_index, params, use_time_index: bool = True) -> Tensor:
    g = np.asarray(time_index, dtype=np.float64)
    if H0.shape[:-1] != g.shape:
        raise DimensionError(f"lab: extended rows {H0.shape} do not match time_index {g.shape}")
    squeezed = H0.ndim == 2
    if squeezed:
        H0 = ad.reshape(H0, (1,) + H0.shape)
        g = g[None]
    x = ad.concat([H0, Tensor(g[..., None])], axis=-1) if use_time_index else H0
    h = ad.gru_sequence(x, params["lab.gru.w"], params["lab.gru.u"], params["lab.gru.b"])
    return _unbatch(h, squeezed)


def encode_drug(block: ModalityBlock, params, use_time_index: bool = True) -> Tensor:
    values, squeezed = _batched(block.values, 2)
    g, _ = _batched(block.time_index, 1)
    x = _with_time(values, g, use_time_index)
    conv = ad.relu(ad.conv_time_fullwidth(Tensor(x), params["drug.conv.kernels"], params["drug.conv.bias"]))
    return _unbatch(ad.mean(conv, axis=-2), squeezed)
