"""Finite-difference gradient suite over every differentiable op and the full model.

Each case builds small inputs, reduces the op output to a scalar through a
fixed random weighting (so every output entry contributes), and reports the
worst relative error between tape and central-difference gradients.
Ops are looked up on their modules at call time, which lets tests swap in a
deliberately broken backward as a negative control.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import encoders, fusion, objective
from .autodiff import Tensor, kernels, ops, recurrent
from .autodiff import cell_lift as cell_lift_mod
from .config import AblationConfig, ModelConfig, Shapes
from .records import ModalityBlock, PatientBatch

TOLERANCE = 1e-4
# Central-difference step: small enough that truncation (~eps^2) stays well
# under the tolerance, large enough that roundoff (~1e-16/eps) does not swamp
# the tiny gradient entries a recurrence produces. Cases with sharper
# curvature (attention) or ReLU kinks (whole model) use 1e-5.
DEFAULT_EPS = 1e-4
MINI_SHAPES = Shapes(demo_features=3, lab_features=4, lab_steps=5, dx_features=3, dx_steps=4,
                     drug_features=5, drug_steps=6)
MINI_MODEL = ModelConfig(hidden=8, ffn_hidden=8, n_frequencies=3, extension_width=2, branch_hidden=4,
                         heads=2, kernel_height=3)


@dataclass
class CaseResult:
    name: str
    worst: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst < TOLERANCE)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(w)))


def _unary(name: str, low: float = -2.0, high: float = 2.0, away_from_zero: bool = False):
    def build(rng):
        x = rng.uniform(low, high, (3, 4))
        if away_from_zero:
            x = np.where(np.abs(x) < 0.2, x + np.sign(x + 1e-12) * 0.3, x)
        w = rng.normal(size=(3, 4))
        return (lambda a: _weighted(getattr(ops, name)(a), w)), [Tensor(x)]
    return build


def _binary(name: str, shape_b=(3, 4)):
    def build(rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=shape_b)
        w = rng.normal(size=(3, 4))
        return (lambda x, y: _weighted(getattr(ops, name)(x, y), w)), [Tensor(a), Tensor(b)]
    return build


def _matmul(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    w = rng.normal(size=(2, 3, 5))
    return (lambda x, y: _weighted(ops.matmul(x, y), w)), [Tensor(a), Tensor(b)]


def _where(rng):
    cond = rng.uniform(size=(3, 4)) < 0.5
    w = rng.normal(size=(3, 4))
    return (lambda x, y: _weighted(ops.where(cond, x, y), w)), [Tensor(rng.normal(size=(3, 4))),
                                                                  Tensor(rng.normal(size=(3, 4)))]


def _shape_ops(rng):
    w = rng.normal(size=(4, 3, 2))

    def fn(x):
        y = ops.swapaxes(ops.reshape(x, (3, 4, 2)), 0, 1)
        return _weighted(ops.reshape(ops.flatten(y, 1), (4, 3, 2)), w)
    return fn, [Tensor(rng.normal(size=(2, 12)))]


def _concat_stack(rng):
    w1, w2 = rng.normal(size=(3, 7)), rng.normal(size=(2, 3, 4))

    def fn(a, b):
        c = ops.concat([a, b], axis=1)
        s = ops.stack([a, ops.mul(a, a)], axis=0)
        return ops.add(_weighted(c, w1), _weighted(s, w2))
    return fn, [Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 3)))]


def _take(rng):
    idx = np.array([0, 2, 2, 1])
    w = rng.normal(size=(4, 3))
    return (lambda x: _weighted(ops.take(x, idx, axis=0), w)), [Tensor(rng.normal(size=(3, 3)))]


def _reduce(name: str):
    def build(rng):
        w = rng.normal(size=(3,))
        return (lambda x: _weighted(getattr(ops, name)(x, axis=1), w)), [Tensor(rng.normal(size=(3, 4)))]
    return build


def _softmax(rng):
    w = rng.normal(size=(3, 5))
    return (lambda x: _weighted(ops.softmax(x, axis=-1), w)), [Tensor(rng.normal(size=(3, 5)))]


def _layer_norm(rng):
    w = rng.normal(size=(3, 6))
    return ((lambda x, g, b: _weighted(ops.layer_norm(x, g, b), w)),
            [Tensor(rng.normal(size=(3, 6))), Tensor(rng.uniform(0.5, 1.5, 6)), Tensor(rng.normal(size=6))])


def _conv(rng):
    w = rng.normal(size=(2, 6, 4))
    return ((lambda x, k, b: _weighted(ops.conv_time_fullwidth(x, k, b), w)),
            [Tensor(rng.normal(size=(2, 6, 5))), Tensor(rng.normal(size=(4, 3, 5)) * 0.5),
             Tensor(rng.normal(size=4))])


def _gru(backend_name: str):
    def build(rng):
        backend = kernels.numpy_backend if backend_name == "numpy" else kernels.backend
        h = 3
        w = rng.normal(size=(2, h))

        def fn(xw, u, h0):
            return _weighted(recurrent.gru_recurrence(xw, u, h0, backend=backend), w)
        return fn, [Tensor(rng.normal(size=(2, 5, 3 * h))), Tensor(rng.normal(size=(h, 3 * h)) * 0.5),
                    Tensor(rng.normal(size=(2, h)) * 0.5)]
    return build


def _gru_sequence(rng):
    w = rng.normal(size=(2, 3))

    def fn(x, wi, u, b):
        return _weighted(recurrent.gru_sequence(x, wi, u, b), w)
    return fn, [Tensor(rng.normal(size=(2, 4, 3))), Tensor(rng.normal(size=(3, 9)) * 0.5),
                Tensor(rng.normal(size=(3, 9)) * 0.5), Tensor(rng.normal(size=9) * 0.1)]


_CELL_KEYS = ("w1o", "b1o", "w2o", "b2o", "w1m", "b1m", "w2m", "b2m")


def _cell_lift(backend_name: str):
    def build(rng):
        backend = kernels.numpy_backend if backend_name == "numpy" else kernels.backend
        H, E = 4, 2
        shapes = {"w1o": (2, H), "b1o": (H,), "w2o": (H, E), "b2o": (E,),
                  "w1m": (1, H), "b1m": (H,), "w2m": (H, E), "b2m": (E,)}
        weights = [Tensor(rng.normal(size=shapes[k])) for k in _CELL_KEYS]
        values = rng.normal(size=(2, 3, 4))
        observed = rng.uniform(size=(2, 3, 4)) < 0.5
        w = rng.normal(size=(2, 3, 4, E))

        def fn(p, *ws):
            return _weighted(cell_lift_mod.masked_cell_lift(values, p, observed, dict(zip(_CELL_KEYS, ws)),
                                                            backend=backend), w)
        return fn, [Tensor(rng.normal(size=(2, 3, 4)))] + weights
    return build


def _auc_loss(rng):
    return ((lambda sp, sn: objective.pairwise_auc_margin_loss(sp, sn)),
            [Tensor(rng.uniform(0.1, 0.9, 4)), Tensor(rng.uniform(0.1, 0.9, 6))])


def _bce(rng):
    y = (rng.uniform(size=6) < 0.5).astype(float)
    return (lambda l: objective.bce_with_logits(l, y)), [Tensor(rng.normal(size=6))]


def _mini_batch(rng, n: int = 4) -> PatientBatch:
    s = MINI_SHAPES

    def g(T):
        return np.sort(rng.uniform(0, 1, (n, T)), axis=1)
    return PatientBatch(
        ids=[f"g{i}" for i in range(n)],
        demo=rng.normal(size=(n, s.demo_features)),
        dx=ModalityBlock(rng.normal(size=(n, s.dx_steps, s.dx_features)), g(s.dx_steps)),
        lab=ModalityBlock(rng.normal(size=(n, s.lab_steps, s.lab_features)), g(s.lab_steps),
                          (rng.uniform(size=(n, s.lab_steps, s.lab_features)) < 0.5).astype(float)),
        drug=ModalityBlock(rng.poisson(1.0, size=(n, s.drug_steps, s.drug_features)).astype(float), g(s.drug_steps)),
        labels=np.array([1, 0, 1, 0][:n] + [0] * max(0, n - 4)),
    )


def _temporal_embedding(rng):
    g = np.sort(rng.uniform(size=(2, 5)), axis=1)
    w = rng.normal(size=(2, 5, 4))

    def fn(freq, a, b):
        p = {"lab.temporal.freq": freq, "lab.temporal.sin_coeff": a, "lab.temporal.cos_coeff": b}
        return _weighted(encoders.lab_temporal_embedding(g, p), w)
    return fn, [Tensor(np.arange(1.0, 4.0)), Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))]


def _attention(rng):
    d, heads = 8, 2
    w = rng.normal(size=(2, 3, d))

    def fn(z, wq, wk, wv, wo):
        p = {"fusion.attn.w_q": wq, "fusion.attn.w_k": wk, "fusion.attn.w_v": wv, "fusion.attn.w_o": wo}
        return _weighted(fusion.multi_head_attention(z, p, heads), w)
    return fn, [Tensor(rng.normal(size=(2, 3, d)))] + [Tensor(rng.normal(size=(d, d)) * 0.3) for _ in range(4)]


def _model(rng):
    from .model import GVHDModel
    model = GVHDModel(MINI_SHAPES, MINI_MODEL, AblationConfig(), seed=int(rng.integers(1 << 30)))
    batch = _mini_batch(rng)
    pos, neg = np.flatnonzero(batch.labels == 1), np.flatnonzero(batch.labels == 0)
    params = list(model.params.trainable())

    def fn(*_):
        s = ad.sigmoid(model.logits(batch))
        return objective.pairwise_auc_margin_loss(ad.take(s, pos), ad.take(s, neg))
    return fn, params


Case = tuple[str, Callable, dict]

CASES: list[Case] = [
    ("add", _binary("add", (4,)), {}),
    ("sub", _binary("sub", (3, 1)), {}),
    ("mul", _binary("mul"), {}),
    ("matmul", _matmul, {}),
    ("sigmoid", _unary("sigmoid"), {}),
    ("tanh", _unary("tanh"), {}),
    ("relu", _unary("relu", away_from_zero=True), {}),
    ("exp", _unary("exp"), {}),
    ("log", _unary("log", 0.5, 3.0), {}),
    ("softplus", _unary("softplus"), {}),
    ("sin", _unary("sin"), {}),
    ("cos", _unary("cos"), {}),
    ("where", _where, {}),
    ("reshape/flatten/swapaxes", _shape_ops, {}),
    ("concat/stack", _concat_stack, {}),
    ("take", _take, {}),
    ("sum", _reduce("sum"), {}),
    ("mean", _reduce("mean"), {}),
    ("softmax", _softmax, {}),
    ("layer_norm", _layer_norm, {}),
    ("conv_time_fullwidth", _conv, {}),
    ("gru_recurrence[numpy]", _gru("numpy"), {}),
    ("gru_recurrence[active]", _gru("active"), {}),
    ("gru_sequence", _gru_sequence, {}),
    ("masked_cell_lift[numpy]", _cell_lift("numpy"), {}),
    ("masked_cell_lift[active]", _cell_lift("active"), {}),
    ("temporal_embedding", _temporal_embedding, {}),
    ("multi_head_attention", _attention, {"eps": 1e-5}),
    ("pairwise_auc_margin_loss", _auc_loss, {}),
    ("bce_with_logits", _bce, {}),
    ("model_end_to_end", _model, {"max_entries": 6, "eps": 1e-5}),
]


def run_case(name: str, build: Callable, opts: dict, seed: int = 0) -> CaseResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    fn, inputs = build(rng)
    t0 = time.perf_counter()
    worst = ad.finite_difference_gradcheck(fn, inputs, eps=opts.get("eps", DEFAULT_EPS),
                                           max_entries=opts.get("max_entries"), seed=seed)
    return CaseResult(name, float(worst), time.perf_counter() - t0)


def run_suite(cases: list[Case] | None = None, seed: int = 0) -> list[CaseResult]:
    return [run_case(name, build, opts, seed) for name, build, opts in (CASES if cases is None else cases)]


def format_table(results: list[CaseResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  {'worst rel err':>13}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.worst:>13.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
