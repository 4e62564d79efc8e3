"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def analytic_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
    backward(out, tape, inputs)
    grads = [t.grad.copy() for t in inputs]
    for t in inputs:
        t.grad = None
    return grads


def finite_difference_gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between backward-pass and central-difference gradients.

    ``fn`` maps ``inputs`` to a scalar tensor and must be deterministic. The
    relative error of an entry is ``|a - n| / max(|a|, |n|, 1e-8)``. With
    ``max_entries`` set, each input is checked on at most that many coordinates
    chosen by a seeded generator.
    """
    grads = analytic_gradients(fn, inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(inputs, grads):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        gflat = g.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn(*inputs).item()
            flat[i] = orig - eps
            fm = fn(*inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            ana = gflat[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
