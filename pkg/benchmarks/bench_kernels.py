"""Compare the compiled (Cython) kernels with the numpy fallback.

Times each hot kernel at the reference model's shapes (batch 64, 24 lab
steps, 74 lab features, hidden width 32), then one full forward/backward pass
of the model with each backend swapped in.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from gvhd import autodiff as ad
from gvhd.autodiff import Tape, backward, kernels
from gvhd.cohort import apply_scaler, fit_scaler, generate_cohort
from gvhd.config import GeneratorConfig
from gvhd.model import GVHDModel
from gvhd.objective import pairwise_auc_margin_loss


def kernel_cases(rng, batch=64, steps=24, features=74, hidden=32, branch=16, width=4):
    xw = rng.normal(size=(batch, steps, 3 * hidden))
    u = rng.normal(size=(hidden, 3 * hidden)) * 0.2
    h0 = np.zeros((batch, hidden))
    n = batch * steps * features
    lift = dict(
        v=rng.normal(size=n), p=rng.normal(size=n), observed=rng.uniform(size=n) > 0.729,
        w1o=rng.normal(size=(2, branch)), b1o=rng.normal(size=branch),
        w2o=rng.normal(size=(branch, width)), b2o=rng.normal(size=width),
        w1m=rng.normal(size=(1, branch)), b1m=rng.normal(size=branch),
        w2m=rng.normal(size=(branch, width)), b2m=rng.normal(size=width),
    )
    g_lift = rng.normal(size=(n, width))

    def cases(be):
        hs, zs, rs, cs = be.gru_forward(xw, u, h0)
        dh = rng.normal(size=(batch, hidden))
        return {
            "gru_forward": lambda: be.gru_forward(xw, u, h0),
            "gru_backward": lambda: be.gru_backward(dh, u, hs, zs, rs, cs),
            "cell_lift_forward": lambda: be.cell_lift_forward(**lift),
            "cell_lift_backward": lambda: be.cell_lift_backward(g_lift, **lift),
        }
    return cases


def model_step(batch_size=64):
    cohort = generate_cohort(GeneratorConfig(n_patients=400, prevalence=0.05, seed=1))
    raw = cohort.batch().subset(np.arange(batch_size))
    data = apply_scaler(raw, fit_scaler(raw))
    model = GVHDModel(cohort.manifest.shapes, seed=0)

    def step():
        with Tape() as tape:
            s = model.forward(data)
            loss = pairwise_auc_margin_loss(ad.take(s, np.flatnonzero(data.labels == 1)),
                                            ad.take(s, np.flatnonzero(data.labels == 0)))
        backward(loss, tape, model.params.trainable())
    return step


def best_ms(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = [kernels.numpy_backend] + ([kernels.compiled_backend] if kernels.compiled_backend else [])
    if len(backends) == 1:
        print("compiled extension not available; timing the numpy backend only")
    build = kernel_cases(np.random.default_rng(0))
    table = {be.name: {k: best_ms(f, args.repeat) for k, f in build(be).items()} for be in backends}

    step = model_step()
    saved = kernels.backend
    try:
        for be in backends:
            kernels.backend = be
            table[be.name]["model forward+backward (64 patients)"] = best_ms(step, max(3, args.repeat // 4))
    finally:
        kernels.backend = saved

    names = list(table["numpy"])
    header = f"{'kernel':<40}" + "".join(f"{be.name + ' ms':>12}" for be in backends)
    print(header + (f"{'speedup':>10}" if len(backends) == 2 else ""))
    for k in names:
        row = f"{k:<40}" + "".join(f"{table[be.name][k]:12.2f}" for be in backends)
        if len(backends) == 2:
            row += f"{table['numpy'][k] / table['cython'][k]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
