import numpy as np
import pytest

from gvhd.config import GeneratorConfig, ModelConfig, Shapes
from gvhd.records import ModalityBlock, PatientBatch

SMALL_SHAPES = Shapes(demo_features=4, lab_features=6, lab_steps=5, dx_features=4, dx_steps=3,
                      drug_features=7, drug_steps=5)
SMALL_MODEL = ModelConfig(hidden=8, ffn_hidden=16, n_frequencies=3, extension_width=2, branch_hidden=4,
                          heads=2, kernel_height=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_shapes():
    return SMALL_SHAPES


@pytest.fixture
def small_model_cfg():
    return SMALL_MODEL


def random_batch(rng, shapes: Shapes = SMALL_SHAPES, n: int = 6, missing: float = 0.5) -> PatientBatch:
    def g(T):
        return np.sort(rng.uniform(0, 1, (n, T)), axis=1)

    mask = (rng.uniform(size=(n, shapes.lab_steps, shapes.lab_features)) >= missing).astype(float)
    lab = np.where(mask > 0, rng.normal(size=mask.shape), 0.0)
    labels = np.zeros(n, dtype=np.int64)
    labels[: max(1, n // 3)] = 1
    return PatientBatch(
        ids=[f"T{i:03d}" for i in range(n)],
        demo=rng.normal(size=(n, shapes.demo_features)),
        dx=ModalityBlock(rng.normal(size=(n, shapes.dx_steps, shapes.dx_features)), g(shapes.dx_steps)),
        lab=ModalityBlock(lab, g(shapes.lab_steps), mask),
        drug=ModalityBlock(rng.poisson(0.7, size=(n, shapes.drug_steps, shapes.drug_features)).astype(float),
                           g(shapes.drug_steps)),
        labels=labels,
    )


@pytest.fixture
def batch(rng):
    return random_batch(rng)


@pytest.fixture
def small_generator():
    # 400 patients at 5% prevalence: 20 positives, enough for 4 folds
    return GeneratorConfig(n_patients=400, prevalence=0.05, shapes=SMALL_SHAPES, seed=3)


# ------------------------------------------------------------------ acceptance reporting

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def record(name: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
