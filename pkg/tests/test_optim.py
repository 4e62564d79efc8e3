import numpy as np
import pytest

from gvhd.config import AblationConfig, ModelConfig, Shapes, TrainConfig
from gvhd.errors import NonFiniteGradientError
from gvhd.metrics import roc_auc
from gvhd.model import GVHDModel
from gvhd.optim import MomentumSGD, optimizer_step, train
from gvhd.params import ModelParams
from gvhd.records import ModalityBlock, PatientBatch

from conftest import random_batch


def scalar_params(value=1.0):
    p = ModelParams()
    p.add("theta", np.array([value]))
    return p


class TestMomentumSGD:
    def test_zero_gradient(self):
        p = scalar_params()
        opt = MomentumSGD(p, lr=0.001, weight_decay=0.0, proximal_weight=0.0)
        opt.state.velocity["theta"][:] = 2.0
        p["theta"].grad = np.zeros(1)
        opt.step()
        assert opt.state.velocity["theta"][0] == pytest.approx(1.8)
        # theta moves only by the decayed velocity, not by any new gradient
        assert p["theta"].data[0] == pytest.approx(1.0 - 0.001 * 1.8)

    def test_zero_gradient_zero_velocity_unchanged(self):
        p = scalar_params()
        opt = MomentumSGD(p, lr=0.001, weight_decay=0.0, proximal_weight=0.0)
        p["theta"].grad = np.zeros(1)
        opt.step()
        assert p["theta"].data[0] == 1.0

    def test_single_step(self):
        p = scalar_params()
        opt = MomentumSGD(p, lr=0.001, weight_decay=0.0, proximal_weight=0.0)
        p["theta"].grad = np.ones(1)
        optimizer_step(opt)
        assert p["theta"].data[0] == pytest.approx(0.999, abs=1e-15)

    def test_two_steps(self):
        p = scalar_params()
        opt = MomentumSGD(p, lr=0.001, weight_decay=0.0, proximal_weight=0.0)
        for _ in range(2):
            p["theta"].grad = np.ones(1)
            opt.step()
        assert p["theta"].data[0] == pytest.approx(0.9971, abs=1e-15)
        assert opt.state.step == 2

    def test_decoupled_weight_decay(self):
        p = scalar_params(2.0)
        opt = MomentumSGD(p, lr=0.1, momentum=0.0, weight_decay=0.5, proximal_weight=0.0)
        p["theta"].grad = np.zeros(1)
        opt.step()
        assert p["theta"].data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_proximal_pull_toward_epoch_anchor(self):
        p = scalar_params(1.0)
        opt = MomentumSGD(p, lr=0.1, momentum=0.0, weight_decay=0.0, proximal_weight=0.5, grad_clip=None)
        p["theta"].data[:] = 3.0  # drifted away from the anchor at 1.0
        p["theta"].grad = np.zeros(1)
        opt.step()
        assert p["theta"].data[0] == pytest.approx(3.0 - 0.1 * 2 * 0.5 * 2.0)
        opt.epoch_boundary()
        p["theta"].grad = np.zeros(1)
        before = p["theta"].data[0]
        opt.step()
        assert p["theta"].data[0] == before

    def test_clipping(self):
        p = scalar_params(0.0)
        opt = MomentumSGD(p, lr=1.0, momentum=0.0, weight_decay=0.0, proximal_weight=0.0, grad_clip=5.0)
        p["theta"].grad = np.array([50.0])
        assert opt.step() == 50.0
        assert p["theta"].data[0] == pytest.approx(-5.0)

    def test_nan_names_parameter(self):
        p = scalar_params()
        p.add("lab.gru.w", np.ones((2, 2)))
        opt = MomentumSGD(p)
        p["theta"].grad = np.zeros(1)
        p["lab.gru.w"].grad = np.array([[0.0, np.nan], [0.0, 0.0]])
        with pytest.raises(NonFiniteGradientError, match="lab.gru.w"):
            opt.step()


def separable_cohort(rng, shapes, n=80, n_pos=16):
    """One drug's total count separates the classes perfectly."""
    b = random_batch(rng, shapes, n=n)
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_pos] = 1
    drug = b.drug.values.copy()
    drug[:, :, 0] = 0.0
    drug[labels == 1, :, 0] = 3.0
    return PatientBatch(b.ids, b.demo, b.dx, b.lab, ModalityBlock(drug, b.drug.time_index), labels)


class TestTrain:
    def test_zero_epochs_returns_init(self, small_shapes, small_model_cfg, batch):
        m = GVHDModel(small_shapes, small_model_cfg, seed=1)
        before = m.params.state()
        res = train(m, batch, batch, TrainConfig(epochs=0))
        assert res.history == []
        for k, v in before.items():
            assert np.array_equal(m.params[k].data, v)

    def test_separable_toy_reaches_auc_one(self, rng, small_shapes, small_model_cfg):
        data = separable_cohort(rng, small_shapes)
        m = GVHDModel(small_shapes, small_model_cfg, seed=0)
        cfg = TrainConfig(epochs=50, batch_size=16)
        res = train(m, data, data, cfg, seed=0)
        assert roc_auc(data.labels, m.predict_scores(data)) == 1.0
        assert max(r.valid_auc for r in res.history) == 1.0

    def test_history_deterministic(self, rng, small_shapes, small_model_cfg):
        data = separable_cohort(rng, small_shapes)
        runs = []
        for _ in range(2):
            m = GVHDModel(small_shapes, small_model_cfg, seed=2)
            runs.append(train(m, data, data, TrainConfig(epochs=3, batch_size=16), seed=5).history_csv())
        assert runs[0] == runs[1]
        assert runs[0].splitlines()[0] == "epoch,train_loss,valid_auc,valid_auprc"

    def test_restores_best_epoch(self, rng, small_shapes, small_model_cfg):
        data = separable_cohort(rng, small_shapes)
        m = GVHDModel(small_shapes, small_model_cfg, seed=2)
        res = train(m, data, data, TrainConfig(epochs=4, batch_size=16), seed=1)
        best = res.history[res.best_epoch].valid_auc
        assert roc_auc(data.labels, m.predict_scores(data)) == pytest.approx(best, abs=1e-12)

    @pytest.mark.parametrize("objective", ["bce", "bce_progressive"])
    def test_other_objectives_run(self, rng, small_shapes, small_model_cfg, objective):
        data = separable_cohort(rng, small_shapes)
        m = GVHDModel(small_shapes, small_model_cfg, seed=2)
        res = train(m, data, data, TrainConfig(epochs=2, batch_size=16, objective=objective), seed=1)
        assert len(res.history) == 2 and np.isfinite(res.history[-1].train_loss)
