import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvhd.autodiff import Tape, Tensor, analytic_gradients, backward, finite_difference_gradcheck
from gvhd.errors import ContractError, TrainingSetupError
from gvhd.objective import (
    DualSampler, UniformSampler, bce_loss, bce_with_logits, dual_sample_batch, pairwise_auc_margin_loss,
    positives_per_batch, progressive_fraction, progressive_sample_batch,
)


def brute_force_auc_loss(sp, sn):
    total = 0.0
    for a in sp:
        for b in sn:
            total += math.log1p(math.exp(-(a - b)))
    return total / (len(sp) * len(sn))


class TestAUCLoss:
    def test_all_equal(self):
        assert pairwise_auc_margin_loss([0.4, 0.4], [0.4]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_one_pair(self):
        assert pairwise_auc_margin_loss([1.0], [0.0]).item() == pytest.approx(0.313262, abs=1e-6)

    def test_two_positives(self):
        expected = (math.log1p(math.exp(-0.8)) + math.log1p(math.exp(-0.7))) / 2
        got = pairwise_auc_margin_loss([0.9, 0.8], [0.1]).item()
        assert got == pytest.approx(expected, abs=1e-15)
        # the exact value is 0.3871434; the published approximation 0.387142 is off in its last digit
        assert got == pytest.approx(0.387142, abs=2e-6)

    @pytest.mark.parametrize("sp,sn", [([], [0.1]), ([0.2], [])])
    def test_empty_side(self, sp, sn):
        with pytest.raises(ContractError):
            pairwise_auc_margin_loss(sp, sn)

    def test_ranking_gradient_signs(self, rng):
        sp, sn = Tensor(rng.uniform(size=5)), Tensor(rng.uniform(size=7))
        gp, gn = analytic_gradients(lambda a, b: pairwise_auc_margin_loss(a, b), [sp, sn])
        assert np.all(gp < 0) and np.all(gn > 0)

    def test_shift_invariance(self, rng):
        sp, sn = rng.uniform(size=6), rng.uniform(size=9)
        a = pairwise_auc_margin_loss(sp, sn).item()
        b = pairwise_auc_margin_loss(sp + 0.37, sn + 0.37).item()
        assert abs(a - b) < 1e-12

    def test_gradient_vs_finite_differences(self, rng):
        ins = [Tensor(rng.uniform(size=4)), Tensor(rng.uniform(size=5))]
        assert finite_difference_gradcheck(lambda a, b: pairwise_auc_margin_loss(a, b), ins, eps=1e-5) < 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 32), st.integers(1, 32), st.integers(0, 2**32 - 1))
    def test_matches_double_loop(self, n_pos, n_neg, seed):
        r = np.random.default_rng(seed)
        sp, sn = r.uniform(size=n_pos), r.uniform(size=n_neg)
        assert abs(pairwise_auc_margin_loss(sp, sn).item() - brute_force_auc_loss(sp, sn)) < 1e-12


class TestBCE:
    def test_half(self):
        assert bce_loss(np.full(4, 0.5), [1, 0, 1, 0]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_perfect_with_clamp(self):
        assert bce_loss(np.array([1.0, 0.0, 1.0]), [1, 0, 1]).item() <= 1e-6

    def test_direct_evaluation(self):
        got = bce_loss(np.array([0.9, 0.1]), [1, 0]).item()
        assert got == pytest.approx(-(math.log(0.9) + math.log(0.9)) / 2, abs=1e-14)
        assert got == pytest.approx(0.105361, abs=1e-6)

    def test_logits_form_matches_probability_form(self, rng):
        z = rng.normal(size=10)
        y = rng.integers(0, 2, 10)
        p = 1 / (1 + np.exp(-z))
        assert bce_with_logits(z, y).item() == pytest.approx(bce_loss(p, y).item(), rel=1e-12)

    def test_extreme_logits_finite(self):
        assert np.isfinite(bce_with_logits(np.array([800.0, -800.0]), [0, 1]).item())


class TestDualSampler:
    def labels(self, n_pos=5, n_neg=95):
        return np.array([1] * n_pos + [0] * n_neg)

    def test_paper_batch(self, rng):
        b = DualSampler(self.labels(40, 200), 64, 0.5, rng).sample()
        assert b.positive_count == 32 and len(b.indices) == 64

    def test_positives_repeat(self, rng):
        b = dual_sample_batch(DualSampler(self.labels(5, 95), 64, 0.5, rng))
        pos = b.indices[b.labels == 1]
        assert len(pos) == 32 and len(np.unique(pos)) <= 5

    def test_negatives_without_replacement_within_pass(self, rng):
        s = DualSampler(self.labels(5, 96), 64, 0.5, rng)
        seen = np.concatenate([s.sample().indices[32:] for _ in range(3)])
        assert len(np.unique(seen)) == 96  # exactly one pass over the 96 negatives

    def test_same_seed_same_sequence(self):
        a = DualSampler(self.labels(), 16, 0.5, np.random.default_rng(9))
        b = DualSampler(self.labels(), 16, 0.5, np.random.default_rng(9))
        for _ in range(10):
            assert np.array_equal(a.sample().indices, b.sample().indices)

    def test_no_positives(self, rng):
        with pytest.raises(TrainingSetupError):
            DualSampler(np.zeros(10), 4, 0.5, rng)

    def test_never_all_negative(self, rng):
        s = DualSampler(self.labels(1, 500), 64, 0.01, rng)
        assert all(s.sample().positive_count >= 1 for _ in range(20))

    @pytest.mark.parametrize("bs,ratio,expected", [(64, 0.5, 32), (10, 0.25, 3), (7, 0.5, 4), (64, 0.02, 2)])
    def test_rounding_toward_positives(self, bs, ratio, expected):
        assert positives_per_batch(bs, ratio) == expected

    def test_uniform_sampler_covers_everything(self, rng):
        s = UniformSampler(self.labels(), 25, rng)
        assert len(np.unique(np.concatenate([s.sample().indices for _ in range(4)]))) == 100


class TestProgressive:
    def test_endpoints(self):
        assert progressive_fraction(0, 10, 0.5, 0.02) == 0.5
        assert progressive_fraction(9, 10, 0.5, 0.02) == pytest.approx(0.02)

    def test_non_increasing(self):
        fr = [progressive_fraction(e, 25, 0.5, 0.02) for e in range(25)]
        assert all(a >= b for a, b in zip(fr, fr[1:]))

    def test_final_batch_near_prevalence(self, rng):
        labels = np.array([1] * 2 + [0] * 98)
        s = DualSampler(labels, 50, 0.5, rng)
        b = progressive_sample_batch(s, 9, 10, 0.02)
        assert abs(b.positive_count - 0.02 * 50) <= 1
