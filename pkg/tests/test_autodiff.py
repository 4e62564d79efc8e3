import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvhd import autodiff as ad
from gvhd.autodiff import Parameter, Tape, Tensor, backward, finite_difference_gradcheck
from gvhd.autodiff import recurrent
from gvhd.diagnostics import CASES, run_case
from gvhd.errors import ConfigError, ContractError, DimensionError, EmptySequenceError


def grads_of(fn, *arrays):
    ts = [Tensor(np.asarray(a, dtype=float), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*ts)
    backward(out, tape, ts)
    return out, [t.grad for t in ts]


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(np.eye(2), a).data, a)

    def test_against_triple_loop(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0], [6.0]])
        naive = np.zeros((2, 1))
        for i in range(2):
            for j in range(1):
                for k in range(2):
                    naive[i, j] += a[i, k] * b[k, j]
        np.testing.assert_array_equal(ad.matmul(a, b).data, naive)
        np.testing.assert_array_equal(naive, [[17.0], [39.0]])

    def test_backward_hand_chain_rule(self):
        _, (da, db) = grads_of(lambda a, b: ad.tsum(ad.matmul(a, b)), [[1.0, 0.0]], [[2.0], [3.0]])
        np.testing.assert_array_equal(da, [[2.0, 3.0]])
        # dB = A^T dC = [[1], [0]]: the second row of B never meets a nonzero entry of A
        np.testing.assert_array_equal(db, [[1.0], [0.0]])
        fd = [(np.sum(np.array([[1.0, 0.0]]) @ (np.array([[2.0], [3.0]]) + e)) -
               np.sum(np.array([[1.0, 0.0]]) @ (np.array([[2.0], [3.0]]) - e))) / 2e-3
              for e in (np.array([[1e-3], [0.0]]), np.array([[0.0], [1e-3]]))]
        np.testing.assert_allclose(db.ravel(), fd, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(np.ones((2, 3)), np.ones((2, 2)))


def manual_gru_step(x, h, w, u, b):
    hdim = h.shape[-1]
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    xw = x @ w + b
    z = sig(xw[:hdim] + h @ u[:, :hdim])
    r = sig(xw[hdim:2 * hdim] + h @ u[:, hdim:2 * hdim])
    c = np.tanh(xw[2 * hdim:] + (r * h) @ u[:, 2 * hdim:])
    return (1 - z) * h + z * c


class TestGRU:
    def test_zero_weights_stay_at_zero(self, rng):
        h = ad.gru_sequence(rng.normal(size=(7, 3)), np.zeros((3, 12)), np.zeros((4, 12)), np.zeros(12))
        np.testing.assert_array_equal(h.data, np.zeros(4))

    def test_single_step_matches_hand_evaluation(self, rng):
        x = rng.normal(size=(1, 3))
        w, u, b = rng.normal(size=(3, 12)), rng.normal(size=(4, 12)), rng.normal(size=12)
        h0 = rng.normal(size=4)
        got = ad.gru_sequence(x, w, u, b, h0=h0).data
        np.testing.assert_allclose(got, manual_gru_step(x[0], h0, w, u, b), rtol=0, atol=1e-14)

    def test_multi_step_matches_hand_loop(self, rng):
        x = rng.normal(size=(5, 3))
        w, u, b = rng.normal(size=(3, 6)), rng.normal(size=(2, 6)), rng.normal(size=6)
        h = np.zeros(2)
        for t in range(5):
            h = manual_gru_step(x[t], h, w, u, b)
        np.testing.assert_allclose(ad.gru_sequence(x, w, u, b).data, h, atol=1e-13)

    def test_gradcheck_every_weight(self, rng):
        x = Tensor(rng.normal(size=(4, 3)))
        ws = [Tensor(rng.normal(size=(3, 9)) * 0.5), Tensor(rng.normal(size=(3, 9)) * 0.5),
              Tensor(rng.normal(size=9) * 0.1)]
        err = finite_difference_gradcheck(lambda x_, w, u, b: ad.tsum(ad.gru_sequence(x_, w, u, b)),
                                          [x] + ws, eps=1e-5)
        assert err < 1e-4

    def test_empty_sequence(self):
        with pytest.raises(EmptySequenceError):
            ad.gru_sequence(np.zeros((0, 3)), np.zeros((3, 6)), np.zeros((2, 6)), np.zeros(6))

    def test_bad_weight_shape(self):
        with pytest.raises(DimensionError):
            ad.gru_sequence(np.zeros((2, 3)), np.zeros((4, 6)), np.zeros((2, 6)), np.zeros(6))

    def test_numpy_and_active_backends_agree(self, rng):
        from gvhd.autodiff import kernels
        xw, u, h0 = rng.normal(size=(3, 6, 12)), rng.normal(size=(4, 12)), rng.normal(size=(3, 4))
        a = recurrent.gru_recurrence(xw, u, h0, backend=kernels.numpy_backend).data
        b = recurrent.gru_recurrence(xw, u, h0, backend=kernels.backend).data
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


class TestConv:
    def test_k1_ones_kernel(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = ad.conv_time_fullwidth(x, np.ones((1, 1, 2)), np.zeros(1))
        np.testing.assert_array_equal(out.data[:, 0], [3.0, 7.0, 11.0])

    def test_zero_kernel_gives_bias(self, rng):
        out = ad.conv_time_fullwidth(rng.normal(size=(4, 3)), np.zeros((2, 3, 3)), np.array([0.5, -2.0]))
        np.testing.assert_array_equal(out.data, np.tile([0.5, -2.0], (4, 1)))

    def test_against_naive_loop(self, rng):
        T, f, c, k = 6, 4, 3, 3
        x, kern, bias = rng.normal(size=(T, f)), rng.normal(size=(c, k, f)), rng.normal(size=c)
        pad = np.vstack([np.zeros((1, f)), x, np.zeros((1, f))])
        naive = np.array([[np.sum(pad[t:t + k] * kern[j]) + bias[j] for j in range(c)] for t in range(T)])
        np.testing.assert_allclose(ad.conv_time_fullwidth(x, kern, bias).data, naive, atol=1e-13)

    def test_gradcheck(self, rng):
        ins = [Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=2))]
        assert finite_difference_gradcheck(lambda x, k, b: ad.tsum(ad.tanh(ad.conv_time_fullwidth(x, k, b))),
                                           ins, eps=1e-5) < 1e-4

    @pytest.mark.parametrize("k", [2, 4])
    def test_even_kernel_rejected(self, k):
        with pytest.raises(ConfigError):
            ad.conv_time_fullwidth(np.ones((5, 2)), np.ones((1, k, 2)), np.zeros(1))

    def test_kernel_taller_than_allowed(self):
        with pytest.raises(ConfigError):
            ad.conv_time_fullwidth(np.ones((1, 2)), np.ones((1, 5, 2)), np.zeros(1))

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv_time_fullwidth(np.ones((4, 2)), np.ones((1, 3, 3)), np.zeros(1))


class TestLayerNorm:
    def test_direct_formula(self):
        out = ad.layer_norm(np.array([1.0, 2.0, 3.0]), np.ones(3), np.zeros(3)).data
        np.testing.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-3)
        var = 2.0 / 3.0
        np.testing.assert_allclose(out, (np.array([1.0, 2.0, 3.0]) - 2.0) / np.sqrt(var + 1e-5), atol=1e-15)

    def test_constant_row_gives_bias(self):
        out = ad.layer_norm(np.full((2, 4), 7.0), np.ones(4), np.array([0.1, 0.2, 0.3, 0.4])).data
        np.testing.assert_allclose(out, np.tile([0.1, 0.2, 0.3, 0.4], (2, 1)), atol=1e-12)

    def test_gradcheck(self, rng):
        ins = [Tensor(rng.normal(size=(3, 5))), Tensor(rng.uniform(0.5, 2, 5)), Tensor(rng.normal(size=5))]
        w = rng.normal(size=(3, 5))
        assert finite_difference_gradcheck(lambda x, g, b: ad.tsum(ad.mul(ad.layer_norm(x, g, b), w)),
                                           ins, eps=1e-5) < 1e-4


class TestPointwise:
    def test_sigmoid_zero(self):
        assert ad.sigmoid(0.0).item() == 0.5

    def test_mean_pool(self):
        np.testing.assert_array_equal(ad.mean(np.array([[2.0], [4.0]]), axis=0).data, [3.0])

    def test_concat_last_axis(self):
        np.testing.assert_array_equal(ad.concat([np.array([1.0, 2.0]), np.array([3.0])]).data, [1.0, 2.0, 3.0])

    def test_concat_mismatch(self):
        with pytest.raises(DimensionError):
            ad.concat([np.ones((2, 2)), np.ones((3, 1))], axis=-1)

    def test_flatten(self):
        assert ad.flatten(np.zeros((2, 3, 4)), 1).shape == (2, 12)

    def test_sigmoid_tanh_saturate_finitely(self):
        x = np.array([-800.0, 800.0])
        _, (g,) = grads_of(lambda t: ad.tsum(ad.add(ad.sigmoid(t), ad.tanh(t))), x)
        assert np.all(np.isfinite(ad.sigmoid(x).data)) and np.all(np.isfinite(g))

    def test_softmax_rows_sum_to_one(self, rng):
        s = ad.softmax(rng.normal(size=(5, 7)) * 30).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


class TestBackward:
    def test_square(self):
        _, (g,) = grads_of(lambda x: ad.mul(x, x), 3.0)
        assert g == 6.0

    def test_sigmoid_sum_at_zero(self):
        _, (g,) = grads_of(lambda x: ad.tsum(ad.sigmoid(x)), np.zeros(4))
        np.testing.assert_array_equal(g, np.full(4, 0.25))

    def test_accumulation_doubles(self):
        x = Parameter(np.array([1.0, -2.0]), "x")
        for _ in range(2):
            with Tape() as tape:
                loss = ad.tsum(ad.mul(x, x))
            backward(loss, tape, [x])
        np.testing.assert_array_equal(x.grad, 2 * 2 * x.data)

    def test_unused_parameter_gets_zero_not_none(self):
        x, unused = Parameter(np.ones(2), "x"), Parameter(np.ones(3), "u")
        with Tape() as tape:
            loss = ad.tsum(x)
        backward(loss, tape, [x, unused])
        np.testing.assert_array_equal(unused.grad, np.zeros(3))

    def test_non_scalar_loss(self):
        x = Parameter(np.ones(2), "x")
        with Tape() as tape:
            y = ad.mul(x, 2.0)
        with pytest.raises(ContractError):
            backward(y, tape, [x])

    def test_random_three_layer_composite(self, rng):
        w1, w2, w3 = (Tensor(rng.normal(size=s)) for s in [(4, 6), (6, 5), (5, 1)])
        x = rng.normal(size=(3, 4))

        def fn(a, b, c):
            h = ad.tanh(ad.matmul(x, a))
            h = ad.sigmoid(ad.matmul(h, b))
            return ad.tsum(ad.matmul(h, c))
        assert finite_difference_gradcheck(fn, [w1, w2, w3], eps=1e-3) < 1e-4

    def test_clear_frees_intermediates(self):
        x = Parameter(np.ones(3), "x")
        with Tape() as tape:
            ad.tsum(ad.exp(x))
        assert len(tape) > 0
        tape.clear()
        assert len(tape) == 0

    def test_no_recording_without_tape(self):
        x = Parameter(np.ones(3), "x")
        y = ad.exp(x)
        assert not y.requires_grad


class TestGradcheck:
    def test_identity_sum(self, rng):
        assert finite_difference_gradcheck(lambda x: ad.tsum(x), [Tensor(rng.normal(size=5))]) < 1e-10

    def test_quadratic_exact(self):
        x = Tensor(np.array(3.0))
        assert finite_difference_gradcheck(lambda t: ad.mul(t, t), [x], eps=1e-3) < 1e-9

    def test_detects_wrong_backward(self):
        from gvhd.autodiff.tensor import make_output, as_tensor

        def bad_square(x):
            x = as_tensor(x)
            return make_output(x.data ** 2, (x,), lambda g: (g * x.data,), "bad_square")
        assert finite_difference_gradcheck(lambda t: ad.tsum(bad_square(t)), [Tensor(np.array([1.0, 2.0]))]) > 0.4


OP_CASES = [c for c in CASES if c[0] != "model_end_to_end"]


@pytest.mark.parametrize("name,build,opts", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_every_op_gradchecks_over_100_random_trials(name, build, opts):
    worst = max(run_case(name, build, opts, seed=trial).worst for trial in range(100))
    assert worst < 1e-4, f"{name}: {worst:.3e}"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=8))
def test_forward_is_deterministic_and_finite(values):
    x = np.array(values)
    a = ad.layer_norm(ad.tanh(x), np.ones(len(x)), np.zeros(len(x))).data
    b = ad.layer_norm(ad.tanh(x), np.ones(len(x)), np.zeros(len(x))).data
    assert np.array_equal(a, b) and np.all(np.isfinite(a))
