import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brainca import autodiff as ad
from brainca.nn import (AdamState, GruParams, MlpParams, adam_step, finite_diff_grad, gelu,
                        global_norm, gru_step, init_gru, init_mlp, max_relative_error, mlp_forward,
                        softmax, xavier_uniform_init)
from brainca.rng import Rng

finite = st.floats(-20, 20, allow_nan=False)


class TestGelu:
    def test_zero(self):
        assert gelu(0.0) == 0.0

    def test_large_input_is_identity(self):
        assert abs(gelu(10.0) - 10.0) < 1e-9

    @pytest.mark.parametrize("x, expected", [
        # 30-digit mpmath evaluations of x * (1 + erf(x / sqrt 2)) / 2
        (1.0, 0.841344746068542948585232545632),
        (-0.5, -0.154268769362993448181147694696),
    ])
    def test_matches_high_precision_erf(self, x, expected):
        assert gelu(x) == pytest.approx(expected, abs=1e-15)

    def test_not_the_tanh_approximation(self):
        tanh_form = 0.5 * (1 + math.tanh(math.sqrt(2 / math.pi) * (1 + 0.044715)))
        assert abs(gelu(1.0) - tanh_form) > 1e-5


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0, 0, 0, 0]), [0.25] * 4, atol=1e-15)

    @pytest.mark.parametrize("x", [-1e3, 0.0, 3.5, 700.0])
    def test_singleton(self, x):
        assert softmax([x])[0] == 1.0

    def test_large_values_are_stable(self):
        np.testing.assert_allclose(softmax([1000, 1000.5]), softmax([0, 0.5]), atol=1e-15)

    def test_empty_domain(self):
        with pytest.raises(ValueError, match="empty softmax domain"):
            softmax([])

    @given(st.lists(finite, min_size=1, max_size=12), st.floats(-100, 100))
    def test_sums_to_one_and_shift_invariant(self, v, shift):
        p = softmax(v)
        assert abs(p.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(softmax(np.array(v) + shift), p, atol=1e-12)
        assert p[int(np.argmax(v))] == p.max()


class TestMlp:
    def test_zero_weights_give_zero(self):
        p = MlpParams([(np.zeros((4, 3)), np.zeros(4)), (np.zeros((2, 4)), np.zeros(2))])
        np.testing.assert_array_equal(mlp_forward(p, np.array([1.0, -2.0, 3.0])), np.zeros(2))

    def test_identity_layer(self):
        x = np.array([0.3, -1.2, 4.0])
        np.testing.assert_array_equal(mlp_forward(MlpParams([(np.eye(3), np.zeros(3))]), x), x)

    def test_two_three_one_against_scalar_arithmetic(self):
        w1 = [[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6]]
        b1 = [0.01, -0.02, 0.03]
        w2 = [[0.7, -0.8, 0.9]]
        b2 = [0.05]
        x = [1.5, -0.5]
        hidden = []
        for row, b in zip(w1, b1):
            pre = row[0] * x[0] + row[1] * x[1] + b
            hidden.append(pre * 0.5 * (1 + math.erf(pre / math.sqrt(2))))
        expected = sum(w * h for w, h in zip(w2[0], hidden)) + b2[0]
        p = MlpParams([(np.array(w1), np.array(b1)), (np.array(w2), np.array(b2))])
        assert mlp_forward(p, np.array(x))[0] == pytest.approx(expected, abs=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mlp_forward(MlpParams([(np.eye(3), np.zeros(3))]), np.ones(2))

    def test_layers_must_chain(self):
        with pytest.raises(ValueError):
            MlpParams([(np.ones((4, 3)), np.zeros(4)), (np.ones((2, 5)), np.zeros(2))])


def _gru(hd, idim, fill=0.0, **over):
    t = {n: np.full((hd, idim), fill) for n in ("W_z", "W_r", "W_h")}
    t.update({n: np.full((hd, hd), fill) for n in ("U_z", "U_r", "U_h")})
    t.update({n: np.full(hd, fill) for n in ("b_z", "b_r", "b_h")})
    t.update(over)
    return GruParams(**t)


class TestGru:
    def test_zero_params_zero_state(self):
        np.testing.assert_array_equal(gru_step(_gru(3, 2), np.ones(2), np.zeros(3)), np.zeros(3))

    def test_saturated_update_gate_takes_candidate(self):
        p = _gru(2, 2, b_z=np.full(2, 50.0))
        out = gru_step(p, np.array([0.4, -0.7]), np.array([0.9, -0.9]))
        np.testing.assert_allclose(out, 0.0, atol=1e-20)

    def test_two_dim_against_scalar_arithmetic(self):
        rng = Rng(7)
        p = init_gru(2, 2, rng)
        p = GruParams(**{k.split(".")[1]: v + 0.1 for k, v in p.tensors("g").items()})
        m, h = [0.3, -0.6], [0.2, -0.4]
        t = p.tensors("g")

        def g(name):
            return np.asarray(t["g." + name]).tolist()

        def sig(v):
            return 1 / (1 + math.exp(-v))

        def lin(W, x):
            return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]
        Wz, Uz, bz = g("W_z"), g("U_z"), g("b_z")
        Wr, Ur, br = g("W_r"), g("U_r"), g("b_r")
        Wh, Uh, bh = g("W_h"), g("U_h"), g("b_h")
        z = [sig(a + b + c) for a, b, c in zip(lin(Wz, m), lin(Uz, h), bz)]
        r = [sig(a + b + c) for a, b, c in zip(lin(Wr, m), lin(Ur, h), br)]
        rh = [ri * hi for ri, hi in zip(r, h)]
        cand = [math.tanh(a + b + c) for a, b, c in zip(lin(Wh, m), lin(Uh, rh), bh)]
        expected = [(1 - zi) * hi + zi * ci for zi, hi, ci in zip(z, h, cand)]
        np.testing.assert_allclose(gru_step(p, np.array(m), np.array(h)), expected, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gru_step(_gru(3, 2), np.ones(3), np.zeros(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.lists(st.floats(-0.999, 0.999), min_size=4, max_size=4))
    def test_hidden_stays_in_unit_cube(self, seed, h):
        rng = Rng(seed)
        p = init_gru(3, 4, rng)
        big = GruParams(**{k.split(".")[1]: 5 * v for k, v in p.tensors("g").items()})
        out = gru_step(big, rng.normal(3, std=10.0), np.array(h))
        # tanh may round to exactly 1 in floating point under saturation
        assert np.all(np.abs(out) <= 1)


class TestXavier:
    def test_bound_for_three_by_three(self):
        w = xavier_uniform_init(3, 3, Rng(1))
        assert w.shape == (3, 3) and np.all(np.abs(w) <= 1.0)

    def test_deterministic(self):
        np.testing.assert_array_equal(xavier_uniform_init(5, 4, Rng(9)), xavier_uniform_init(5, 4, Rng(9)))

    def test_statistics(self):
        w = xavier_uniform_init(100, 100, Rng(3))
        a = math.sqrt(6 / 200)
        assert abs(w.mean()) < 0.02 and np.abs(w).max() <= a
        assert w.shape == (100, 100)

    def test_biases_start_at_zero(self):
        p = init_mlp([3, 4, 2], Rng(0))
        assert all(not b.any() for _, b in p.layers)

    @pytest.mark.parametrize("dims", [(0, 3), (3, 0), (-1, 2)])
    def test_rejects_non_positive(self, dims):
        with pytest.raises(ValueError):
            xavier_uniform_init(*dims, Rng(0))


class TestAdam:
    def test_zero_grads_leave_params(self):
        params = {"w": np.array([1.0, -2.0])}
        new, st_ = adam_step(AdamState(), params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(new["w"], params["w"])
        assert st_.step_count == 1

    def test_first_step_matches_hand_computation(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        g = np.array([0.5, -2.0, 1e-3])
        p = np.array([1.0, 1.0, 1.0])
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        expected = p - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
        new, _ = adam_step(AdamState(lr, b1, b2, eps), {"p": p}, {"p": g})
        np.testing.assert_allclose(new["p"], expected, rtol=0, atol=1e-16)
        # the first step moves each coordinate by about lr in the gradient's direction
        np.testing.assert_allclose(p - new["p"], lr * g / (np.abs(g) + eps), rtol=1e-9)

    def test_decoupled_weight_decay(self):
        p = {"w": np.array([2.0])}
        new, _ = adam_step(AdamState(learning_rate=0.1, weight_decay=0.5), p, {"w": np.zeros(1)})
        assert new["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_clipping_to_global_norm(self):
        grads = {"a": np.array([6.0, 0.0]), "b": np.array([[0.0, 8.0]])}
        assert global_norm(grads) == 10.0
        state = AdamState(grad_clip_norm=1.0)
        new, st_ = adam_step(state, {"a": np.zeros(2), "b": np.zeros((1, 2))}, grads)
        clipped = {k: st_.first_moment[k] / (1 - state.beta1) for k in grads}
        assert abs(global_norm(clipped) - 1.0) < 1e-9

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite gradient"):
            adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])})

    def test_deterministic(self):
        rng = Rng(5)
        p = {"w": rng.normal((3, 4))}
        g = {"w": rng.normal((3, 4))}
        s = AdamState(weight_decay=1e-4, grad_clip_norm=0.5)
        a1, s1 = adam_step(s, p, g)
        a2, s2 = adam_step(s, p, g)
        assert np.array_equal(a1["w"], a2["w"]) and s1.step_count == s2.step_count == 1
        assert np.array_equal(s1.second_moment["w"], s2.second_moment["w"])


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda t: float(np.sum(t["x"] ** 2)), {"x": np.array([1.0, 2.0])}, 1e-4)
        np.testing.assert_allclose(g["x"], [2.0, 4.0], atol=1e-6)

    def test_constant(self):
        g = finite_diff_grad(lambda t: 3.0, {"x": np.ones((2, 2))}, 1e-4)
        assert not g["x"].any()

    def test_non_finite_probe(self):
        with pytest.raises(ValueError), np.errstate(invalid="ignore"):
            finite_diff_grad(lambda t: float(np.log(t["x"][0])), {"x": np.array([0.0])}, 1e-4)


class TestTape:
    """Each tape op against central differences of its own forward value."""

    @staticmethod
    def check(fn, *shapes, seed=0, positive=False):
        rng = Rng(seed)
        xs = {f"x{k}": rng.normal(s) for k, s in enumerate(shapes)}
        if positive:
            xs = {k: np.abs(v) + 0.5 for k, v in xs.items()}
        w = rng.normal(np.shape(ad.value(fn(*xs.values()))))

        def loss(t):
            return float(np.sum(ad.value(fn(*t.values())) * w))
        leaves = {k: ad.Var(v) for k, v in xs.items()}
        out = fn(*leaves.values())
        ad.backward([(out, w)])
        got = {k: v.grad for k, v in leaves.items()}
        assert max_relative_error(got, finite_diff_grad(loss, xs, 1e-5), floor=1e-4) < 1e-6

    def test_elementwise(self):
        self.check(lambda a, b: ad.gelu(a * b - a), (3, 4), (3, 4))
        self.check(lambda a: ad.tanh(ad.sigmoid(a)), (5,))
        self.check(lambda a, b: ad.div(a, b), (4,), (4,), positive=True)
        self.check(lambda a: ad.log(a), (3,), positive=True)

    def test_broadcasting(self):
        self.check(lambda a, b: a + b, (3, 4), (4,))
        self.check(lambda a, b: a * b, (3, 1, 2), (1, 4, 2))

    def test_linear_and_reductions(self):
        self.check(lambda x, w, b: ad.linear(x, w, b), (5, 3), (2, 3), (2,))
        self.check(lambda x, w: ad.sum(ad.linear(x, w), axis=0), (2, 4, 3), (6, 3))
        self.check(lambda x: ad.mean(x, axis=1), (3, 4))

    def test_structure(self):
        self.check(lambda a, b: ad.concat([a, b], axis=1), (2, 3), (2, 2))
        self.check(lambda a: ad.reshape(a, (6,)), (2, 3))
        self.check(lambda a: ad.getitem(a, (slice(None), 1)), (3, 2))
        self.check(lambda a: ad.broadcast_rows(a, 3), (4,))

    def test_normalizations(self):
        mask = np.array([[True, True, False], [True, False, False], [False, False, False]])
        self.check(lambda a: ad.masked_softmax(a, mask), (3, 3))
        self.check(lambda a: ad.log_softmax(a), (2, 5))
        self.check(lambda a: ad.softmax(a), (4,))

    def test_gather_and_weighted_sum(self):
        import scipy.sparse as sp
        g = sp.csr_matrix((np.ones(4), ([0, 1, 2, 4], [2, 0, 0, 1])), shape=(6, 3))
        self.check(lambda x: ad.gather(x, g, (3, 2)), (3, 5))
        self.check(lambda w, v: ad.weighted_sum(w, v), (3, 2), (3, 2, 4))

    def test_fully_masked_row_is_zero(self):
        out = ad.masked_softmax(np.array([[1.0, 2.0]]), np.array([[False, False]]))
        assert np.array_equal(out, np.zeros((1, 2)))

    def test_plain_arrays_record_nothing(self):
        assert isinstance(ad.gelu(np.ones(3)), np.ndarray)

    def test_shared_subexpression_accumulates(self):
        x = ad.Var(np.array([3.0]))
        y = x * x + x
        ad.backward(ad.sum(y))
        assert x.grad[0] == 7.0
