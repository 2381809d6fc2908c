"""Tests for the tensor engine: forward values, gradients and the checker."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vgen import numerics as nx
from vgen.errors import DimensionError, NumericError


def T(x, grad=False):
    return nx.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestMatmul:
    def test_identity(self):
        out = nx.matmul(T([[1, 0], [0, 1]]), T([[3], [4]]))
        np.testing.assert_array_equal(out.data, [[3], [4]])

    def test_hand_arithmetic(self):
        np.testing.assert_array_equal(nx.matmul(T([[1, 2]]), T([[3], [4]])).data, [[11]])

    def test_random_3x4_by_4x2_against_loop(self):
        # integer-valued entries keep every partial sum exact, so any
        # summation order must give the same bits
        rng = np.random.default_rng(0)
        a = rng.integers(-9, 10, (3, 4)).astype(np.float64)
        b = rng.integers(-9, 10, (4, 2)).astype(np.float64)
        np.testing.assert_array_equal(nx.matmul(T(a), T(b)).data, triple_loop(a, b))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_loop_agreement_small_dims(self, m, k, n, seed):
        rng = np.random.default_rng(seed)
        ai = rng.integers(-100, 101, (m, k)).astype(np.float64)
        bi = rng.integers(-100, 101, (k, n)).astype(np.float64)
        np.testing.assert_array_equal(nx.matmul(T(ai), T(bi)).data, triple_loop(ai, bi))
        # general floats: BLAS may reorder the sum, so agreement is to rounding
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        np.testing.assert_allclose(nx.matmul(T(a), T(b)).data, triple_loop(a, b), rtol=1e-12, atol=1e-13)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            nx.matmul(T(np.ones((2, 3))), T(np.ones((2, 2))))

    def test_batched_against_numpy(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))
        np.testing.assert_allclose(nx.matmul(T(a), T(b)).data, a @ b)
        with pytest.raises(DimensionError):
            nx.matmul(T(a), T(rng.standard_normal((3, 4, 5))))

    def test_gradients(self):
        rng = np.random.default_rng(2)
        store = nx.ParameterStore(0)
        store.add("a", rng.standard_normal((3, 4)))
        store.add("b", rng.standard_normal((4, 2)))
        report = nx.grad_check(lambda s: nx.sum_(nx.matmul(s["a"], s["b"]) * nx.matmul(s["a"], s["b"])), store)
        assert report.passed, report.summary()


class TestSoftmax:
    def test_examples(self):
        np.testing.assert_allclose(nx.softmax_rows(T([[0.0, 0.0]])).data, [[0.5, 0.5]])
        np.testing.assert_allclose(nx.softmax_rows(T([[1000.0, 1000.0]])).data, [[0.5, 0.5]])
        np.testing.assert_allclose(nx.softmax_rows(T([[0.0, math.log(3)]])).data, [[0.25, 0.75]], rtol=1e-15)

    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6), elements=finite))
    def test_rows_sum_to_one(self, x):
        out = nx.softmax_rows(T(x)).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    @given(
        hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6), elements=finite),
        st.floats(-100, 100),
    )
    def test_shift_invariance(self, x, c):
        np.testing.assert_allclose(nx.softmax_rows(T(x + c)).data, nx.softmax_rows(T(x)).data, atol=1e-12)

    def test_mask_zeroes_excluded_keys(self):
        out = nx.softmax_rows(T([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
        assert out[0, 1] == 0.0
        np.testing.assert_allclose(out[0, [0, 2]], np.exp([1, 3]) / np.exp([1, 3]).sum())


class TestElementwise:
    def test_gelu_examples(self):
        out = nx.gelu(T([0.0, 10.0, -10.0])).data
        assert out[0] == 0.0
        np.testing.assert_allclose(out[1], 10.0, atol=1e-6)
        np.testing.assert_allclose(out[2], 0.0, atol=1e-6)

    def test_gelu_formula(self):
        x = np.linspace(-4, 4, 17)
        ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
        np.testing.assert_allclose(nx.gelu(T(x)).data, ref, rtol=1e-14)

    def test_sigmoid_examples(self):
        out = nx.sigmoid(T([0.0, -709.0, math.log(3)])).data
        assert out[0] == 0.5
        assert out[1] > 0 and np.isfinite(out[1])
        np.testing.assert_allclose(out[2], 0.75, rtol=1e-15)

    def test_sigmoid_extremes_do_not_overflow(self):
        out = nx.sigmoid(T([-1e4, 1e4])).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_implicit_broadcast_rejected(self):
        with pytest.raises(DimensionError):
            T(np.ones((2, 3))) + T(np.ones((2, 1)))
        # a trailing bias vector and a scalar are the two allowed forms
        np.testing.assert_array_equal((T(np.ones((2, 3))) + T([1.0, 2.0, 3.0])).data[1], [2, 3, 4])
        np.testing.assert_array_equal((T(np.ones(2)) * 3.0).data, [3, 3])

    def test_log_of_nonpositive_is_numeric_error(self):
        with pytest.raises(NumericError, match="log"):
            nx.log(T([1.0, 0.0]))


class TestLayerNorm:
    def test_constant_row(self):
        out = nx.layer_norm(T([[1.0, 1, 1, 1]]), T(np.ones(4)), T(np.zeros(4))).data
        np.testing.assert_array_equal(out, np.zeros((1, 4)))

    def test_normalized_row(self):
        out = nx.layer_norm(T([[-1.0, 1.0]]), T(np.ones(2)), T(np.zeros(2))).data
        np.testing.assert_allclose(out, [[-1, 1]], atol=1e-5)

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=finite))
    def test_moments(self, x):
        out = nx.layer_norm(T(x), T(np.ones(x.shape[1])), T(np.zeros(x.shape[1]))).data
        assert np.all(np.abs(out.mean(axis=1)) < 1e-10)
        var = x.var(axis=1)
        # rows with spread well above eps come out with unit variance
        big = var > 1e-2
        np.testing.assert_allclose(out[big].var(axis=1), 1.0, atol=1e-3)

    def test_width_one_rejected(self):
        with pytest.raises(DimensionError):
            nx.layer_norm(T([[1.0]]), T([1.0]), T([0.0]))


class TestBackward:
    def test_square(self):
        store = nx.ParameterStore()
        store.add("w", 3.0)
        grads = nx.backward(store["w"] * store["w"], store)
        assert grads["w"] == 6.0

    def test_sigmoid_at_zero(self):
        store = nx.ParameterStore()
        store.add("w", np.zeros(3))
        grads = nx.backward(nx.sum_(nx.sigmoid(store["w"])), store)
        np.testing.assert_array_equal(grads["w"], [0.25] * 3)

    def test_unused_parameter_gets_zero(self):
        store = nx.ParameterStore()
        store.add("w", [1.0, 2.0])
        store.add("unused", [5.0])
        grads = nx.backward(nx.sum_(store["w"]), store)
        np.testing.assert_array_equal(grads["unused"], [0.0])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        store = nx.ParameterStore()
        store.add("x", rng.standard_normal((4, 5)))
        store.add("g", np.ones(5))
        store.add("b", np.zeros(5))

        def loss(s):
            h = nx.layer_norm(nx.gelu(s["x"]), s["g"], s["b"])
            return nx.sum_(nx.softmax_rows(h) * h)

        g1, g2 = nx.backward(loss(store), store), nx.backward(loss(store), store)
        for k in g1:
            assert g1[k].tobytes() == g2[k].tobytes()

    def test_non_finite_names_operation(self):
        store = nx.ParameterStore()
        store.add("w", [800.0])
        with pytest.raises(NumericError, match="exp"):
            nx.exp(store["w"])

    def test_non_finite_backward_names_operation(self):
        store = nx.ParameterStore()
        store.add("w", [1e-300])
        with pytest.raises(NumericError, match="backward"):
            nx.backward(nx.sum_(nx.log(store["w"])) * 1e10, store)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(DimensionError):
            nx.backward(T([1.0, 2.0], grad=True))

    def test_shared_subexpression_accumulates(self):
        store = nx.ParameterStore()
        store.add("w", [2.0])
        y = store["w"] * store["w"]
        grads = nx.backward(nx.sum_(y + y), store)
        np.testing.assert_array_equal(grads["w"], [8.0])


def _check_op(fn, shapes, seed=0, positive=False):
    rng = np.random.default_rng(seed)
    store = nx.ParameterStore()
    for i, shape in enumerate(shapes):
        v = rng.standard_normal(shape)
        store.add(f"x{i}", np.abs(v) + 0.5 if positive else v)
    weights = rng.standard_normal(fn(*[store[f"x{i}"] for i in range(len(shapes))]).shape)

    def loss(s):
        return nx.sum_(fn(*[s[f"x{i}"] for i in range(len(shapes))]) * weights)

    return nx.grad_check(loss, store)


class TestOpGradients:
    @pytest.mark.parametrize(
        "fn, shapes, positive",
        [
            (lambda a, b: a + b, [(3, 4), (4,)], False),
            (lambda a, b: a * b, [(3, 4), (3, 4)], False),
            (lambda a, b: a / b, [(3, 4), (3, 4)], True),
            (lambda a: nx.exp(a), [(5,)], False),
            (lambda a: nx.log(a), [(5,)], True),
            (lambda a: nx.sigmoid(a), [(2, 3)], False),
            (lambda a: nx.gelu(a), [(2, 3)], False),
            (lambda a: nx.softmax_rows(a), [(3, 4)], False),
            (lambda a, g, b: nx.layer_norm(a, g, b), [(3, 4), (4,), (4,)], False),
            (lambda a: nx.cumprod(a), [(3, 5)], False),
            (lambda a: nx.huber(a, 0.7), [(6,)], False),
            (lambda a: nx.broadcast_to(nx.reshape(a, (3, 1)), (2, 3, 4)), [(3,)], False),
            (lambda a, b: nx.concat([a, b], axis=1), [(2, 3), (2, 1)], False),
            (lambda a, b: nx.stack([a, b], axis=1), [(2, 3), (2, 3)], False),
            (lambda a: nx.transpose(a, (1, 0, 2)), [(2, 3, 4)], False),
            (lambda a: a[:, 1:3], [(3, 4)], False),
            (lambda a: nx.take(a, np.array([[0, 2], [2, 2]])), [(3, 4)], False),
            (lambda a: nx.mean(a, axis=1), [(3, 4)], False),
        ],
    )
    def test_matches_finite_differences(self, fn, shapes, positive):
        report = _check_op(fn, shapes, positive=positive)
        assert report.passed, report.summary()

    def test_cumprod_with_zero_entry(self):
        # the backward pass never divides, so a zero factor is fine
        store = nx.ParameterStore()
        store.add("x", [0.5, 0.0, 2.0, 3.0])
        grads = nx.backward(nx.sum_(nx.cumprod(store["x"])), store)
        # d/dx1 of (x0 + x0 x1 + x0 x1 x2 + x0 x1 x2 x3) at x1 = 0
        np.testing.assert_allclose(grads["x"], [1.0, 0.5 * (1 + 2 + 6), 0.0, 0.0])


class TestGradCheck:
    def test_quadratic(self):
        store = nx.ParameterStore()
        store.add("w", [1.0, -2.0, 0.5])
        report = nx.grad_check(lambda s: nx.sum_(s["w"] * s["w"]), store)
        assert report.passed
        assert report.overall < 1e-8

    def test_corrupted_gradient_fails(self):
        store = nx.ParameterStore()
        store.add("w", [1.0, -2.0, 0.5])
        loss = lambda s: nx.sum_(s["w"] * s["w"])  # noqa: E731
        grads = {k: v * 1.01 for k, v in nx.backward(loss(store), store).items()}
        report = nx.grad_check(loss, store, grads=grads)
        assert not report.passed
        np.testing.assert_allclose(report.overall, 0.01 / 1.01, rtol=1e-6)

    def test_subsamples_large_tensors(self):
        store = nx.ParameterStore()
        store.add("big", np.linspace(-1, 1, 200))
        calls = []

        def loss(s):
            calls.append(1)
            return nx.sum_(s["big"] * s["big"])

        nx.grad_check(loss, store, max_elements=64)
        assert len(calls) == 1 + 2 * 64

    def test_non_finite_probe_is_numeric_error(self):
        store = nx.ParameterStore()
        store.add("w", [1.0])

        def loss(s):
            v = float(s["w"].data[0])
            return v if v <= 1.0 else float("inf")

        with pytest.raises(NumericError):
            nx.grad_check(loss, store, grads={"w": np.array([1.0])})

    def test_relative_error_floor(self):
        # analytic and numeric gradients are both exactly zero here; the
        # denominator floor turns 0/0 into 0
        store = nx.ParameterStore()
        store.add("w", [0.0])
        report = nx.grad_check(lambda s: nx.sum_(s["w"] * s["w"]), store)
        assert report.max_rel_err["w"] == 0.0


class TestParameterStore:
    def test_duplicate_name_rejected(self):
        store = nx.ParameterStore()
        store.add("a", [1.0])
        with pytest.raises(KeyError):
            store.add("a", [2.0])

    def test_lexicographic_order(self):
        store = nx.ParameterStore()
        for name in ["b", "a.2", "a.10", "c"]:
            store.add(name, [0.0])
        assert store.names() == sorted(["b", "a.2", "a.10", "c"])

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            nx.ParameterStore().add("w", [np.nan])

    def test_dtype(self):
        store = nx.ParameterStore(dtype=np.float32)
        t = store.add("w", [1.0])
        assert t.data.dtype == np.float32
        assert (t * 2.0).data.dtype == np.float32
        assert (2.0 * t).data.dtype == np.float32
