import numpy as np
import pytest

from densesep.errors import GradientCheckError, GraphError, ShapeMismatchError
from densesep import tensor as T


def leaf(graph, arr, trainable=True):
    return graph.leaf(T.Tensor(np.asarray(arr, dtype=np.float64)), trainable=trainable)


class TestTensorValue:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            T.Tensor([1.0, np.nan])

    def test_rejects_inf(self):
        with pytest.raises(ValueError):
            T.Tensor([np.inf])

    def test_default_dtype_is_f32(self):
        assert T.tensor([1.0, 2.0]).dtype == "f32"

    def test_shape_matches_elements(self):
        t = T.tensor(np.zeros((2, 3, 4)))
        assert t.shape == (2, 3, 4)
        assert t.size == 24


class TestConcat:
    def test_shape_arithmetic(self):
        a = T.tensor(np.zeros((2, 3)))
        b = T.tensor(np.zeros((2, 5)))
        assert T.concat([a, b], axis=1).shape == (2, 8)

    def test_single_input_identity(self):
        x = T.tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.concat([x], axis=0).data, x.data)

    def test_row_major_layout(self):
        # hand enumeration: [[1,2],[3,4]] ++ [[5],[6]] along axis 1
        a = T.tensor([[1.0, 2.0], [3.0, 4.0]])
        b = T.tensor([[5.0], [6.0]])
        out = T.concat([a, b], axis=1)
        np.testing.assert_array_equal(out.data, [[1, 2, 5], [3, 4, 6]])

    def test_off_axis_mismatch_rejected(self):
        a = T.tensor(np.zeros((2, 3)))
        b = T.tensor(np.zeros((3, 3)))
        with pytest.raises(ShapeMismatchError) as e:
            T.concat([a, b], axis=1)
        assert "(2, 3)" in str(e.value) and "(3, 3)" in str(e.value)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ShapeMismatchError):
            T.concat([], axis=0)

    def test_backward_splits_gradient_exactly(self):
        rng = np.random.default_rng(7)
        g = T.Graph()
        a = leaf(g, rng.normal(size=(2, 3)))
        b = leaf(g, rng.normal(size=(2, 5)))
        out = T.reduce_mean(T.square(T.concat([a, b], axis=1)))
        grads = T.backward(g, out)
        joined = np.concatenate([grads[a].data, grads[b].data], axis=1)
        expected = 2 * np.concatenate([a.value.data, b.value.data], axis=1) / 16
        np.testing.assert_array_equal(joined, expected)


class TestElementwise:
    def test_relu_definition(self):
        out = T.relu(T.tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_add_zero_identity(self):
        x = T.tensor([[1.5, -2.0]])
        out = T.add(x, T.zeros((1, 2)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_square_of_difference(self):
        out = T.square(T.sub(T.tensor([3.0]), T.tensor([1.0])))
        np.testing.assert_array_equal(out.data, [4.0])

    def test_dispatch_by_name(self):
        a, b = T.tensor([2.0]), T.tensor([3.0])
        assert T.elementwise("mul", a, b).data[0] == 6.0
        assert T.elementwise("relu", T.tensor([-1.0])).data[0] == 0.0
        with pytest.raises(ValueError):
            T.elementwise("pow", a, b)
        with pytest.raises(TypeError):
            T.elementwise("relu", a, b)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            T.add(T.tensor(np.zeros((2, 2))), T.tensor(np.zeros((2, 3))))

    def test_scalar_broadcast_allowed(self):
        out = T.mul(T.tensor([[1.0, 2.0]]), 3.0)
        np.testing.assert_array_equal(out.data, [[3.0, 6.0]])

    def test_scalar_broadcast_gradient_sums(self):
        g = T.Graph()
        x = leaf(g, [1.0, 2.0, 3.0])
        c = leaf(g, 2.0)
        out = T.reduce_mean(T.mul(x, c))
        grads = T.backward(g, out)
        assert grads[c].data == pytest.approx(np.mean([1.0, 2.0, 3.0]))


class TestReduceMean:
    def test_mean_of_two(self):
        assert T.reduce_mean(T.tensor([2.0, 4.0])).item() == 3.0

    def test_singleton_identity(self):
        assert T.reduce_mean(T.tensor([7.25])).item() == 7.25

    def test_empty_rejected(self):
        with pytest.raises(ShapeMismatchError):
            T.reduce_mean(T.tensor(np.zeros((0,))))

    def test_backward_distributes_inverse_count(self):
        g = T.Graph()
        x = leaf(g, np.ones((4, 4)))
        out = T.reduce_mean(x)
        assert out.value.item() == 1.0
        grads = T.backward(g, out)
        np.testing.assert_array_equal(grads[x].data, np.full((4, 4), 1 / 16))


class TestBackward:
    def test_mean_square_gradient(self):
        g = T.Graph()
        w = leaf(g, [3.0])
        out = T.reduce_mean(T.square(w))
        grads = T.backward(g, out)
        np.testing.assert_array_equal(grads[w].data, [6.0])

    def test_detached_leaf_gets_zeros(self):
        g = T.Graph()
        w = leaf(g, [[1.0, 2.0]])
        x = leaf(g, [5.0])
        out = T.reduce_mean(T.square(x))
        grads = T.backward(g, out)
        np.testing.assert_array_equal(grads[w].data, np.zeros((1, 2)))

    def test_non_scalar_root_rejected(self):
        g = T.Graph()
        x = leaf(g, [1.0, 2.0])
        y = T.square(x)
        with pytest.raises(GraphError):
            T.backward(g, y)

    def test_foreign_root_rejected(self):
        g1, g2 = T.Graph(), T.Graph()
        x = leaf(g2, [1.0])
        out = T.reduce_mean(x)
        with pytest.raises(GraphError):
            T.backward(g1, out)

    def test_mixed_graph_inputs_rejected(self):
        g1, g2 = T.Graph(), T.Graph()
        a = leaf(g1, [1.0])
        b = leaf(g2, [2.0])
        with pytest.raises(GraphError):
            T.add(a, b)

    def test_graph_reusable_after_backward(self):
        g = T.Graph()
        w = leaf(g, [2.0])
        out = T.reduce_mean(T.square(w))
        first = T.backward(g, out)[w].data.copy()
        second = T.backward(g, out)[w].data
        np.testing.assert_array_equal(first, second)

    def test_reused_operand_accumulates(self):
        # f(w) = mean(w*w + w*w) = 2*mean(w^2); grad = 4w/N
        g = T.Graph()
        w = leaf(g, [1.0, -2.0])
        y = T.add(T.mul(w, w), T.mul(w, w))
        grads = T.backward(g, T.reduce_mean(y))
        np.testing.assert_allclose(grads[w].data, 4 * w.value.data / 2)

    def test_random_composite_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        base = rng.normal(size=(3, 4))
        other = T.Tensor(rng.normal(size=(3, 4)).astype(np.float64))

        def f(x):
            y = T.mul(T.add(x, other), T.sub(x, 0.5))
            return T.reduce_mean(T.square(T.add(y, T.relu(x))))

        err = T.grad_check(f, T.Tensor(base), eps=1e-5)
        assert err < 1e-4

    def test_deterministic_reexecution(self):
        rng = np.random.default_rng(3)
        x = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))

        def run():
            return T.reduce_mean(T.square(T.relu(T.mul(x, x)))).data.copy()

        np.testing.assert_array_equal(run(), run())


class TestGradCheck:
    def test_relu_mean_away_from_kink(self):
        rng = np.random.default_rng(5)
        vals = rng.normal(size=(4, 4))
        vals[np.abs(vals) < 1e-3] += 0.1  # keep clear of the kink
        err = T.grad_check(lambda x: T.reduce_mean(T.relu(x)), T.Tensor(vals), eps=1e-5)
        assert err < 1e-6

    def test_linear_function_is_exact(self):
        rng = np.random.default_rng(6)
        err = T.grad_check(
            lambda x: T.reduce_mean(x), T.Tensor(rng.normal(size=(3, 5))), eps=1e-5
        )
        assert err < 1e-10

    def test_requires_f64(self):
        with pytest.raises(TypeError):
            T.grad_check(T.reduce_mean, T.tensor([1.0]), eps=1e-5)

    def test_nan_reported_with_coordinate(self):
        def f(x):
            arr = T.array_of(x)
            if np.any(arr > 1.5):
                bad = T.Tensor._wrap(np.asarray(np.nan))
                return T.reduce_mean(T.mul(x, bad)) if isinstance(x, T.Node) else bad
            return T.reduce_mean(x)

        with pytest.raises(GradientCheckError) as e:
            T.grad_check(f, T.Tensor(np.array([1.5 - 1e-6, 0.0])), eps=1e-5)
        assert e.value.coordinate == 0

    def test_coordinate_subsampling(self):
        rng = np.random.default_rng(9)
        err = T.grad_check(
            lambda x: T.reduce_mean(T.square(x)),
            T.Tensor(rng.normal(size=(8, 8))),
            eps=1e-5,
            max_coords=10,
        )
        assert err < 1e-6
