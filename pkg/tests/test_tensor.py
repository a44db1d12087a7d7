import numpy as np
import pytest

from rotoconv import tensor as T
from rotoconv.tensor import GraphError, Tensor, set_debug_finite

from oracles import brute_correlate2d, conv_dense_matrix


def t64(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestCorrelate2d:
    def test_dirac_kernel_is_identity(self, rng):
        x = t64(rng.random((2, 1, 6, 6)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = T.correlate2d(x, t64(k))
        assert np.array_equal(out.data, x.data)

    def test_ones_valid_single_value(self):
        x = t64(np.ones((1, 1, 3, 3)))
        k = t64(np.ones((1, 1, 3, 3)))
        out = T.correlate2d(x, k, padding="valid")
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_matches_brute_force(self, rng):
        x = rng.standard_normal((1, 1, 5, 5))
        k = rng.standard_normal((1, 1, 3, 3))
        out = T.correlate2d(t64(x), t64(k)).data
        expect = brute_correlate2d(x, k)
        assert np.abs(out - expect).max() <= 1e-6

    @pytest.mark.parametrize("padding,stride,shape", [
        ("same", 1, (2, 8, 8)), ("valid", 1, (1, 6, 6)),
        ("same", 2, (2, 8, 8)), ("valid", 2, (3, 7, 7)),
    ])
    def test_matches_dense_matrix(self, rng, padding, stride, shape):
        c = shape[0]
        x = rng.standard_normal((1,) + shape)
        k = rng.standard_normal((2, c, 3, 3))
        out = T.correlate2d(t64(x), t64(k), padding, stride).data
        m = conv_dense_matrix(shape, k, padding, stride)
        expect = (m @ x.reshape(-1)).reshape(out.shape)
        assert np.abs(out - expect).max() <= 1e-10

    def test_linear_in_input(self, rng):
        f = rng.standard_normal((1, 2, 6, 6))
        g = rng.standard_normal((1, 2, 6, 6))
        k = t64(rng.standard_normal((3, 2, 3, 3)))
        a, b = 0.7, -1.3
        combined = T.correlate2d(t64(a * f + b * g), k).data
        separate = a * T.correlate2d(t64(f), k).data + b * T.correlate2d(t64(g), k).data
        assert np.abs(combined - separate).max() <= 1e-6

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ValueError, match="odd"):
            T.correlate2d(t64(rng.random((1, 1, 4, 4))), t64(rng.random((1, 1, 2, 2))))

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="channel"):
            T.correlate2d(t64(rng.random((1, 2, 4, 4))), t64(rng.random((1, 3, 3, 3))))

    def test_bad_stride_rejected(self, rng):
        with pytest.raises(ValueError, match="stride"):
            T.correlate2d(t64(rng.random((1, 1, 4, 4))),
                          t64(rng.random((1, 1, 3, 3))), stride=0)


class TestTransposeCorrelate2d:
    def test_dirac_kernel_is_identity(self, rng):
        x = t64(rng.random((1, 1, 5, 5)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        assert np.array_equal(T.transpose_correlate2d(x, t64(k)).data, x.data)

    def test_adjoint_inner_product(self, rng):
        f = rng.standard_normal((2, 2, 5, 5))
        g = rng.standard_normal((2, 3, 5, 5))
        k = t64(rng.standard_normal((3, 2, 3, 3)))
        lhs = float((T.correlate2d(t64(f), k).data * g).sum())
        rhs = float((f * T.transpose_correlate2d(t64(g), k).data).sum())
        assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), 1.0)

    def test_is_matrix_transpose(self, rng):
        k = rng.standard_normal((2, 3, 3, 3))
        fwd = conv_dense_matrix((3, 4, 4), k)
        basis_vectors = np.eye(2 * 4 * 4)
        cols = []
        for v in basis_vectors:
            out = T.transpose_correlate2d(t64(v.reshape(1, 2, 4, 4)), t64(k)).data
            cols.append(out.reshape(-1))
        adj = np.stack(cols, axis=1)
        assert np.abs(adj - fwd.T).max() <= 1e-10

    def test_impulse_shifts_opposite(self):
        x = np.zeros((1, 1, 5, 5))
        x[0, 0, 2, 2] = 1.0
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 0, 1] = 1.0  # one-hot above center
        fwd = T.correlate2d(t64(x), t64(k)).data
        bwd = T.transpose_correlate2d(t64(x), t64(k)).data
        assert fwd[0, 0, 3, 2] == 1.0  # correlation pulls the impulse down
        assert bwd[0, 0, 1, 2] == 1.0  # adjoint pushes it up
        assert fwd.sum() == 1.0 and bwd.sum() == 1.0


class TestPointwise:
    def test_relu(self):
        out = T.relu(t64([-1.0, 0.0, 2.0]))
        assert out.data.tolist() == [0.0, 0.0, 2.0]

    def test_l1_norm(self):
        assert T.l1_norm(t64([[1.0, -1.0], [1.0, -1.0]])).item() == 4.0

    def test_softmax_cross_entropy_uniform(self):
        logits = t64(np.zeros((4, 10)))
        loss = T.softmax_cross_entropy(logits, np.array([0, 3, 7, 9]))
        assert abs(loss.item() - np.log(10.0)) <= 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label"):
            T.softmax_cross_entropy(t64(np.zeros((2, 3))), np.array([0, 3]))

    def test_batchnorm_gamma_length_mismatch(self, rng):
        x = t64(rng.random((2, 3, 4, 4)))
        with pytest.raises(ValueError, match="gamma"):
            T.batchnorm_train(x, t64(np.ones(2)), t64(np.zeros(3)), (0, 2, 3))


class TestMaxPool:
    def test_single_block(self):
        out = T.maxpool2x2(t64([[1.0, 2.0], [3.0, 4.0]]))
        assert out.data.tolist() == [[4.0]]

    def test_constant_input(self):
        out = T.maxpool2x2(t64(np.full((2, 4, 4), 2.5)))
        assert np.all(out.data == 2.5)

    def test_matches_block_max_oracle(self, rng):
        x = rng.standard_normal((4, 4))
        out = T.maxpool2x2(t64(x)).data
        expect = np.array([[x[2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
                            for j in range(2)] for i in range(2)])
        assert np.array_equal(out, expect)

    def test_odd_extent_rejected(self, rng):
        with pytest.raises(ValueError, match="even"):
            T.maxpool2x2(t64(rng.random((3, 3))))

    def test_tie_gradient_goes_to_first(self):
        x = t64(np.ones((2, 2)), grad=True)
        loss = T.l1_norm(T.maxpool2x2(x))
        loss.backward()
        assert x.grad.tolist() == [[1.0, 0.0], [0.0, 0.0]]


class TestGlobalMaxPool:
    def test_constant(self):
        out = T.global_maxpool(t64(np.full((1, 2, 3, 3), 7.0)), 2)
        assert np.all(out.data == 7.0)

    def test_permutation_invariance_exact(self, rng):
        x = rng.standard_normal((1, 2, 4, 6, 6))
        rolled = np.roll(np.rot90(x, 1, axes=(-2, -1)), 2, axis=2)
        a = T.global_maxpool(t64(x), 2).data
        b = T.global_maxpool(t64(rolled), 2).data
        assert np.array_equal(a, b)

    def test_matches_scan(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        out = T.global_maxpool(t64(x), 2).data
        assert np.array_equal(out, x.reshape(2, 3, -1).max(axis=-1))


class TestBackward:
    def test_l1_gradient(self):
        x = t64([2.0, -3.0], grad=True)
        T.l1_norm(x).backward()
        assert x.grad.tolist() == [1.0, -1.0]

    def test_non_scalar_loss_rejected(self, rng):
        x = t64(rng.random((2, 2)), grad=True)
        with pytest.raises(GraphError, match="scalar"):
            T.relu(x).backward()

    def test_detached_graph_rejected(self, rng):
        x = t64(rng.random((2, 2)))
        with pytest.raises(GraphError, match="detached"):
            T.l1_norm(x).backward()

    def test_shared_node_accumulates(self):
        x = t64([1.0, 2.0], grad=True)
        y = x + x
        T.l1_norm(y).backward()
        assert x.grad.tolist() == [2.0, 2.0]


class TestDebugFiniteCheck:
    def test_nan_surfaces_when_enabled(self):
        set_debug_finite(True)
        try:
            big = t64([1e308])
            with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
                T.mul(big, t64([1e308]))
        finally:
            set_debug_finite(False)

    def test_nan_silent_by_default(self):
        with np.errstate(over="ignore"):
            out = T.mul(t64([1e308]), t64([1e308]))
        assert np.isinf(out.data).any()


class TestShapeOps:
    def test_rot90_example(self):
        out = T.rot90_spatial(t64([[1.0, 2.0], [3.0, 4.0]]), 1)
        assert out.data.tolist() == [[2.0, 4.0], [1.0, 3.0]]

    def test_roll_semantics(self):
        x = np.arange(4.0)[:, None, None] * np.ones((4, 2, 2))
        out = T.roll_axis(t64(x), 1, axis=-3)
        assert out.data[:, 0, 0].tolist() == [3.0, 0.0, 1.0, 2.0]

    def test_crop_margins(self, rng):
        x = rng.random((2, 8, 8))
        out = T.crop2d(t64(x), 2, 2)
        assert np.array_equal(out.data, x[:, 2:6, 2:6])

    def test_crop_too_deep_rejected(self, rng):
        with pytest.raises(ValueError, match="crop"):
            T.crop2d(t64(rng.random((4, 4))), 2, 2)

    def test_take_slot(self, rng):
        x = rng.random((3, 2, 2))
        assert np.array_equal(T.take_slot(t64(x), 2).data, x[2])

    def test_default_dtype_is_float32(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64
