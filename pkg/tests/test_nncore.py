import numpy as np
import pytest

from lcfusion import nncore, oracles
from lcfusion.errors import NumericalError, ValidationError
from lcfusion.nncore import checkpoint as ckpt
from lcfusion.nncore.tensor import Tensor


def param(name, data):
    return nncore.Parameter(name, np.asarray(data, dtype=np.float64))


class TestLinear:
    def test_identity_map(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        w = Tensor(np.eye(2))
        assert np.array_equal(nncore.linear(x, w).data, x.data)

    def test_bias_add(self):
        y = nncore.linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([3.0, 4.0]))
        assert np.array_equal(y.data, [[4.0, 6.0]])

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        x = param("x", rng.standard_normal((3, 4)))
        w = param("w", rng.standard_normal((4, 2)))
        b = param("b", rng.standard_normal(2))
        err = nncore.grad_check(lambda: nncore.sum_all(
            nncore.linear(x.tensor, w.tensor, b.tensor)), [x, w, b])
        assert err <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            nncore.linear(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.eye(2)))


class TestConv2d:
    def test_pointwise_identity(self):
        x = Tensor(np.arange(12.0).reshape(1, 3, 4))
        k = Tensor(np.ones((1, 1, 1, 1)))
        assert np.array_equal(nncore.conv2d(x, k).data, x.data)

    def test_all_ones_window_sum(self):
        x = Tensor(np.ones((1, 5, 5)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        y = nncore.conv2d(x, k, stride=1, padding=1)
        assert y.data[0, 2, 2] == 9.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        fast = nncore.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=1, padding=1).data
        assert np.abs(fast - oracles.conv2d_loops(x, k, b, 1, 1)).max() <= 1e-12

    def test_strided_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 7, 9))
        k = rng.standard_normal((2, 2, 3, 3))
        fast = nncore.conv2d(Tensor(x), Tensor(k), stride=2, padding=1).data
        assert np.abs(fast - oracles.conv2d_loops(x, k, None, 2, 1)).max() <= 1e-12

    def test_non_integral_output_rejected(self):
        x = Tensor(np.zeros((1, 6, 6)))
        k = Tensor(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ValidationError, match="non-integral"):
            nncore.conv2d(x, k, stride=2, padding=1)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        x = param("x", rng.standard_normal((2, 4, 4)))
        k = param("k", rng.standard_normal((2, 2, 3, 3)))
        b = param("b", rng.standard_normal(2))
        err = nncore.grad_check(lambda: nncore.sum_all(
            nncore.conv2d(x.tensor, k.tensor, b.tensor, 1, 1)), [x, k, b])
        assert err <= 1e-5


class TestConv3d:
    def test_pointwise_identity(self):
        x = Tensor(np.arange(24.0).reshape(1, 2, 3, 4))
        k = Tensor(np.ones((1, 1, 1, 1, 1)))
        assert np.array_equal(nncore.conv3d(x, k).data, x.data)

    def test_all_ones_window_sum(self):
        x = Tensor(np.ones((1, 5, 5, 5)))
        k = Tensor(np.ones((1, 1, 3, 3, 3)))
        y = nncore.conv3d(x, k, stride=1, padding=1)
        assert y.data[0, 2, 2, 2] == 27.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 4, 4, 3))
        k = rng.standard_normal((2, 2, 3, 3, 3))
        b = rng.standard_normal(2)
        fast = nncore.conv3d(Tensor(x), Tensor(k), Tensor(b), stride=1, padding=1).data
        assert np.abs(fast - oracles.conv3d_loops(x, k, b, 1, 1)).max() <= 1e-12


class TestSoftmax:
    def test_single_element(self):
        assert np.array_equal(nncore.softmax(Tensor([3.0]), axis=0).data, [1.0])

    def test_uniform_on_equal_inputs(self):
        y = nncore.softmax(Tensor([2.0, 2.0, 2.0, 2.0]), axis=0).data
        assert np.allclose(y, 0.25, atol=1e-15)

    def test_reference_values(self):
        # mpmath softmax([1, 0.5, 0.25]) at 60 digits, rounded to float64
        y = nncore.softmax(Tensor([1.0, 0.5, 0.25]), axis=0).data
        want = [0.48102426325336967, 0.29175596372884977, 0.2272197730177806]
        assert np.abs(y - np.array(want)).max() <= 1e-12

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 9)) * 10
        y = nncore.softmax(Tensor(x), axis=1).data
        assert np.abs(y.sum(axis=1) - 1.0).max() <= 1e-12
        y2 = nncore.softmax(Tensor(x + 123.456), axis=1).data
        assert np.abs(y - y2).max() <= 1e-12
        assert (y > 0).all()


class TestActivations:
    def test_relu_values(self):
        y = nncore.relu(Tensor([-1.0, 2.0, 0.0])).data
        assert np.array_equal(y, [0.0, 2.0, 0.0])

    def test_sigmoid_values(self):
        assert nncore.sigmoid(Tensor([0.0])).data[0] == 0.5
        assert abs(nncore.sigmoid(Tensor([1.0])).data[0] - 0.7310585786300049) <= 1e-12

    def test_sigmoid_extreme_inputs_finite(self):
        y = nncore.sigmoid(Tensor([-800.0, 800.0])).data
        assert y[0] == 0.0 and y[1] == 1.0


class TestAttention:
    def test_single_key_returns_value(self):
        q = Tensor(np.random.default_rng(6).standard_normal((4, 3)))
        k = Tensor([[1.0, 2.0, 3.0]])
        v = Tensor([[5.0, 6.0, 7.0]])
        y = nncore.attention(q, k, v).data
        assert np.allclose(y, np.tile([5.0, 6.0, 7.0], (4, 1)), atol=1e-15)

    def test_hard_attention_limit(self):
        q = Tensor([[100.0, 0.0]])
        k = Tensor([[1.0, 0.0], [0.0, 1.0]])
        v = Tensor([[1.0, 2.0], [3.0, 4.0]])
        y = nncore.attention(q, k, v).data
        assert np.allclose(y, [[1.0, 2.0]], atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        q = rng.standard_normal((2, 3))
        k = rng.standard_normal((4, 3))
        v = rng.standard_normal((4, 3))
        fast = nncore.attention(Tensor(q), Tensor(k), Tensor(v)).data
        assert np.abs(fast - oracles.attention_loops(q, k, v)).max() <= 1e-12

    def test_gradients(self):
        rng = np.random.default_rng(8)
        q = param("q", rng.standard_normal((2, 3)))
        k = param("k", rng.standard_normal((4, 3)))
        v = param("v", rng.standard_normal((4, 3)))
        err = nncore.grad_check(lambda: nncore.sum_all(
            nncore.attention(q.tensor, k.tensor, v.tensor)), [q, k, v])
        assert err <= 1e-5


class TestGradCheck:
    def test_linear_is_exact(self):
        rng = np.random.default_rng(9)
        x = param("x", rng.standard_normal((2, 3)))
        w = param("w", rng.standard_normal((3, 3)))
        err = nncore.grad_check(lambda: nncore.sum_all(nncore.linear(x.tensor, w.tensor)), [x, w])
        assert err <= 1e-8

    def test_sigmoid_conv_chain(self):
        rng = np.random.default_rng(10)
        x = param("x", rng.standard_normal((1, 4, 4)))
        k = param("k", rng.standard_normal((2, 1, 3, 3)))
        err = nncore.grad_check(lambda: nncore.sum_all(
            nncore.sigmoid(nncore.conv2d(x.tensor, k.tensor, None, 1, 1))), [x, k])
        assert err <= 1e-5

    def test_detects_broken_gradient(self):
        x = param("x", [2.0, 3.0])

        def broken():
            out = nncore.scale(x.tensor, 1.0)
            orig = out._backward

            def double(g):
                orig(2.0 * g)

            out._backward = double
            return nncore.sum_all(out)

        err = nncore.grad_check(broken, [x])
        assert abs(err - 1.0) < 1e-6


class TestTensorEngine:
    def test_nonfinite_outputs_rejected(self):
        with pytest.raises(NumericalError):
            nncore.exp(Tensor([1000.0]))
        with pytest.raises(NumericalError):
            nncore.log(Tensor([-1.0]))

    def test_numerical_error_names_the_op(self):
        try:
            nncore.exp(Tensor([1000.0]))
        except NumericalError as e:
            assert "exp" in str(e)

    def test_same_shape_enforced(self):
        with pytest.raises(ValidationError):
            nncore.add(Tensor([1.0]), Tensor([1.0, 2.0]))

    def test_determinism_bitwise(self):
        def build():
            p = nncore.uniform_init("w", (8, 8), 8, 8, seed=123)
            x = Tensor(np.linspace(-1, 1, 64).reshape(8, 8))
            y = nncore.relu(nncore.matmul(x, p.tensor))
            return y.data.tobytes()

        assert build() == build()

    def test_grad_accumulates_across_uses(self):
        x = param("x", [1.0, 2.0])
        y = nncore.add(nncore.scale(x.tensor, 2.0), nncore.scale(x.tensor, 3.0))
        nncore.sum_all(y).backward()
        assert np.allclose(x.grad, [5.0, 5.0])

    def test_subsample_equals_strided_conv(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 9, 9))
        k = rng.standard_normal((3, 2, 3, 3))
        strided = nncore.conv2d(Tensor(x), Tensor(k), stride=2, padding=1).data
        full = nncore.conv2d(Tensor(x), Tensor(k), stride=1, padding=1)
        assert np.array_equal(nncore.subsample2d(full, 2).data, strided)

    def test_duplicate_parameter_name_rejected(self):
        store = nncore.ParamStore()
        store.add(param("w", [1.0]))
        with pytest.raises(ValidationError):
            store.add(param("w", [2.0]))


class TestCheckpoint:
    def test_round_trip(self):
        rng = np.random.default_rng(13)
        records = {"a": rng.standard_normal((2, 3)), "b.c": rng.standard_normal(4),
                   "_meta.step": np.array([5.0])}
        back = ckpt.loads(ckpt.dumps(records))
        assert list(back) == list(records)
        for k in records:
            assert np.array_equal(back[k], records[k])

    def test_byte_layout(self):
        blob = ckpt.dumps({"w": np.array([1.0, 2.0])})
        assert blob[:4] == b"LCF1"
        import struct
        version, count = struct.unpack_from("<II", blob, 4)
        assert (version, count) == (1, 1)
        (name_len,) = struct.unpack_from("<I", blob, 12)
        assert name_len == 1 and blob[16:17] == b"w"
        (ndim,) = struct.unpack_from("<I", blob, 17)
        (dim0,) = struct.unpack_from("<I", blob, 21)
        assert (ndim, dim0) == (1, 2)
        assert np.frombuffer(blob, dtype="<f8", count=2, offset=25).tolist() == [1.0, 2.0]

    def test_bad_magic_rejected(self):
        with pytest.raises(ValidationError):
            ckpt.loads(b"XXXX" + b"\x00" * 8)
