"""Layer semantics: shape arithmetic against independent oracles, linearity,
batch-norm statistics, spec validation."""

import numpy as np
import pytest

from voice2face import ops
from voice2face.errors import ShapeError
from voice2face.layers import LayerSpec, build_layer, build_sequential, chain_shapes
from voice2face.tensor import Tensor


def recurrence(t):
    # Independent oracle: the stride-2 time recurrence applied literally.
    return -(-(t - 1) // 2) + 1


class TestConv1d:
    def make(self, c_in=1, c_out=1, k=3, stride=2, padding=1):
        spec = LayerSpec("conv1d", kernel=k, stride=stride, padding=padding,
                         in_channels=c_in, out_channels=c_out)
        return build_layer(spec, np.random.default_rng(0), np.float64)

    @pytest.mark.parametrize("t,expected", [(300, 151), (2, 2)])
    def test_ceil_mode_output_length(self, t, expected):
        assert recurrence(t) == expected  # oracle agrees with the frozen value
        layer = self.make()
        out = layer.forward(Tensor(np.zeros((1, 1, t))))
        assert out.data.shape == (1, 1, expected)

    @pytest.mark.parametrize("t0", [100, 151, 300, 800])
    def test_five_layer_chain_matches_recurrence(self, t0):
        expected = [t0]
        for _ in range(5):
            expected.append(recurrence(expected[-1]))
        layer = self.make()
        t = t0
        for want in expected[1:]:
            out = layer.forward(Tensor(np.zeros((1, 1, t))))
            assert out.data.shape[2] == want
            t = want

    def test_identity_kernel_reproduces_input(self, rng):
        layer = self.make(c_in=1, c_out=1, k=1, stride=1, padding=0)
        layer.weight.data[...] = 1.0
        layer.bias.data[...] = 0.0
        x = rng.normal(size=(2, 1, 9))
        out = layer.forward(Tensor(x))
        assert np.allclose(out.data, x)

    def test_linearity_in_input(self, rng):
        layer = self.make(c_in=3, c_out=4)
        layer.bias.data[...] = 0.0
        x = rng.normal(size=(2, 3, 11))
        y = rng.normal(size=(2, 3, 11))
        a, b = 1.7, -0.3
        combined = layer.forward(Tensor(a * x + b * y)).data
        separate = a * layer.forward(Tensor(x)).data + b * layer.forward(Tensor(y)).data
        assert np.abs(combined - separate).max() < 1e-10

    def test_channel_mismatch_names_dimension(self):
        layer = self.make(c_in=3, c_out=4)
        with pytest.raises(ShapeError) as exc:
            layer.forward(Tensor(np.zeros((1, 2, 10))))
        assert exc.value.dimension == "in_channels"


class TestConv2d:
    def make(self, c_in, c_out, k, stride, padding):
        spec = LayerSpec("conv2d", kernel=k, stride=stride, padding=padding,
                         in_channels=c_in, out_channels=c_out)
        return build_layer(spec, np.random.default_rng(0), np.float64)

    @pytest.mark.parametrize("h,expected", [(64, 32), (32, 16), (16, 8), (8, 4), (5, 3)])
    def test_stride2_halving(self, h, expected):
        assert expected == -(-h // 2)  # ceil(H/2) oracle
        layer = self.make(2, 3, 3, 2, 1)
        out = layer.forward(Tensor(np.zeros((1, 2, h, h))))
        assert out.data.shape[2:] == (expected, expected)

    def test_valid_4x4_conv(self):
        layer = self.make(2, 5, 4, 1, 0)
        out = layer.forward(Tensor(np.zeros((1, 2, 4, 4))))
        assert out.data.shape == (1, 5, 1, 1)

    def test_discriminator_stack_reaches_64x1x1(self):
        # 3x64x64 through the shared-trunk conv chain ends at 64x1x1.
        specs = [
            LayerSpec("conv2d", kernel=1, stride=1, padding=0, in_channels=3, out_channels=32),
            LayerSpec("conv2d", kernel=3, stride=2, padding=1, in_channels=32, out_channels=64),
            LayerSpec("conv2d", kernel=3, stride=2, padding=1, in_channels=64, out_channels=128),
            LayerSpec("conv2d", kernel=3, stride=2, padding=1, in_channels=128, out_channels=256),
            LayerSpec("conv2d", kernel=3, stride=2, padding=1, in_channels=256, out_channels=512),
            LayerSpec("conv2d", kernel=4, stride=1, padding=0, in_channels=512, out_channels=64),
        ]
        chain = chain_shapes(specs, (3, 64, 64))
        assert chain[-1] == (64, 1, 1)
        assert chain[2] == (64, 32, 32) and chain[3] == (128, 16, 16)

    def test_zero_input_zero_bias_gives_zero_output(self):
        layer = self.make(3, 4, 3, 2, 1)
        layer.bias.data[...] = 0.0
        out = layer.forward(Tensor(np.zeros((2, 3, 8, 8))))
        assert np.all(out.data == 0.0)

    def test_input_smaller_than_kernel_raises(self):
        layer = self.make(1, 1, 4, 1, 0)
        with pytest.raises(ShapeError):
            layer.forward(Tensor(np.zeros((1, 1, 3, 3))))

    def test_linearity_in_input(self, rng):
        layer = self.make(3, 4, 3, 2, 1)
        layer.bias.data[...] = 0.0
        x = rng.normal(size=(2, 3, 10, 10))
        y = rng.normal(size=(2, 3, 10, 10))
        a, b = -0.9, 2.4
        combined = layer.forward(Tensor(a * x + b * y)).data
        separate = a * layer.forward(Tensor(x)).data + b * layer.forward(Tensor(y)).data
        assert np.abs(combined - separate).max() < 1e-10


class TestDeconv2d:
    def make(self, c_in, c_out, k, stride, padding, output_padding):
        spec = LayerSpec("deconv2d", kernel=k, stride=stride, padding=padding,
                         output_padding=output_padding,
                         in_channels=c_in, out_channels=c_out)
        return build_layer(spec, np.random.default_rng(0), np.float64)

    def test_1x1_to_4x4(self):
        layer = self.make(7, 9, 4, 1, 0, 0)
        out = layer.forward(Tensor(np.zeros((1, 7, 1, 1))))
        assert out.data.shape == (1, 9, 4, 4)

    @pytest.mark.parametrize("h,expected", [(4, 8), (8, 16), (16, 32), (32, 64)])
    def test_strided_doubling_with_output_padding(self, h, expected):
        assert expected == (h - 1) * 2 - 2 + 3 + 1  # closed form oracle
        layer = self.make(2, 3, 3, 2, 1, 1)
        out = layer.forward(Tensor(np.zeros((1, 2, h, h))))
        assert out.data.shape[2:] == (expected, expected)

    def test_adjoint_of_correlation_brute_force(self, rng):
        # Oracle: build the correlation's Jacobian column by column, then
        # apply its transpose to a delta; the transposed conv must match.
        w = rng.normal(size=(3, 3))

        def correlate(x):
            return float((x * w).sum())  # valid 3x3 correlation -> scalar

        jac = np.zeros((1, 9))
        for j in range(9):
            basis = np.zeros(9)
            basis[j] = 1.0
            jac[0, j] = correlate(basis.reshape(3, 3))
        dy = np.array([[1.0]])
        adjoint = (jac.T @ dy.reshape(1)).reshape(3, 3)

        layer = self.make(1, 1, 3, 1, 0, 0)
        layer.weight.data[0, 0] = w
        layer.bias.data[...] = 0.0
        out = layer.forward(Tensor(dy.reshape(1, 1, 1, 1)))
        # The adjoint equals the stored correlation kernel, i.e. the flip of
        # the equivalent true-convolution kernel.
        assert np.allclose(out.data[0, 0], adjoint)
        assert np.allclose(adjoint, np.flip(np.flip(w, 0), 1)[::-1, ::-1])

    def test_matches_gradient_of_tied_conv(self, rng):
        # deconv(g) must equal d/dx <conv(x), g> for weight-tied kernels.
        conv = build_layer(LayerSpec("conv2d", kernel=3, stride=2, padding=1,
                                     in_channels=2, out_channels=3),
                           np.random.default_rng(1), np.float64)
        conv.bias.data[...] = 0.0
        x = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)
        g = rng.normal(size=(1, 3, 4, 4))
        out = conv.forward(x)
        (out * Tensor(g)).sum().backward()

        # The tie is verbatim: deconv layout (C_in, C_out, k, k) lines up
        # with the conv's (C_out, C_in, k, k) when the roles swap.
        deconv = self.make(3, 2, 3, 2, 1, 1)
        deconv.weight.data[...] = conv.weight.data
        deconv.bias.data[...] = 0.0
        back = deconv.forward(Tensor(g))
        assert back.data.shape == (1, 2, 8, 8)
        assert np.allclose(back.data, x.grad, atol=1e-12)

    def test_nonpositive_output_raises(self):
        with pytest.raises(ShapeError):
            layer = self.make(1, 1, 1, 2, 1, 0)
            layer.forward(Tensor(np.zeros((1, 1, 1, 1))))


class TestBatchNorm:
    def make(self, c=3):
        return build_layer(LayerSpec("batchnorm", in_channels=c),
                           np.random.default_rng(0), np.float64)

    def test_train_mode_standardizes(self, rng):
        layer = self.make()
        x = rng.normal(2.0, 3.0, size=(8, 3, 10))
        out = layer.forward(Tensor(x), training=True)
        mean = out.data.mean(axis=(0, 2))
        var = out.data.var(axis=(0, 2))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1.0).max() < 1e-4

    def test_identity_affine_on_standardized_input(self, rng):
        layer = self.make()
        x = rng.normal(size=(16, 3, 50))
        x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
        out = layer.forward(Tensor(x), training=True)
        # the eps inside the variance term allows a ~1e-5 relative offset
        assert np.abs(out.data - x).max() < 1e-4

    def test_constant_channel_gives_zero_output(self):
        layer = self.make(2)
        x = np.ones((4, 2, 5)) * np.array([3.0, -1.5]).reshape(1, 2, 1)
        out = layer.forward(Tensor(x), training=True)
        assert np.abs(out.data).max() < 1e-2  # zero variance guarded by eps

    def test_running_mean_single_update_closed_form(self, rng):
        layer = self.make()
        x = rng.normal(1.0, 2.0, size=(6, 3, 7))
        layer.forward(Tensor(x), training=True)
        batch_mean = x.mean(axis=(0, 2))
        assert np.allclose(layer.running_mean, layer.MOMENTUM * batch_mean)

    def test_infer_mode_uses_running_stats_and_is_deterministic(self, rng):
        layer = self.make()
        layer.forward(Tensor(rng.normal(size=(8, 3, 5))), training=True)
        frozen_mean = layer.running_mean.copy()
        x = rng.normal(size=(1, 3, 5))
        a = layer.forward(Tensor(x), training=False).data
        b = layer.forward(Tensor(x), training=False).data
        assert np.array_equal(a, b)
        assert np.array_equal(layer.running_mean, frozen_mean)

    def test_batch_of_one_raises_in_train_mode(self):
        layer = self.make()
        with pytest.raises(ShapeError):
            layer.forward(Tensor(np.zeros((1, 3, 5))), training=True)


class TestActivations:
    def test_softmax_uniform_logits(self):
        out = ops.softmax(Tensor(np.zeros((1, 4))), axis=1)
        assert np.allclose(out.data, 0.25)

    def test_softmax_sums_to_one_with_large_logits(self, rng):
        x = rng.uniform(-1e3, 1e3, size=(5, 7))
        out = ops.softmax(Tensor(x), axis=1)
        assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-6
        assert np.isfinite(out.data).all()

    def test_leaky_relu_negative_slope(self):
        out = ops.leaky_relu(Tensor(np.array([-1.0])), 0.2)
        assert out.data[0] == pytest.approx(-0.2)

    def test_sigmoid_at_zero(self):
        out = ops.sigmoid(Tensor(np.array([0.0])))
        assert out.data[0] == pytest.approx(0.5)

    def test_relu_clamps_negatives(self, rng):
        x = rng.normal(size=(4, 4))
        out = ops.relu(Tensor(x))
        assert np.array_equal(out.data, np.maximum(x, 0))


class TestLayerSpec:
    def test_missing_required_field_rejected(self):
        with pytest.raises(ValueError):
            LayerSpec("conv1d", kernel=3, stride=2, in_channels=1, out_channels=1)

    def test_inapplicable_field_rejected(self):
        with pytest.raises(ValueError):
            LayerSpec("relu", kernel=3)

    def test_output_padding_bound(self):
        with pytest.raises(ValueError):
            LayerSpec("deconv2d", kernel=3, stride=2, padding=1, output_padding=2,
                      in_channels=1, out_channels=1)

    def test_stride_bound(self):
        with pytest.raises(ValueError):
            LayerSpec("conv2d", kernel=3, stride=0, padding=1,
                      in_channels=1, out_channels=1)

    def test_round_trip(self):
        spec = LayerSpec("conv2d", kernel=3, stride=2, padding=1,
                         in_channels=4, out_channels=8)
        assert LayerSpec.from_dict(spec.to_dict()) == spec


def test_sequential_params_and_shapes(rng):
    seq = build_sequential([
        LayerSpec("conv1d", kernel=3, stride=2, padding=1, in_channels=2, out_channels=4),
        LayerSpec("batchnorm", in_channels=4),
        LayerSpec("relu"),
        LayerSpec("time_avg_pool"),
    ], rng)
    assert [n for n, _ in seq.params()] == ["0.weight", "0.bias", "1.gamma", "1.beta"]
    assert seq.out_shape((2, 100)) == (4,)
    out = seq.forward(Tensor(np.random.default_rng(0).normal(size=(3, 2, 100)).astype(np.float32)),
                      training=True)
    assert out.data.shape == (3, 4)
