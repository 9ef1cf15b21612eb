import numpy as np
import pytest

from salseg.balancing import ClassWeights
from salseg.maps import SalientRegionMap
from salseg.net import (
    Conv,
    Deconv,
    MaxPool,
    NetConfig,
    ReLU,
    Softmax,
    Unpool,
    build_encoder_decoder,
    conv_forward,
    deconv_forward,
    euclidean_loss,
    maxpool_forward,
    softmax_backward,
    softmax_forward,
    unpool_backward,
    unpool_forward,
    weighted_ce_loss,
)


def conv_oracle(x, w, b):
    """Six-nested-loop direct convolution, zero same-padding, stride 1."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    p = kh // 2
    out = np.zeros((n, f, h, wd))
    for ni in range(n):
        for fi in range(f):
            for y in range(h):
                for xcol in range(wd):
                    acc = b[fi]
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                sy, sx = y + i - p, xcol + j - p
                                if 0 <= sy < h and 0 <= sx < wd:
                                    acc += w[fi, ci, i, j] * x[ni, ci, sy, sx]
                    out[ni, fi, y, xcol] = acc
    return out


def deconv_oracle(x, w):
    """Direct scatter-accumulate transposed convolution, stride 2."""
    n, c, h, wd = x.shape
    _, f, kh, kw = w.shape
    p = (kh - 2) // 2
    full = np.zeros((n, f, 2 * h + 2 * p, 2 * wd + 2 * p))
    for ni in range(n):
        for ci in range(c):
            for y in range(h):
                for xcol in range(wd):
                    for fi in range(f):
                        for i in range(kh):
                            for j in range(kw):
                                full[ni, fi, 2 * y + i, 2 * xcol + j] += (
                                    x[ni, ci, y, xcol] * w[ci, fi, i, j]
                                )
    return full[:, :, p : p + 2 * h, p : p + 2 * wd]


class TestConvForward:
    def test_1x1_kernel_scales(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = np.full((1, 1, 1, 1), 2.0)
        out = conv_forward(x, w, np.zeros(1))
        np.testing.assert_array_equal(out[0, 0], [[2, 4], [6, 8]])

    def test_identity_3x3_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 5, 5))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        np.testing.assert_allclose(conv_forward(x, w, np.zeros(3)), x, atol=1e-15)

    def test_matches_six_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        np.testing.assert_allclose(conv_forward(x, w, b), conv_oracle(x, w, b), atol=1e-12)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            conv_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            conv_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), np.zeros(1))


class TestMaxPool:
    def test_unique_max(self):
        x = np.array([[[[1.0, 3.0], [2.0, 4.0]]]])
        out, idx = maxpool_forward(x)
        assert out[0, 0, 0, 0] == 4.0
        assert idx[0, 0, 0, 0] == 3  # bottom-right of the window

    def test_tie_breaks_to_first_row_major(self):
        x = np.full((1, 1, 2, 2), 5.0)
        out, idx = maxpool_forward(x)
        assert out[0, 0, 0, 0] == 5.0
        assert idx[0, 0, 0, 0] == 0  # top-left

    def test_matches_window_scan_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 8, 8))
        out, idx = maxpool_forward(x)
        for n in range(2):
            for c in range(3):
                for i in range(4):
                    for j in range(4):
                        win = x[n, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                        assert out[n, c, i, j] == win.max()
                        assert idx[n, c, i, j] == win.ravel().argmax()

    def test_odd_extent_rejected(self):
        with pytest.raises(ValueError, match="even"):
            maxpool_forward(np.zeros((1, 1, 5, 4)))


class TestUnpool:
    def test_scatter_single_value(self):
        y = np.array([[[[4.0]]]])
        idx = np.array([[[[3]]]])
        out = unpool_forward(y, idx)
        np.testing.assert_array_equal(out[0, 0], [[0, 0], [0, 4]])

    def test_pool_then_unpool_preserves_maxima(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 2, 6, 6))
        out, idx = maxpool_forward(x)
        restored = unpool_forward(out, idx)
        nz = restored != 0
        np.testing.assert_array_equal(restored[nz], x[nz])

    def test_unpool_then_pool_roundtrip_identity(self):
        rng = np.random.default_rng(4)
        y = rng.uniform(0.1, 1.0, size=(2, 2, 3, 3))
        idx = rng.integers(0, 4, size=y.shape)
        pooled, _ = maxpool_forward(unpool_forward(y, idx))
        np.testing.assert_array_equal(pooled, y)

    def test_one_nonzero_per_window(self):
        rng = np.random.default_rng(5)
        y = rng.uniform(0.1, 1.0, size=(1, 1, 4, 4))
        idx = rng.integers(0, 4, size=y.shape)
        out = unpool_forward(y, idx)
        windows = out.reshape(1, 1, 4, 2, 4, 2).transpose(0, 1, 2, 4, 3, 5)
        counts = (windows != 0).sum(axis=(-1, -2))
        assert counts.max() <= 1

    def test_backward_gathers_at_indices(self):
        rng = np.random.default_rng(6)
        idx = rng.integers(0, 4, size=(1, 1, 2, 2))
        dout = rng.normal(size=(1, 1, 4, 4))
        dy = unpool_backward(dout, idx)
        for i in range(2):
            for j in range(2):
                win = dout[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].ravel()
                assert dy[0, 0, i, j] == win[idx[0, 0, i, j]]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            unpool_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3), dtype=int))


class TestDeconv:
    def test_single_pixel_ones_kernel(self):
        x = np.full((1, 1, 1, 1), 3.0)
        w = np.ones((1, 1, 2, 2))
        out = deconv_forward(x, w)
        np.testing.assert_array_equal(out[0, 0], [[3, 3], [3, 3]])

    def test_zero_kernel_zero_output(self):
        x = np.random.default_rng(7).normal(size=(1, 2, 3, 3))
        out = deconv_forward(x, np.zeros((2, 3, 4, 4)))
        assert not out.any()
        assert out.shape == (1, 3, 6, 6)

    def test_matches_scatter_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 2, 3, 3))
        w = rng.normal(size=(2, 3, 4, 4))
        np.testing.assert_allclose(deconv_forward(x, w), deconv_oracle(x, w), atol=1e-12)

    def test_doubles_extents(self):
        out = deconv_forward(np.zeros((1, 1, 5, 7)), np.zeros((1, 1, 4, 4)))
        assert out.shape == (1, 1, 10, 14)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            deconv_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 1, 4, 4)))


class TestSoftmax:
    def test_uniform_logits(self):
        x = np.zeros((1, 3, 1, 1))
        np.testing.assert_allclose(softmax_forward(x), 1.0 / 3.0)

    def test_large_logit_no_overflow(self):
        x = np.zeros((1, 2, 1, 1))
        x[0, 0] = 1000.0
        p = softmax_forward(x)
        assert np.all(np.isfinite(p))
        assert p[0, 0, 0, 0] == pytest.approx(1.0)
        assert p[0, 1, 0, 0] == pytest.approx(0.0, abs=1e-300)

    def test_known_values(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1)
        p = softmax_forward(x)[0, :, 0, 0]
        np.testing.assert_allclose(p, [0.0900, 0.2447, 0.6652], atol=1e-4)

    def test_channels_sum_to_one(self):
        rng = np.random.default_rng(9)
        p = softmax_forward(rng.normal(size=(3, 5, 6, 6), scale=4))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0) and np.all(p < 1)


class TestWeightedCELoss:
    def test_uniform_weights_half_probs(self):
        probs = np.full((1, 2, 1, 1), 0.5)
        gt = np.array([[[1]]])
        w = [1.0, 1.0]
        loss_cat, _ = weighted_ce_loss(probs, gt, w, "categorical")
        loss_lit, _ = weighted_ce_loss(probs, gt, w, "eq2-literal")
        assert loss_cat == pytest.approx(-np.log(0.5), abs=1e-4)
        assert loss_lit == pytest.approx(-2 * np.log(0.5), abs=1e-4)

    def test_perfect_prediction_zero_loss(self):
        probs = np.zeros((1, 3, 1, 1))
        probs[0, 2] = 1.0
        gt = np.array([[[2]]])
        for form in ("categorical", "eq2-literal"):
            loss, _ = weighted_ce_loss(probs, gt, [1, 1, 1], form)
            assert loss == pytest.approx(0.0, abs=1e-10)

    def test_doubling_weights_doubles_loss_and_grad(self):
        rng = np.random.default_rng(10)
        probs = softmax_forward(rng.normal(size=(2, 3, 4, 4)))
        gt = rng.integers(0, 3, (2, 4, 4))
        w = rng.uniform(0.5, 2.0, 3)
        for form in ("categorical", "eq2-literal"):
            l1, g1 = weighted_ce_loss(probs, gt, w, form)
            l2, g2 = weighted_ce_loss(probs, gt, 2 * w, form)
            assert l2 == pytest.approx(2 * l1)
            np.testing.assert_allclose(g2, 2 * g1, atol=1e-12)

    def test_uniform_weights_equal_standard_ce(self):
        rng = np.random.default_rng(11)
        probs = softmax_forward(rng.normal(size=(1, 4, 3, 3)))
        gt = rng.integers(0, 4, (1, 3, 3))
        loss, _ = weighted_ce_loss(probs, gt, np.ones(4), "categorical")
        p_gt = np.take_along_axis(probs, gt[:, None], axis=1)[:, 0]
        assert loss == pytest.approx(float(-np.log(p_gt).mean()), abs=1e-12)

    def test_accepts_region_map_and_class_weights(self):
        probs = np.full((2, 1, 1), 0.5)
        srm = SalientRegionMap(np.array([[1]]), 2)
        loss, grad = weighted_ce_loss(probs, srm, ClassWeights(np.ones(2)))
        assert loss == pytest.approx(-np.log(0.5))
        assert grad.shape == (2, 1, 1)

    def test_wrong_weight_count_rejected(self):
        probs = np.full((1, 3, 1, 1), 1 / 3)
        with pytest.raises(ValueError, match="weights"):
            weighted_ce_loss(probs, np.array([[[0]]]), [1.0, 1.0])

    def test_categorical_grad_is_softmax_ce_grad(self):
        # fused grad wrt logits: W_g * (p - onehot) / npix
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(1, 3, 2, 2))
        probs = softmax_forward(logits)
        gt = rng.integers(0, 3, (1, 2, 2))
        w = np.array([0.5, 1.0, 2.0])
        _, grad = weighted_ce_loss(probs, gt, w, "categorical")
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, gt[:, None], 1.0, axis=1)
        expected = (probs - onehot) * w[gt][:, None] / 4
        np.testing.assert_allclose(grad, expected, atol=1e-15)


class TestEuclideanLoss:
    def test_zero_at_equality(self):
        x = np.random.default_rng(13).normal(size=(1, 1, 3, 3))
        loss, grad = euclidean_loss(x, x)
        assert loss == 0.0
        assert not grad.any()

    def test_offset_by_one(self):
        x = np.random.default_rng(14).normal(size=(2, 1, 4, 4))
        loss, _ = euclidean_loss(x + 1.0, x)
        assert loss == pytest.approx(0.5)

    def test_matches_hand_sum(self):
        rng = np.random.default_rng(15)
        pred = rng.normal(size=(1, 1, 3, 3))
        target = rng.normal(size=(1, 1, 3, 3))
        loss, grad = euclidean_loss(pred, target)
        expected = 0.5 * ((pred - target) ** 2).sum() / 9
        assert loss == pytest.approx(float(expected), abs=1e-12)
        np.testing.assert_allclose(grad, (pred - target) / 9, atol=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            euclidean_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))


class TestNetworkMechanics:
    def test_backward_without_forward_rejected(self):
        net = build_encoder_decoder(NetConfig(stage_channels=(2, 2)), seed=0)
        with pytest.raises(RuntimeError, match="without a cached forward"):
            net.backward(np.zeros((1, 3, 8, 8)))

    def test_unpool_before_pool_rejected(self):
        pool = MaxPool()
        unpool = Unpool(pool)
        with pytest.raises(RuntimeError, match="paired max-pool"):
            unpool.forward(np.zeros((1, 1, 2, 2)))

    def test_zero_loss_gradient_gives_zero_param_gradients(self):
        net = build_encoder_decoder(NetConfig(stage_channels=(2, 2)), seed=1)
        x = np.random.default_rng(16).uniform(size=(1, 1, 8, 8))
        out = net.forward(x)
        net.zero_grads()
        net.backward(np.zeros_like(out))
        for g in net.grad_arrays():
            assert not g.any()

    def test_relu_backward_zeroes_clipped_positions(self):
        relu = ReLU()
        x = np.array([[[[-1.0, 0.0], [0.5, 2.0]]]])
        relu.forward(x)
        dout = np.ones_like(x)
        dx = relu.backward(dout)
        np.testing.assert_array_equal(dx[0, 0], [[0, 0], [1, 1]])

    def test_forward_bit_deterministic(self):
        cfg = NetConfig(stage_channels=(3, 4), decoder_mode="deconv")
        x = np.random.default_rng(17).uniform(size=(2, 1, 8, 8))
        outs = []
        for _ in range(2):
            net = build_encoder_decoder(cfg, seed=11)
            outs.append(net.forward(x).tobytes())
        assert outs[0] == outs[1]

    def test_output_matches_input_resolution(self):
        for mode in ("unpool", "deconv"):
            cfg = NetConfig(out_channels=3, stage_channels=(2, 3), decoder_mode=mode)
            net = build_encoder_decoder(cfg, seed=2)
            out = net.forward(np.zeros((1, 1, 16, 12)))
            assert out.shape == (1, 3, 16, 12)

    def test_softmax_layer_backward_matches_jacobian(self):
        rng = np.random.default_rng(18)
        layer = Softmax()
        x = rng.normal(size=(1, 4, 2, 2))
        p = layer.forward(x)
        dout = rng.normal(size=x.shape)
        dx = layer.backward(dout)
        np.testing.assert_allclose(dx, softmax_backward(dout, p), atol=1e-15)

    def test_zero_seed_none_gives_zero_params(self):
        net = build_encoder_decoder(NetConfig(stage_channels=(2, 2)), seed=None)
        for p in net.param_arrays():
            assert not p.any()
