import math

import numpy as np
import numpy.testing as npt
import pytest

from canonface import net
from canonface.errors import DataError
from canonface.net import (
    Conv,
    Dense,
    Dropout,
    FullyConnectedParams,
    LocalConv,
    LocallyConnectedParams,
    MaxPool,
    Network,
    NetworkSpec,
    Relu,
    Sigmoid,
    ZeroPad,
    dropout_apply,
    fc_backward,
    fc_forward,
    finite_diff_report,
    grad_check,
    infer_shapes,
    lc_backward,
    lc_forward,
    maxpool_backward,
    maxpool_forward,
    recon_loss,
    relu_backward,
    relu_forward,
    xent_loss,
)

from oracles import central_diff_grad, local_conv_loops, shared_conv_loops


def lc_params(rng, q, u, v, p, k):
    w = rng.standard_normal((q, u, v, p, k, k))
    b = rng.standard_normal(q)
    return LocallyConnectedParams(w, b)


def to_oracle_layout(weights):
    # public (q,u,v,p,k,k) -> oracle (u,v,p,k,k,q)
    return np.transpose(weights, (1, 2, 3, 4, 5, 0))


class TestLcForward:
    def test_1x1_identity_filters(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 5, 5))
        params = LocallyConnectedParams(np.ones((1, 5, 5, 1, 1, 1)), np.zeros(1))
        npt.assert_allclose(lc_forward(x, params), x)

    def test_zero_weights_bias_constant(self):
        x = np.random.default_rng(1).standard_normal((2, 4, 4))
        params = LocallyConnectedParams(np.zeros((3, 4, 4, 2, 3, 3)),
                                        np.array([5.0, -1.0, 0.25]))
        out = lc_forward(x, params)
        for q, c in enumerate([5.0, -1.0, 0.25]):
            npt.assert_allclose(out[q], c)

    def test_same_zero_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 4, 4))
        params = lc_params(rng, q=2, u=4, v=4, p=1, k=3)
        want = local_conv_loops(x, to_oracle_layout(params.weights),
                                params.biases, pad=1)
        npt.assert_allclose(lc_forward(x, params), want, atol=1e-12)

    def test_valid_padding_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 6, 5))
        params = lc_params(rng, q=3, u=4, v=3, p=2, k=3)
        want = local_conv_loops(x, to_oracle_layout(params.weights),
                                params.biases, pad=0)
        npt.assert_allclose(lc_forward(x, params, net.PADDING_VALID), want,
                            atol=1e-12)

    def test_channel_mismatch_rejected(self):
        params = lc_params(np.random.default_rng(4), 1, 4, 4, 2, 3)
        with pytest.raises(DataError, match="channels"):
            lc_forward(np.zeros((1, 4, 4)), params)


class TestLcBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 4))
        params = lc_params(rng, 2, 4, 4, 1, 3)
        gx, gw, gb = lc_backward(x, params, np.zeros((2, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_locality_of_filter_gradients(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 4, 4))
        params = lc_params(rng, 2, 4, 4, 1, 3)
        gout = np.zeros((2, 4, 4))
        gout[1, 2, 3] = 1.0
        _, gw, gb = lc_backward(x, params, gout)
        nz = np.argwhere(gw != 0.0)
        assert nz.size > 0
        # every nonzero weight gradient belongs to output channel 1 at (2, 3)
        assert set(map(tuple, nz[:, :3])) == {(1, 2, 3)}
        npt.assert_allclose(gb, [0.0, 1.0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 4, 4))
        params = lc_params(rng, 2, 4, 4, 2, 3)
        gout = rng.standard_normal((2, 4, 4))

        def loss_of_weights(wflat):
            p2 = LocallyConnectedParams(wflat.reshape(params.weights.shape),
                                        params.biases)
            return np.sum(lc_forward(x, p2) * gout)

        def loss_of_x(xflat):
            return np.sum(lc_forward(xflat.reshape(x.shape), params) * gout)

        gx, gw, gb = lc_backward(x, params, gout)
        num_w = central_diff_grad(loss_of_weights, params.weights.ravel())
        npt.assert_allclose(gw.ravel(), num_w, rtol=1e-6, atol=1e-8)
        num_x = central_diff_grad(loss_of_x, x.ravel())
        npt.assert_allclose(gx.ravel(), num_x, rtol=1e-6, atol=1e-8)


class TestRelu:
    def test_scalar_cases(self):
        out = relu_forward(np.array([[[-3.0, 2.0]]]))
        npt.assert_allclose(out, [[[0.0, 2.0]]])

    def test_all_negative(self):
        x = -np.ones((2, 3, 3))
        assert not relu_forward(x).any()
        assert not relu_backward(x, np.ones_like(x)).any()

    def test_subgradient_zero_at_kink(self):
        x = np.zeros((1, 1, 1))
        assert relu_backward(x, np.ones_like(x))[0, 0, 0] == 0.0

    def test_finite_difference_away_from_kink(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 3, 3))
        x[np.abs(x) < 0.1] += 0.2  # keep clear of the kink
        gout = rng.standard_normal(x.shape)

        def loss(xf):
            return np.sum(relu_forward(xf.reshape(x.shape)) * gout)

        got = relu_backward(x, gout)
        npt.assert_allclose(got.ravel(), central_diff_grad(loss, x.ravel()),
                            rtol=1e-6, atol=1e-9)


class TestMaxPool:
    def test_single_cell(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out, rec = maxpool_forward(x)
        npt.assert_allclose(out, [[[4.0]]])
        gx = maxpool_backward(rec, np.array([[[7.0]]]))
        npt.assert_allclose(gx, [[[0.0, 0.0], [0.0, 7.0]]])

    def test_constant_image(self):
        out, _ = maxpool_forward(np.full((1, 4, 4), 0.3))
        npt.assert_allclose(out, 0.3)

    def test_tie_routes_to_first_in_scan_order(self):
        x = np.full((1, 2, 2), 1.0)
        _, rec = maxpool_forward(x)
        gx = maxpool_backward(rec, np.array([[[1.0]]]))
        npt.assert_allclose(gx, [[[1.0, 0.0], [0.0, 0.0]]])

    def test_gradient_mass_conserved(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((3, 6, 4))
        out, rec = maxpool_forward(x)
        gout = rng.standard_normal(out.shape)
        gx = maxpool_backward(rec, gout)
        npt.assert_allclose(gx.sum(), gout.sum(), rtol=1e-12)

    def test_finite_difference_with_ties_broken(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 4, 4))
        x += rng.random(x.shape) * 1e-3  # break any exact ties
        gout = rng.standard_normal((2, 2, 2))

        def loss(xf):
            out, _ = maxpool_forward(xf.reshape(x.shape))
            return np.sum(out * gout)

        _, rec = maxpool_forward(x)
        gx = maxpool_backward(rec, gout)
        npt.assert_allclose(gx.ravel(), central_diff_grad(loss, x.ravel()),
                            rtol=1e-6, atol=1e-9)

    def test_non_divisible_rejected(self):
        with pytest.raises(DataError, match="divide"):
            maxpool_forward(np.zeros((1, 3, 4)))


class TestFc:
    def test_identity(self):
        x = np.arange(4.0)
        params = FullyConnectedParams(np.eye(4), np.zeros(4))
        npt.assert_allclose(fc_forward(x, params), x)

    def test_grad_out_e1_outer_product(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(5)
        params = FullyConnectedParams(rng.standard_normal((3, 5)), np.zeros(3))
        gout = np.array([1.0, 0.0, 0.0])
        _, gw, gb = fc_backward(x, params, gout)
        npt.assert_allclose(gw[0], x)
        assert not gw[1:].any()
        npt.assert_allclose(gb, gout)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(6)
        params = FullyConnectedParams(rng.standard_normal((4, 6)),
                                      rng.standard_normal(4))
        gout = rng.standard_normal(4)

        def loss_w(wf):
            p2 = FullyConnectedParams(wf.reshape(4, 6), params.bias)
            return np.dot(fc_forward(x, p2), gout)

        def loss_x(xf):
            return np.dot(fc_forward(xf, params), gout)

        gx, gw, gb = fc_backward(x, params, gout)
        npt.assert_allclose(gw.ravel(),
                            central_diff_grad(loss_w, params.weight.ravel()),
                            rtol=1e-6, atol=1e-9)
        npt.assert_allclose(gx, central_diff_grad(loss_x, x), rtol=1e-6,
                            atol=1e-9)

    def test_dim_mismatch(self):
        params = FullyConnectedParams(np.eye(3), np.zeros(3))
        with pytest.raises(DataError):
            fc_forward(np.zeros(4), params)


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.random.default_rng(13).standard_normal((2, 3, 3))
        out, mask = dropout_apply(x, 0.0, np.random.default_rng(0))
        npt.assert_allclose(out, x)
        npt.assert_allclose(mask, 1.0)

    def test_eval_identity(self):
        x = np.random.default_rng(14).standard_normal((2, 3, 3))
        out, _ = dropout_apply(x, 0.9, np.random.default_rng(0), mode=net.EVAL)
        npt.assert_allclose(out, x)

    def test_kept_fraction_concentrates(self):
        x = np.ones((10, 100, 100))
        out, _ = dropout_apply(x, 0.5, np.random.default_rng(42))
        kept = np.count_nonzero(out) / x.size
        assert abs(kept - 0.5) < 0.01

    def test_survivors_scaled(self):
        x = np.ones((1, 100, 100))
        out, mask = dropout_apply(x, 0.25, np.random.default_rng(1))
        survivors = out[out != 0.0]
        npt.assert_allclose(survivors, 1.0 / 0.75)
        npt.assert_allclose(out, x * mask)

    def test_bad_rate(self):
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(DataError):
                dropout_apply(np.zeros((1, 1, 1)), rate, np.random.default_rng(0))


class TestLosses:
    def test_recon_zero_at_match(self):
        x = np.random.default_rng(15).standard_normal(10)
        loss, grad = recon_loss(x, x)
        assert loss == 0.0
        assert not grad.any()

    def test_recon_all_ones_64x64(self):
        pred = np.ones((64, 64))
        loss, _ = recon_loss(pred, np.zeros((64, 64)))
        assert loss == 4096.0

    def test_recon_positive_unless_equal(self):
        rng = np.random.default_rng(16)
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        assert recon_loss(a, b)[0] > 0.0

    def test_recon_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        pred, target = rng.standard_normal(9), rng.standard_normal(9)
        _, grad = recon_loss(pred, target)
        num = central_diff_grad(lambda p: recon_loss(p, target)[0], pred)
        npt.assert_allclose(grad, num, rtol=1e-7, atol=1e-9)

    def test_xent_perfect_prediction(self):
        loss, _ = xent_loss(1.0, 1)
        assert loss == pytest.approx(0.0, abs=1e-10)

    def test_xent_half(self):
        loss, _ = xent_loss(0.5, 1)
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_xent_logit_gradient_matches_finite_differences(self):
        def sigmoid(z):
            return 1.0 / (1.0 + math.exp(-z))

        for label in (0, 1):
            for logit in (-2.0, -0.3, 0.0, 1.7):
                _, grad = xent_loss(sigmoid(logit), label)
                h = 1e-6
                num = (
                    xent_loss(sigmoid(logit + h), label)[0]
                    - xent_loss(sigmoid(logit - h), label)[0]
                ) / (2 * h)
                assert grad == pytest.approx(num, rel=1e-6, abs=1e-9)

    def test_xent_bad_label(self):
        with pytest.raises(DataError):
            xent_loss(0.5, 2)


class TestInferShapes:
    def test_recovery_chain(self):
        spec = NetworkSpec(
            (1, 64, 64),
            (
                LocalConv(5, 32), Relu(), MaxPool(2),
                LocalConv(5, 32), Relu(), MaxPool(2),
                LocalConv(5, 32), Relu(),
                Dropout(0.5), Dense(4096),
            ),
        )
        shapes = infer_shapes(spec)
        assert shapes[0] == (1, 64, 64)
        assert shapes[3] == (32, 32, 32)
        assert shapes[6] == (32, 16, 16)
        assert shapes[-1] == (4096,)

    def test_odd_dims_into_pool_rejected(self):
        with pytest.raises(DataError, match="divide"):
            NetworkSpec((1, 7, 8), (MaxPool(2),))

    def test_zero_pad_fixes_odd_dims(self):
        spec = NetworkSpec((1, 7, 8), (ZeroPad(1, 0), MaxPool(2)))
        assert infer_shapes(spec)[-1] == (1, 4, 4)

    def test_conv_after_dense_rejected(self):
        with pytest.raises(DataError, match="after"):
            NetworkSpec((1, 8, 8), (Dense(4), LocalConv(3, 2)))

    def test_even_filter_same_padding_rejected(self):
        with pytest.raises(DataError, match="odd"):
            NetworkSpec((1, 8, 8), (LocalConv(4, 2),))

    def test_valid_padding_shrinks(self):
        spec = NetworkSpec((1, 8, 8), (Conv(3, 2, net.PADDING_VALID),))
        assert infer_shapes(spec)[-1] == (2, 6, 6)


class TestNetwork:
    def test_identity_configured_network(self):
        spec = NetworkSpec((1, 5, 5), (LocalConv(1, 1), Relu()))
        nw = Network(spec, seed=0, dtype=np.float64)
        lc = nw.layers[0]
        lc.w[...] = 1.0
        lc.b[...] = 0.0
        x = np.random.default_rng(18).random((2, 1, 5, 5))
        npt.assert_allclose(nw.forward(x), x)

    def test_eval_forward_deterministic(self):
        spec = NetworkSpec((1, 8, 8),
                           (LocalConv(3, 4), Relu(), MaxPool(2), Dense(4)))
        nw = Network(spec, seed=1, dtype=np.float64)
        x = np.random.default_rng(19).random((3, 1, 8, 8))
        npt.assert_allclose(nw.forward(x), nw.forward(x))

    def test_same_seed_same_params(self):
        spec = NetworkSpec((1, 8, 8), (LocalConv(3, 4), Dense(4)))
        a = Network(spec, seed=7, dtype=np.float64)
        b = Network(spec, seed=7, dtype=np.float64)
        for (_, wa, _), (_, wb, _) in zip(a.param_items(), b.param_items()):
            npt.assert_array_equal(wa, wb)

    def test_shared_conv_matches_loop_oracle(self):
        spec = NetworkSpec((2, 6, 6), (Conv(3, 3),))
        nw = Network(spec, seed=2, dtype=np.float64)
        x = np.random.default_rng(20).standard_normal((1, 2, 6, 6))
        layer = nw.layers[0]
        # internal (P*k*k, Q) -> oracle (Q, P, k, k)
        w_oracle = layer.w.reshape(2, 3, 3, 3).transpose(3, 0, 1, 2)
        want = shared_conv_loops(x[0], w_oracle, layer.b, pad=1)
        npt.assert_allclose(nw.forward(x)[0], want, atol=1e-12)

    def test_non_shared_perturbation_is_local(self):
        spec = NetworkSpec((1, 6, 6), (LocalConv(3, 2),))
        nw = Network(spec, seed=3, dtype=np.float64)
        x = np.random.default_rng(21).standard_normal((1, 1, 6, 6))
        base = nw.forward(x)
        lc = nw.layers[0]
        w_spec = lc.spec_order_weights()
        w_spec[1, 2, 4, 0, 0, 0] += 0.5  # channel 1's filter at location (2, 4)
        lc.set_spec_order_weights(w_spec)
        moved = nw.forward(x)
        diff = np.abs(moved - base)[0]
        changed = np.argwhere(diff > 1e-12)
        assert set(map(tuple, changed)) == {(1, 2, 4)}

    def test_dropout_train_reproducible_with_seeded_rng(self):
        spec = NetworkSpec((1, 4, 4), (Dropout(0.5),))
        nw = Network(spec, seed=0, dtype=np.float64)
        x = np.random.default_rng(22).random((2, 1, 4, 4))
        a = nw.forward(x, net.TRAIN, np.random.default_rng(99))
        b = nw.forward(x, net.TRAIN, np.random.default_rng(99))
        npt.assert_array_equal(a, b)

    def test_input_shape_mismatch(self):
        nw = Network(NetworkSpec((1, 8, 8), (Dense(4),)), dtype=np.float64)
        with pytest.raises(DataError, match="shape"):
            nw.forward(np.zeros((1, 1, 8, 7)))


class TestGradCheck:
    def tiny_net(self, seed=0):
        spec = NetworkSpec((1, 8, 8),
                           (LocalConv(3, 4), Relu(), MaxPool(2), Dense(4)))
        return Network(spec, seed=seed, dtype=np.float64)

    def test_tiny_recovery_net_passes(self):
        nw = self.tiny_net()
        rng = np.random.default_rng(23)
        x = rng.random((1, 1, 8, 8))
        target = rng.random(4)
        report = grad_check(nw, x, target, loss="recon", max_checks=3000)
        assert report.ok
        assert report.max_rel_error < 1e-5
        assert report.checked == nw.param_count()

    def test_sigmoid_xent_head_passes(self):
        spec = NetworkSpec((2, 6, 6),
                           (Conv(3, 3), Relu(), MaxPool(2), Dense(1)))
        nw = Network(spec, seed=4, dtype=np.float64)
        x = np.random.default_rng(24).random((1, 2, 6, 6))
        report = grad_check(nw, x, 1, loss="xent", max_checks=3000)
        assert report.ok and report.max_rel_error < 1e-5

    def test_zero_everything_trivially_passes(self):
        nw = self.tiny_net()
        for _, w, _ in nw.param_items():
            w[...] = 0.0
        report = grad_check(nw, np.zeros((1, 1, 8, 8)), np.zeros(4))
        assert report.ok
        assert report.max_rel_error == 0.0

    def test_corrupted_bias_gradient_detected(self):
        nw = self.tiny_net(seed=5)
        rng = np.random.default_rng(25)
        x = rng.random((1, 1, 8, 8))
        target = rng.random(4)
        out = nw.forward(x)
        nw.backward(2.0 * (out - target))
        tgt = target

        def loss_fn():
            return float(np.sum((nw.forward(x) - tgt) ** 2))

        items = []
        for name, w, g in nw.param_items():
            if name.endswith("dense_bias"):
                g = g * 2.0  # inject a wrong-by-2x bias gradient
            items.append((name, w, g))
        report = finite_diff_report(items, loss_fn, max_checks=5000)
        assert not report.ok
        assert "bias" in report.failing_index[0]

    def test_dropout_must_be_off(self):
        spec = NetworkSpec((1, 4, 4), (Dropout(0.5), Dense(2)))
        nw = Network(spec, dtype=np.float64)
        with pytest.raises(DataError, match="dropout"):
            grad_check(nw, np.zeros((1, 1, 4, 4)), np.zeros(2))

    def test_zero_pad_layer_gradients(self):
        spec = NetworkSpec((1, 3, 4), (ZeroPad(1, 0), MaxPool(2), Dense(3)))
        nw = Network(spec, seed=6, dtype=np.float64)
        rng = np.random.default_rng(26)
        x = rng.random((1, 1, 3, 4))
        report = grad_check(nw, x, rng.random(3))
        assert report.ok and report.max_rel_error < 1e-5
