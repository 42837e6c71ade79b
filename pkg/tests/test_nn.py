"""
Testes do núcleo de redes: forward, perdas ponderadas, otimizador,
verificação de gradiente e checkpoint.
"""

import math
import os

import numpy as np
import pytest

from src.errors import MissingArtifactError, NonFiniteLossError, ShapeMismatchError
from src.nn import (
    LayerSpec,
    Network,
    OptimizerState,
    backprop,
    gradient_check,
    load_checkpoint,
    loss_and_grad,
    optimizer_step,
    save_checkpoint,
)


def _specs(*raw):
    return [LayerSpec(**r) for r in raw]


def _mlp(rng, fn="tanh", n_in=4, hidden=5, n_out=2):
    specs = _specs(
        {"kind": "dense", "units": hidden},
        {"kind": "activation", "fn": fn},
        {"kind": "dense", "units": n_out},
    )
    net = Network((n_in,), specs, rng=rng)
    # vieses não nulos para que o gradiente do bias não seja trivial
    for key in net.params:
        if key.endswith(".b"):
            net.params[key] = rng.normal(0.0, 0.3, size=net.params[key].shape)
    return net


def _conv_classifier(rng, mode="max", fn="relu"):
    specs = _specs(
        {"kind": "conv2d", "out_channels": 3},
        {"kind": "activation", "fn": fn},
        {"kind": "pool", "mode": mode},
        {"kind": "flatten"},
        {"kind": "dense", "units": 2},
    )
    return Network((2, 4, 4), specs, rng=rng)


def _segmenter(rng):
    specs = _specs(
        {"kind": "conv2d", "out_channels": 2},
        {"kind": "activation", "fn": "tanh"},
        {"kind": "skip_save", "name": "enc"},
        {"kind": "pool", "mode": "avg"},
        {"kind": "conv2d", "out_channels": 2},
        {"kind": "activation", "fn": "sigmoid"},
        {"kind": "upsample"},
        {"kind": "skip_concat", "name": "enc"},
        {"kind": "conv2d", "out_channels": 1, "kernel": 1},
    )
    return Network((1, 4, 4), specs, rng=rng)


class TestForward:
    def test_identity_network_returns_batch(self, rng):
        batch = rng.normal(size=(3, 5))
        net = Network((5,), [])
        np.testing.assert_array_equal(net.forward(batch), batch)
        assert net.parameter_count == 0

    def test_zero_dense_layer_outputs_zeros(self, rng):
        net = Network((3,), _specs({"kind": "dense", "units": 4}), rng=rng)
        net.params = {key: np.zeros_like(v) for key, v in net.params.items()}
        np.testing.assert_array_equal(net.forward(rng.normal(size=(2, 3))), np.zeros((2, 4)))

    def test_scalar_dense_substitution(self):
        params = {"0.W": np.array([[2.0]]), "0.b": np.array([1.0])}
        net = Network((1,), _specs({"kind": "dense", "units": 1}), params=params)
        assert net.forward(np.array([[3.0]]))[0, 0] == 7.0

    def test_forward_is_pure(self, rng):
        net = _segmenter(rng)
        batch = rng.random((3, 1, 4, 4))
        before = net.digest()
        first = net.forward(batch)
        second = net.forward(batch)
        assert first.tobytes() == second.tobytes()
        assert net.digest() == before

    def test_segmenter_output_shape(self, rng):
        net = _segmenter(rng)
        assert net.output_shape == (1, 4, 4)
        assert net.forward(rng.random((2, 1, 4, 4))).shape == (2, 1, 4, 4)

    def test_wrong_input_shape_raises(self, rng):
        net = _mlp(rng)
        with pytest.raises(ShapeMismatchError):
            net.forward(rng.normal(size=(2, 3)))

    def test_odd_pool_input_rejected_at_construction(self):
        with pytest.raises(ShapeMismatchError) as info:
            Network((1, 5, 5), _specs({"kind": "pool"}))
        assert info.value.layer_index == 0

    def test_concat_without_save_rejected(self):
        with pytest.raises(ShapeMismatchError):
            Network((1, 4, 4), _specs({"kind": "skip_concat", "name": "nada"}))

    def test_params_with_wrong_shape_rejected(self):
        params = {"0.W": np.zeros((2, 2)), "0.b": np.zeros(1)}
        with pytest.raises(ShapeMismatchError):
            Network((1,), _specs({"kind": "dense", "units": 1}), params=params)

    def test_backprop_checks_output_gradient_shape(self, rng):
        net = _mlp(rng)
        with pytest.raises(ShapeMismatchError):
            backprop(net, rng.normal(size=(3, 4)), np.ones((3, 3)))

    def test_clone_is_independent(self, rng):
        net = _mlp(rng)
        copy = net.clone()
        assert copy.digest() == net.digest()
        copy.params["0.W"] += 1.0
        assert copy.digest() != net.digest()


class TestLosses:
    def test_mse_at_target_is_zero(self, rng):
        net = _mlp(rng, n_out=3)
        batch = rng.normal(size=(4, 4))
        loss, grads = loss_and_grad(net, batch, net.forward(batch), "mse")
        assert loss == 0.0
        assert all(not np.any(g) for g in grads.values())

    def test_cross_entropy_at_half_probability_is_ln2(self):
        specs = _specs({"kind": "dense", "units": 2})
        params = {"0.W": np.zeros((3, 2)), "0.b": np.zeros(2)}
        net = Network((3,), specs, params=params)
        loss, _ = loss_and_grad(net, np.ones((5, 3)), np.array([0, 1, 1, 0, 1]), "cross_entropy")
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_unit_weights_equal_unweighted_exactly(self, rng):
        net = _conv_classifier(rng)
        batch = rng.normal(size=(6, 2, 4, 4))
        targets = rng.integers(0, 2, size=6)
        plain, g_plain = loss_and_grad(net, batch, targets, "cross_entropy")
        weighted, g_weighted = loss_and_grad(net, batch, targets, "cross_entropy", np.ones(6))
        assert plain == weighted
        for key in g_plain:
            assert g_plain[key].tobytes() == g_weighted[key].tobytes()

    def test_weights_are_scale_invariant(self, rng):
        net = _mlp(rng)
        batch = rng.normal(size=(5, 4))
        targets = rng.integers(0, 2, size=5)
        w = rng.random(5)
        loss_a, grads_a = loss_and_grad(net, batch, targets, "cross_entropy", w)
        loss_b, grads_b = loss_and_grad(net, batch, targets, "cross_entropy", 7.0 * w)
        assert loss_a == pytest.approx(loss_b, rel=1e-12)
        for key in grads_a:
            np.testing.assert_allclose(grads_a[key], grads_b[key], rtol=1e-10, atol=1e-14)

    def test_zero_weights_give_zero_loss_and_gradient(self, rng):
        net = _mlp(rng)
        loss, grads = loss_and_grad(
            net, rng.normal(size=(3, 4)), np.array([0, 1, 0]), "cross_entropy", np.zeros(3)
        )
        assert loss == 0.0
        assert all(not np.any(g) for g in grads.values())

    def test_non_finite_loss_reports_sample_index(self, rng):
        net = _mlp(rng, n_out=2)
        batch = rng.normal(size=(4, 4))
        targets = np.zeros((4, 2))
        targets[2, 1] = np.inf
        with pytest.raises(NonFiniteLossError) as info:
            loss_and_grad(net, batch, targets, "mse")
        assert info.value.sample_index == 2
        assert info.value.exit_code == 3

    def test_non_finite_loss_ignored_when_weight_is_zero(self, rng):
        net = _mlp(rng, n_out=2)
        batch = rng.normal(size=(4, 4))
        targets = np.zeros((4, 2))
        targets[2, 1] = np.inf
        loss, grads = loss_and_grad(net, batch, targets, "mse", np.array([1.0, 1.0, 0.0, 1.0]))
        assert np.isfinite(loss)
        assert all(np.all(np.isfinite(g)) for g in grads.values())

    def test_unknown_loss_spec(self, rng):
        net = _mlp(rng)
        with pytest.raises(ValueError):
            loss_and_grad(net, rng.normal(size=(2, 4)), np.array([0, 1]), "hinge")


class TestOptimizer:
    def _scalar_net(self):
        params = {"0.W": np.zeros((1, 1)), "0.b": np.zeros(1)}
        return Network((1,), _specs({"kind": "dense", "units": 1}), params=params)

    def test_sgd_single_step(self):
        net = self._scalar_net()
        opt = OptimizerState(rule="sgd", learning_rate=0.1)
        optimizer_step(net, {k: np.ones_like(v) for k, v in net.params.items()}, opt)
        assert net.params["0.W"][0, 0] == pytest.approx(-0.1)
        assert opt.step == 1

    def test_sgd_two_steps_are_linear(self):
        net = self._scalar_net()
        opt = OptimizerState(rule="sgd", learning_rate=0.1)
        grads = {k: np.ones_like(v) for k, v in net.params.items()}
        optimizer_step(net, grads, opt)
        optimizer_step(net, grads, opt)
        assert net.params["0.b"][0] == pytest.approx(-0.2)
        assert opt.step == 2

    @pytest.mark.parametrize("rule", ["sgd", "adam"])
    def test_zero_gradient_is_fixed_point(self, rng, rule):
        net = _mlp(rng)
        before = net.digest()
        optimizer_step(net, {k: np.zeros_like(v) for k, v in net.params.items()}, OptimizerState(rule=rule))
        assert net.digest() == before

    def test_missing_gradient_raises(self, rng):
        net = _mlp(rng)
        grads = {k: np.zeros_like(v) for k, v in net.params.items()}
        grads.pop("2.b")
        with pytest.raises(ShapeMismatchError) as info:
            optimizer_step(net, grads, OptimizerState())
        assert info.value.layer_index == 2

    def test_wrong_gradient_shape_raises(self, rng):
        net = _mlp(rng)
        grads = {k: np.zeros_like(v) for k, v in net.params.items()}
        grads["0.W"] = np.zeros((1, 1))
        with pytest.raises(ShapeMismatchError):
            optimizer_step(net, grads, OptimizerState())


class TestGradientCheck:
    def test_linear_regression(self, rng):
        net = Network((3,), _specs({"kind": "dense", "units": 1}), rng=rng)
        batch = rng.normal(size=(8, 3))
        report = gradient_check(net, batch, rng.normal(size=(8, 1)), "mse", tolerance=1e-6)
        assert report.max_relative_deviation < 1e-6
        assert not report.flagged

    @pytest.mark.parametrize("fn", ["relu", "tanh", "sigmoid"])
    def test_mlp_activations(self, rng, fn):
        net = _mlp(rng, fn=fn)
        batch = rng.normal(size=(6, 4))
        report = gradient_check(net, batch, rng.integers(0, 2, size=6), "cross_entropy")
        assert report.max_relative_deviation < 1e-4

    @pytest.mark.parametrize("mode", ["max", "avg"])
    def test_conv_pool_classifier(self, rng, mode):
        net = _conv_classifier(rng, mode=mode, fn="tanh")
        batch = rng.normal(size=(3, 2, 4, 4))
        report = gradient_check(net, batch, np.array([0, 1, 1]), "cross_entropy")
        assert report.max_relative_deviation < 1e-4

    def test_weighted_conv_relu_classifier(self, rng):
        net = _conv_classifier(rng, mode="max", fn="relu")
        batch = rng.normal(size=(4, 2, 4, 4))
        report = gradient_check(
            net, batch, np.array([0, 1, 1, 0]), "cross_entropy", weights=rng.random(4)
        )
        assert report.max_relative_deviation < 1e-4

    def test_segmenter_with_skip_and_upsample(self, rng):
        net = _segmenter(rng)
        batch = rng.random((2, 1, 4, 4))
        masks = (rng.random((2, 1, 4, 4)) > 0.5).astype(np.float64)
        report = gradient_check(net, batch, masks, "ce_dice")
        assert report.max_relative_deviation < 1e-4

    def test_autoencoder_mse(self, rng):
        specs = _specs(
            {"kind": "conv2d", "out_channels": 2},
            {"kind": "activation", "fn": "tanh"},
            {"kind": "pool", "mode": "avg"},
            {"kind": "upsample"},
            {"kind": "conv2d", "out_channels": 1},
            {"kind": "activation", "fn": "sigmoid"},
        )
        net = Network((1, 4, 4), specs, rng=rng)
        batch = rng.random((3, 1, 4, 4))
        report = gradient_check(net, batch, batch, "mse")
        assert report.max_relative_deviation < 1e-4

    def test_corrupted_gradient_is_flagged(self, rng):
        net = _mlp(rng)
        batch = rng.normal(size=(4, 4))
        targets = np.array([0, 1, 0, 1])
        _, grads = loss_and_grad(net, batch, targets, "cross_entropy")
        grads["0.W"][1, 2] += 1.0
        report = gradient_check(net, batch, targets, "cross_entropy", analytic=grads)
        assert report.flagged
        assert report.per_parameter["0.W"] > report.tolerance

    @pytest.mark.slow
    def test_randomized_instances(self):
        """100 instâncias aleatórias cobrindo todos os tipos de camada."""
        worst = 0.0
        for trial in range(100):
            rng = np.random.default_rng(10_000 + trial)
            builder = (_mlp, _conv_classifier, _segmenter)[trial % 3]
            if builder is _mlp:
                net = _mlp(rng, fn=("tanh", "sigmoid")[trial % 2])
                batch = rng.normal(size=(4, 4))
                targets, spec = rng.integers(0, 2, size=4), "cross_entropy"
            elif builder is _conv_classifier:
                net = _conv_classifier(rng, mode=("max", "avg")[trial % 2], fn="tanh")
                batch = rng.normal(size=(3, 2, 4, 4))
                targets, spec = rng.integers(0, 2, size=3), "cross_entropy"
            else:
                net = _segmenter(rng)
                batch = rng.random((2, 1, 4, 4))
                targets, spec = (rng.random((2, 1, 4, 4)) > 0.5).astype(float), "ce_dice"
            report = gradient_check(net, batch, targets, spec)
            worst = max(worst, report.max_relative_deviation)
        assert worst < 1e-4


class TestCheckpoint:
    def test_round_trip_preserves_digest_and_outputs(self, rng, tmp_path):
        net = _segmenter(rng)
        prefix = os.path.join(tmp_path, "seg")
        manifest_path, blob_path = save_checkpoint(net, prefix, meta={"task": "segmentation"})
        assert os.path.exists(manifest_path) and os.path.exists(blob_path)

        loaded, meta = load_checkpoint(manifest_path)
        batch = rng.random((2, 1, 4, 4))
        assert loaded.digest() == net.digest()
        assert loaded.forward(batch).tobytes() == net.forward(batch).tobytes()
        assert meta == {"task": "segmentation"}

    def test_save_is_byte_stable(self, rng, tmp_path):
        net = _mlp(rng)
        first = save_checkpoint(net, os.path.join(tmp_path, "a"))
        second = save_checkpoint(net, os.path.join(tmp_path, "b"))
        for x, y in zip(first, second):
            if x.endswith(".bin"):
                with open(x, "rb") as fa, open(y, "rb") as fb:
                    assert fa.read() == fb.read()

    def test_missing_blob(self, rng, tmp_path):
        _, blob_path = save_checkpoint(_mlp(rng), os.path.join(tmp_path, "net"))
        os.remove(blob_path)
        with pytest.raises(MissingArtifactError) as info:
            load_checkpoint(os.path.join(tmp_path, "net"))
        assert info.value.exit_code == 4

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_checkpoint(os.path.join(tmp_path, "inexistente"))

    def test_corrupted_blob(self, rng, tmp_path):
        _, blob_path = save_checkpoint(_mlp(rng), os.path.join(tmp_path, "net"))
        with open(blob_path, "r+b") as f:
            f.seek(-1, os.SEEK_END)
            last = f.read(1)
            f.seek(-1, os.SEEK_END)
            f.write(bytes([last[0] ^ 0xFF]))
        with pytest.raises(ValueError):
            load_checkpoint(os.path.join(tmp_path, "net"))
