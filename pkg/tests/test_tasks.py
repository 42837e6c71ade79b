"""Tarefas-alvo: métricas por amostra, passo de treino e predição em blocos."""

import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import ShapeMismatchError
from src.nn import LayerSpec
from src.iqa.tasks import (
    TaskSpec,
    accuracy,
    batch_dice,
    build_predictor,
    dice,
    metric_values,
    performance,
    predict,
    targets_for,
    train_step,
)


def _square(rows, cols, shape=(6, 6)):
    mask = np.zeros(shape, dtype=bool)
    mask[rows, cols] = True
    return mask


class TestDice:
    def test_identical_masks(self):
        a = _square(slice(1, 3), slice(1, 3))
        assert dice(a, a) == 1.0

    def test_disjoint_masks(self):
        assert dice(_square(slice(0, 2), slice(0, 2)), _square(slice(3, 5), slice(3, 5))) == 0.0

    def test_half_overlap(self):
        a = _square(slice(0, 2), slice(0, 2))
        b = _square(slice(0, 2), slice(1, 3))
        assert dice(a, b) == pytest.approx(0.5)
        assert dice(a, b) == dice(b, a)

    def test_both_empty_is_one(self):
        empty = np.zeros((4, 4))
        assert dice(empty, empty) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dice(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_batch_dice_agrees_with_scalar(self, rng):
        a = rng.random((5, 1, 6, 6)) > 0.6
        b = rng.random((5, 1, 6, 6)) > 0.6
        a[0] = False
        b[0] = False
        expected = [dice(x, y) for x, y in zip(a, b)]
        np.testing.assert_allclose(batch_dice(a, b), expected)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(np.array([0, 1, 1]), np.array([0, 1, 1])) == 1.0

    def test_all_wrong(self):
        assert accuracy(np.array([1, 0]), np.array([0, 1])) == 0.0

    def test_three_of_four(self):
        assert accuracy(np.array([0, 1, 1, 0]), np.array([0, 1, 1, 1])) == 0.75

    def test_empty_input(self):
        with pytest.raises(ValueError):
            accuracy(np.array([]), np.array([]))


class TestTaskSpec:
    @pytest.mark.parametrize(
        "kind, loss, metric, reward",
        [
            ("classification", "cross_entropy", "zero_one", "accuracy"),
            ("segmentation", "ce_dice", "one_minus_dice", "dice"),
            ("reconstruction", "mse", "mae", "neg_mae"),
        ],
    )
    def test_defaults_follow_kind(self, kind, loss, metric, reward):
        task = TaskSpec(kind=kind)
        assert (task.loss_spec, task.metric_spec, task.reward_metric) == (loss, metric, reward)

    def test_incoherent_metric_rejected(self):
        with pytest.raises(ValidationError):
            TaskSpec(kind="segmentation", metric_spec="zero_one")

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            TaskSpec(kind="classification", epochs=3)


class TestMetricValues:
    def test_perfect_segmentation(self):
        task = TaskSpec(kind="segmentation")
        masks = np.zeros((2, 1, 4, 4))
        masks[0, 0, 1:3, 1:3] = 1.0
        logits = np.where(masks > 0, 8.0, -8.0)
        _, losses = metric_values(task, logits, masks)
        np.testing.assert_array_equal(losses, [0.0, 0.0])

    def test_wrong_class(self):
        task = TaskSpec(kind="classification")
        _, losses = metric_values(task, np.array([[3.0, -3.0], [-1.0, 1.0]]), np.array([1, 1]))
        np.testing.assert_array_equal(losses, [1.0, 0.0])

    def test_reconstruction_offset(self, rng):
        task = TaskSpec(kind="reconstruction")
        targets = rng.random((3, 1, 4, 4)) * 0.5
        _, losses = metric_values(task, targets + 0.1, targets)
        np.testing.assert_allclose(losses, 0.1)

    def test_performance_orientation(self):
        np.testing.assert_allclose(performance(TaskSpec(kind="classification"), [0.0, 1.0]), [1.0, 0.0])
        np.testing.assert_allclose(performance(TaskSpec(kind="reconstruction"), [0.25]), [-0.25])


class TestTargets:
    def test_reconstruction_targets_are_inputs(self, tiny_data):
        train = tiny_data.train
        targets = targets_for(TaskSpec(kind="reconstruction"), train)
        assert targets.tobytes() == train.images.tobytes()

    def test_classification_targets_are_labels(self, tiny_data):
        train = tiny_data.train
        targets = targets_for(TaskSpec(kind="classification"), train)
        np.testing.assert_array_equal(targets, train.meta["target_present"].astype(int))

    def test_segmentation_masks_empty_without_target(self, tiny_data):
        train = tiny_data.train
        masks = targets_for(TaskSpec(kind="segmentation"), train)
        present = train.meta["target_present"].to_numpy(dtype=bool)
        assert np.all(masks[~present] == 0)
        assert np.all(masks[present].reshape(present.sum(), -1).sum(axis=1) > 0)


def _toy_problem(rng, n=40):
    labels = np.arange(n) % 2
    images = rng.normal(0.0, 0.5, size=(n, 1, 2, 2))
    images[:, 0, 0, 0] += np.where(labels == 1, 2.0, -2.0)
    return images, labels


class TestTrainStep:
    def _linear_task(self, lr):
        arch = [LayerSpec(kind="flatten"), LayerSpec(kind="dense", units=2)]
        return TaskSpec(kind="classification", architecture=arch, learning_rate=lr)

    def test_zero_learning_rate_is_fixed_point(self, rng):
        task = self._linear_task(0.0)
        model = build_predictor(task, (1, 2, 2), rng)
        before = model.net.digest()
        images, labels = _toy_problem(rng)
        train_step(task, model, images, labels)
        assert model.net.digest() == before

    def test_repeated_sample_matches_single(self, rng):
        task = self._linear_task(0.1)
        task = task.model_copy(update={"optimizer": "sgd"})
        images, labels = _toy_problem(rng, n=2)
        single = build_predictor(task, (1, 2, 2), np.random.default_rng(7))
        repeated = build_predictor(task, (1, 2, 2), np.random.default_rng(7))
        train_step(task, single, images[:1], labels[:1])
        train_step(task, repeated, np.repeat(images[:1], 5, axis=0), np.repeat(labels[:1], 5))
        for key in single.net.params:
            np.testing.assert_allclose(
                single.net.params[key], repeated.net.params[key], rtol=1e-12, atol=1e-15
            )

    def test_separable_toy_set(self, rng):
        task = self._linear_task(0.05)
        model = build_predictor(task, (1, 2, 2), rng)
        images, labels = _toy_problem(rng)
        for _ in range(200):
            train_step(task, model, images, labels)
        preds = model.net.forward(images).argmax(axis=1)
        assert accuracy(preds, labels) >= 0.95

    def test_empty_selection_is_skipped(self, rng):
        task = self._linear_task(0.1)
        model = build_predictor(task, (1, 2, 2), rng)
        before = model.net.digest()
        out = train_step(task, model, np.empty((0, 1, 2, 2)), np.empty(0, dtype=int))
        assert out is None
        assert model.steps_skipped == 1
        assert model.net.digest() == before
        assert model.opt.step == 0


class TestPredict:
    @pytest.mark.parametrize("kind", ["classification", "segmentation", "reconstruction"])
    def test_chunking_does_not_change_result(self, tiny_data, rng, kind):
        task = TaskSpec(kind=kind)
        model = build_predictor(task, tiny_data.val.input_shape, rng)
        whole = predict(task, model, tiny_data.val)
        chunked = predict(task, model, tiny_data.val, chunk=5)
        assert whole.metric_values.shape == (len(tiny_data.val),)
        np.testing.assert_allclose(whole.metric_values, chunked.metric_values, atol=1e-12)
        assert np.all(whole.metric_values >= 0)

    def test_incompatible_raster_raises(self, tiny_data, rng):
        task = TaskSpec(kind="classification")
        model = build_predictor(task, (1, 8, 8), rng)
        with pytest.raises(ShapeMismatchError):
            predict(task, model, tiny_data.val)
