"""Laço de treino: episódios, modos de recompensa, determinismo e auditoria."""

import numpy as np
import pytest

from src.errors import MissingArtifactError, NonFiniteLossError
from src.seeding import derive_rng
from src.iqa import trainer as trainer_module
from src.iqa.controller import build_controller, load_controller, score
from src.iqa.reward import RewardConfig
from src.iqa.tasks import build_predictor, predict
from src.iqa.trainer import (
    HISTORY_COLUMNS,
    TrainerConfig,
    _converged,
    _new_context,
    history_frame,
    resolve_task,
    run_episode,
    train_iqa,
    train_non_selective,
    train_shaped,
)


def tiny_trainer(**overrides) -> TrainerConfig:
    params = dict(
        batch_size=8,
        steps_per_episode=2,
        episodes_per_update=2,
        max_updates=3,
        convergence_window=50,
        seed=0,
    )
    params.update(overrides)
    return TrainerConfig(**params)


def force_logit(ctrl, logit):
    """Zera a última camada densa: toda amostra recebe a mesma nota logística(logit)."""
    last = max(int(key.split(".", 1)[0]) for key in ctrl.net.params)
    ctrl.net.params[f"{last}.W"][:] = 0.0
    ctrl.net.params[f"{last}.b"][:] = logit


class TestTrainIqa:
    def test_zero_updates_returns_initial_models(self, tiny_data):
        cfg = tiny_trainer(max_updates=0)
        predictor, controller, manifest = train_iqa(cfg, tiny_data)
        shape = tiny_data.train.input_shape
        fresh_ctrl = build_controller(shape, derive_rng(0, "controller", "init"), cfg.policy)
        fresh_pred = build_predictor(resolve_task(cfg), shape, derive_rng(0, "predictor", "init"))
        assert controller.net.digest() == fresh_ctrl.net.digest()
        assert predictor.net.digest() == fresh_pred.net.digest()
        assert manifest.n_updates == 0 and manifest.history == []

    def test_same_seed_same_manifest(self, tiny_data):
        cfg = tiny_trainer()
        _, _, first = train_iqa(cfg, tiny_data)
        _, _, second = train_iqa(cfg, tiny_data)
        assert first.model_dump_json() == second.model_dump_json()
        assert first.n_updates == 3
        assert len(first.history) == 3 * 2 * 2

    def test_different_seed_different_trajectory(self, tiny_data):
        _, _, a = train_iqa(tiny_trainer(), tiny_data)
        _, _, b = train_iqa(tiny_trainer(seed=1), tiny_data)
        assert a.updates[-1].controller_digest != b.updates[-1].controller_digest

    def test_batch_larger_than_train_set(self, tiny_data):
        with pytest.raises(ValueError):
            train_iqa(tiny_trainer(batch_size=len(tiny_data.train) + 1), tiny_data)

    def test_selective_keeps_floor_of_validation(self, tiny_data):
        cfg = tiny_trainer(reward=RewardConfig(strategy="selective", s_rej=0.3))
        _, _, manifest = train_iqa(cfg, tiny_data)
        expected = int(np.floor(0.7 * len(tiny_data.val)))
        assert {row.n_val_kept for row in manifest.history} == {expected}

    def test_task_agnostic_reward_is_bounded(self, tiny_data):
        cfg = tiny_trainer(mode="task_agnostic")
        predictor, controller, manifest = train_iqa(cfg, tiny_data)
        assert predictor.task.kind == "reconstruction"
        assert controller.role == "task_agnostic"
        r_tilde = np.array([row.R_tilde for row in manifest.history])
        assert np.all(np.isfinite(r_tilde))
        assert np.all((r_tilde >= -1.0) & (r_tilde <= 0.0))

    def test_convergence_stops_early(self, tiny_data):
        cfg = tiny_trainer(max_updates=10, convergence_window=1, convergence_tol=1e9, min_updates=0)
        _, _, manifest = train_iqa(cfg, tiny_data)
        assert manifest.converged
        assert manifest.n_updates == 2

    def test_min_updates_delays_convergence(self, tiny_data):
        cfg = tiny_trainer(max_updates=10, convergence_window=1, convergence_tol=1e9, min_updates=5)
        _, _, manifest = train_iqa(cfg, tiny_data)
        assert manifest.converged
        assert manifest.n_updates == 5

    def test_convergence_uses_absolute_change(self):
        assert not _converged([1.0, 1.0, 0.0, 0.0], 2, 0.1)
        assert not _converged([0.0, 0.0, 1.0, 1.0], 2, 0.1)
        assert _converged([0.5, 0.5, 0.52, 0.52], 2, 0.1)
        assert not _converged([0.5, 0.5, 0.52, 0.52], 2, 0.1, min_updates=5)

    def test_updates_record_smoothed_reward(self, tiny_data):
        _, _, manifest = train_iqa(tiny_trainer(), tiny_data)
        last_steps = {row.update_index: row.R_bar for row in manifest.history}
        assert [u.R_bar for u in manifest.updates] == [last_steps[i] for i in range(3)]

    def test_validation_scored_once_per_update(self, tiny_data, monkeypatch):
        sizes = []
        real_score = trainer_module.score

        def counting(ctrl, images):
            sizes.append(images.shape[0])
            return real_score(ctrl, images)

        monkeypatch.setattr(trainer_module, "score", counting)
        train_iqa(tiny_trainer(), tiny_data)
        assert sizes.count(len(tiny_data.val)) == 3
        assert sizes.count(8) == 3 * 2 * 2

    def test_checkpoints_are_relative_and_loadable(self, tiny_data, tmp_path):
        _, controller, manifest = train_iqa(tiny_trainer(max_updates=1), tiny_data, checkpoint_dir=str(tmp_path))
        assert manifest.artifacts == {"controller": "controller.json", "predictor": "predictor.json"}
        loaded = load_controller(str(tmp_path / "controller.json"))
        assert loaded.net.digest() == controller.net.digest()

    def test_non_finite_loss_dumps_state(self, tiny_data, monkeypatch):
        def explode(*args, **kwargs):
            raise NonFiniteLossError(0, float("inf"))

        monkeypatch.setattr(trainer_module, "train_step", explode)
        with pytest.raises(NonFiniteLossError) as info:
            train_iqa(tiny_trainer(), tiny_data)
        state = info.value.state
        assert state["update_index"] == 0 and state["episode"] == 0
        assert {"reward_state", "controller_digest", "predictor_digest"} <= set(state)

    def test_history_frame_columns(self, tiny_data):
        _, _, manifest = train_iqa(tiny_trainer(max_updates=1), tiny_data)
        manifest.run_id = "abc"
        df = history_frame(manifest)
        assert list(df.columns) == HISTORY_COLUMNS + ["run_id"]
        assert len(df) == 4
        assert set(df["run_id"]) == {"abc"}


class TestEpisodes:
    def test_predictor_only_sees_selected_samples(self, tiny_data):
        ctx = _new_context(tiny_trainer(steps_per_episode=4), tiny_data, None)
        trace = run_episode(ctx, 0)
        assert len(trace.steps) == 4
        for record in trace.steps:
            np.testing.assert_array_equal(record.selected_ids, record.sample_ids[record.actions == 1])
            assert len(set(record.sample_ids)) == 8

    def test_unshaped_rewards_are_constant_per_step(self, tiny_data):
        ctx = _new_context(tiny_trainer(), tiny_data, None)
        for record in run_episode(ctx, 0).steps:
            assert np.all(record.sample_rewards == record.reward)
            assert record.signal == record.reward

    def test_certain_controller_selects_everything(self, tiny_data):
        ctx = _new_context(tiny_trainer(steps_per_episode=3), tiny_data, None)
        force_logit(ctx.controller, 60.0)
        for record in run_episode(ctx, 0).steps:
            assert np.all(record.actions == 1)
            np.testing.assert_array_equal(record.selected_ids, record.sample_ids)

    def test_uniform_scores_reduce_weighted_reward_to_average(self, tiny_data):
        cfg = tiny_trainer(steps_per_episode=1, reward=RewardConfig(strategy="weighted"))
        ctx = _new_context(cfg, tiny_data, None)
        force_logit(ctx.controller, 60.0)
        record = run_episode(ctx, 0).steps[0]
        losses = predict(ctx.task, ctx.predictor, ctx.val).metric_values
        assert record.r_tilde == pytest.approx(-losses.mean(), rel=1e-9, abs=1e-12)

    def test_cached_validation_scores_match_controller(self, tiny_data):
        ctx = _new_context(tiny_trainer(), tiny_data, None)
        run_episode(ctx, 0)
        np.testing.assert_array_equal(ctx.val_scores, score(ctx.controller, ctx.val.images))

    def test_first_step_reward_is_zero(self, tiny_data):
        ctx = _new_context(tiny_trainer(), tiny_data, None)
        first = run_episode(ctx, 0).steps[0]
        assert first.reward == 0.0
        assert first.r_bar == first.r_tilde

    def test_shaped_rewards_mix_label_quality(self, tiny_data):
        cfg = tiny_trainer(
            mode="shaped", shaping_source="labels", reward=RewardConfig(phi=0.5)
        )
        ctx = _new_context(cfg, tiny_data, None)
        flags = tiny_data.train.artefact_flags
        for record in run_episode(ctx, 0).steps:
            expected = 0.5 * record.reward + 0.5 * (1.0 - flags[record.sample_ids].astype(float))
            np.testing.assert_allclose(record.sample_rewards, expected)
            assert record.val_weight == pytest.approx(1.0 * 0.5)


class TestShaped:
    def test_phi_one_matches_task_specific_trajectory(self, tiny_data):
        plain = tiny_trainer(max_updates=10)
        shaped = tiny_trainer(
            max_updates=10, mode="shaped", shaping_source="labels", reward=RewardConfig(phi=1.0)
        )
        _, _, a = train_iqa(plain, tiny_data)
        _, _, b = train_iqa(shaped, tiny_data)
        assert len(a.updates) == len(b.updates) == 10
        assert [u.controller_digest for u in a.updates] == [u.controller_digest for u in b.updates]
        assert [u.predictor_digest for u in a.updates] == [u.predictor_digest for u in b.updates]

    def test_warm_start_copies_h_a(self, tiny_data):
        h_a = build_controller(tiny_data.train.input_shape, np.random.default_rng(5))
        cfg = tiny_trainer(mode="shaped", reward=RewardConfig(phi=0.5))
        ctx = _new_context(cfg, tiny_data, h_a)
        assert ctx.controller.net.digest() == h_a.net.digest()
        assert ctx.controller.net is not h_a.net
        assert ctx.controller.role == "shaped"

    @pytest.mark.parametrize("phi, warm_start", [(1.0, True), (0.5, False)])
    def test_random_start_without_warm_start(self, tiny_data, phi, warm_start):
        h_a = build_controller(tiny_data.train.input_shape, np.random.default_rng(5))
        cfg = tiny_trainer(mode="shaped", warm_start=warm_start, reward=RewardConfig(phi=phi))
        ctx = _new_context(cfg, tiny_data, h_a)
        fresh = build_controller(tiny_data.train.input_shape, derive_rng(0, "controller", "init"))
        assert ctx.controller.net.digest() == fresh.net.digest()

    def test_missing_h_a(self, tiny_data):
        with pytest.raises(MissingArtifactError):
            train_shaped(tiny_trainer(reward=RewardConfig(phi=0.5)), tiny_data, None)

    def test_frozen_h_a_is_never_updated(self, tiny_data):
        h_a = build_controller(tiny_data.train.input_shape, np.random.default_rng(5))
        before = h_a.net.digest()
        _, controller, manifest = train_shaped(tiny_trainer(reward=RewardConfig(phi=0.5)), tiny_data, h_a)
        assert h_a.net.digest() == before
        assert manifest.mode == "shaped" and manifest.phi == 0.5
        assert controller.role == "shaped"


class TestNonSelective:
    def test_baseline_trains_on_every_batch(self, tiny_data):
        predictor, manifest = train_non_selective(tiny_trainer(), tiny_data)
        assert manifest.mode == "non_selective"
        assert len(manifest.history) == 6
        assert {row.n_selected for row in manifest.history} == {8}
        assert all(row.R_tilde is None for row in manifest.history)
        assert predictor.opt.step == 12
