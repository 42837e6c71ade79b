from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.errors import MissingArtifactError, NonFiniteLossError
from src.nn import save_checkpoint, sigmoid
from src.seeding import derive_rng
from src.synth.dataset import SampleSet, SplitDataset
from .controller import (
    ControllerModel,
    PolicyUpdateConfig,
    build_controller,
    policy_update,
    sample_actions,
    save_controller,
    score,
)
from .models import HistoryRow, RunManifest, UpdateRecord
from .reward import (
    RewardConfig,
    RewardState,
    clip,
    kept_count,
    shaped_reward,
    unclipped_reward,
)
from .tasks import (
    PredictorModel,
    TaskSpec,
    build_predictor,
    performance,
    predict,
    targets_for,
    train_step,
)
from .trace import EpisodeTrace, StepRecord

logger = logging.getLogger(__name__)

Mode = Literal["task_specific", "task_agnostic", "shaped"]

HISTORY_COLUMNS = list(HistoryRow.model_fields)


class TrainerConfig(BaseModel):
    """
    Parâmetros do laço de treino.

    Attributes:
        batch_size (int): B, tamanho do mini-lote de treino.
        steps_per_episode (int): T, passos por episódio.
        episodes_per_update (int): K, episódios por atualização do controlador.
        max_updates (int): Teto de atualizações do controlador.
        convergence_window (int): Janela, em atualizações, da média de R̄.
        convergence_tol (float): Variação absoluta máxima da média de R̄ entre
            duas janelas consecutivas para declarar convergência.
        min_updates (int): Atualizações mínimas antes de testar convergência.
        mode (str): task_specific | task_agnostic | shaped.
        shaping_source (str): controller (h_a congelado) | labels (1 − artefact_flag).
        h_a_checkpoint (str, optional): Controlador task-agnostic congelado.
        warm_start (bool): No modo moldado com φ < 1 e h_a congelado, o
            controlador parte de uma cópia de h_a em vez de pesos aleatórios.
        val_size (int, optional): M; None usa a validação inteira.
        predictor_reset_interval (int): Reinicia o preditor a cada N passos (0 = nunca).
        checkpoint_interval (int): Salva checkpoints a cada N atualizações (0 = só no fim).
        seed (int): Semente mestre.
        task, reward, policy: Sub-configurações.
    """

    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=32, ge=1)
    steps_per_episode: int = Field(default=10, ge=1)
    episodes_per_update: int = Field(default=4, ge=1)
    max_updates: int = Field(default=200, ge=0)
    convergence_window: int = Field(default=20, ge=1)
    convergence_tol: float = Field(default=1e-3, ge=0.0)
    min_updates: int = Field(default=100, ge=0)
    mode: Mode = "task_specific"
    shaping_source: Literal["controller", "labels"] = "controller"
    h_a_checkpoint: Optional[str] = None
    warm_start: bool = True
    val_size: Optional[int] = Field(default=None, ge=1)
    predictor_reset_interval: int = Field(default=0, ge=0)
    checkpoint_interval: int = Field(default=0, ge=0)
    seed: int = 0
    task: TaskSpec = Field(default_factory=TaskSpec)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    policy: PolicyUpdateConfig = Field(default_factory=PolicyUpdateConfig)


@dataclass
class ShapingSource:
    """Qualidade task-agnostic h_a por amostra: controlador congelado ou rótulos."""

    controller: Optional[ControllerModel] = None

    def scores(self, samples: SampleSet) -> np.ndarray:
        if self.controller is not None:
            return score(self.controller, samples.images)
        return 1.0 - samples.artefact_flags.astype(np.float64)


@dataclass
class TrainingContext:
    """Estado mutável de uma execução (um único escritor)."""

    cfg: TrainerConfig
    task: TaskSpec
    predictor: PredictorModel
    controller: ControllerModel
    data: SplitDataset
    reward_state: RewardState
    rng: np.random.Generator
    val: SampleSet
    shaping: Optional[ShapingSource] = None
    h_a_train: Optional[np.ndarray] = None
    h_a_val: Optional[np.ndarray] = None
    train_targets: Optional[np.ndarray] = None
    # notas da validação para o θ atual; None após cada atualização
    val_scores: Optional[np.ndarray] = None
    global_step: int = 0
    n_resets: int = 0

    def validation_scores(self) -> np.ndarray:
        if self.val_scores is None:
            self.val_scores = score(self.controller, self.val.images)
        return self.val_scores


def resolve_task(cfg: TrainerConfig) -> TaskSpec:
    """No modo task_agnostic a tarefa é sempre a autorreconstrução (Y = X)."""
    if cfg.mode == "task_agnostic" and cfg.task.kind != "reconstruction":
        return TaskSpec(
            kind="reconstruction",
            learning_rate=cfg.task.learning_rate,
            optimizer=cfg.task.optimizer,
        )
    return cfg.task


def _validation_set(cfg: TrainerConfig, data: SplitDataset) -> SampleSet:
    if cfg.val_size is None or cfg.val_size >= len(data.val):
        return data.val
    return data.val.subset(np.arange(cfg.val_size))


def run_episode(ctx: TrainingContext, episode: int) -> EpisodeTrace:
    """
    Executa T passos do laço interno.

    Em cada passo: sorteia o mini-lote, pontua e amostra as ações, atualiza o
    preditor só com as amostras de ação 1, mede L_h na validação e calcula a
    recompensa (bruta, recortada e, no modo moldado, o vetor por amostra).

    θ só muda em `policy_update`, então as notas da validação são calculadas
    uma vez por versão do controlador (`TrainingContext.validation_scores`).

    Raises:
        RewardError: Propagado da álgebra de recompensa.
        NonFiniteLossError: Propagado do passo do preditor.
    """
    cfg, task, train = ctx.cfg, ctx.task, ctx.data.train
    rcfg = cfg.reward
    shaped = cfg.mode == "shaped"
    phi = rcfg.phi if shaped else 1.0
    val_ids = ctx.val.ids
    trace = EpisodeTrace(episode=episode)

    for t in range(cfg.steps_per_episode):
        reset_every = cfg.predictor_reset_interval
        if reset_every and ctx.global_step and ctx.global_step % reset_every == 0:
            ctx.n_resets += 1
            ctx.predictor = build_predictor(
                task, train.input_shape, derive_rng(cfg.seed, "predictor", "reset", ctx.n_resets)
            )
            logger.info("[TREINO] event=predictor_reset step=%d", ctx.global_step)
        ctx.global_step += 1

        index = np.sort(ctx.rng.choice(len(train), size=cfg.batch_size, replace=False))
        ids = train.ids[index]
        images = train.images[index]
        h = score(ctx.controller, images)
        act = sample_actions(h, ctx.rng, ids)
        chosen = act.actions == 1
        targets = ctx.train_targets[index]
        train_step(task, ctx.predictor, images[chosen], targets[chosen])

        losses = predict(task, ctx.predictor, ctx.val).metric_values
        val_scores = None
        if rcfg.strategy != "fixed_clean_avg":
            val_scores = ctx.validation_scores()
        r_tilde = unclipped_reward(
            rcfg.strategy, losses, val_scores, rcfg.s_rej, val_ids, rcfg.keep_lowest
        )
        reward, ctx.reward_state = clip(r_tilde, ctx.reward_state, rcfg.alpha_r)

        record = StepRecord(
            step=t,
            sample_ids=ids,
            images=images,
            scores=h,
            actions=act.actions,
            selected_ids=act.selected_ids,
            r_tilde=r_tilde,
            r_bar=ctx.reward_state.r_bar,
            reward=reward,
            val_metric=float(performance(task, losses).mean()),
            n_val_kept=(
                kept_count(len(losses), rcfg.s_rej)
                if rcfg.strategy == "selective"
                else len(losses)
            ),
        )
        if shaped and phi < 1.0:
            per_sample = shaped_reward(
                reward, np.concatenate([ctx.h_a_train[index], ctx.h_a_val]), phi
            )
            record.sample_rewards = per_sample[: cfg.batch_size]
            record.signal = float(per_sample.mean())
            weight = cfg.policy.regression_weight * (1.0 - phi)
            if weight > 0:
                record.val_images = ctx.val.images
                squashed = float(sigmoid(np.array([reward]))[0])
                record.val_targets = shaped_reward(squashed, ctx.h_a_val, phi)
                record.val_weight = weight
        else:
            record.sample_rewards = shaped_reward(reward, np.zeros(cfg.batch_size), 1.0)
            record.signal = reward
        trace.steps.append(record)
    return trace


def _converged(r_bar_history: List[float], window: int, tol: float, min_updates: int = 0) -> bool:
    """
    R̄ (já suavizado) estável: |média da última janela − média da anterior| < tol,
    testado só depois de `min_updates` atualizações e de duas janelas completas.
    """
    if len(r_bar_history) < max(min_updates, 2 * window):
        return False
    recent = float(np.mean(r_bar_history[-window:]))
    before = float(np.mean(r_bar_history[-2 * window : -window]))
    return abs(recent - before) < tol


def _save_models(ctx: TrainingContext, out_dir: str, tag: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    ctrl_json, _ = save_controller(ctx.controller, os.path.join(out_dir, f"controller{tag}"))
    pred_json, _ = save_checkpoint(
        ctx.predictor.net,
        os.path.join(out_dir, f"predictor{tag}"),
        meta={"task": ctx.task.kind},
    )
    return {f"controller{tag}": ctrl_json, f"predictor{tag}": pred_json}


def _new_context(
    cfg: TrainerConfig, data: SplitDataset, frozen_h_a: Optional[ControllerModel]
) -> TrainingContext:
    if cfg.batch_size > len(data.train):
        raise ValueError(
            f"batch_size={cfg.batch_size} excede o treino ({len(data.train)} amostras)"
        )
    task = resolve_task(cfg)
    input_shape = data.train.input_shape
    predictor = build_predictor(task, input_shape, derive_rng(cfg.seed, "predictor", "init"))
    role = {"task_specific": "task_specific", "task_agnostic": "task_agnostic", "shaped": "shaped"}[cfg.mode]
    controller = build_controller(
        input_shape,
        derive_rng(cfg.seed, "controller", "init"),
        cfg.policy,
        role=role,
        phi=cfg.reward.phi if cfg.mode == "shaped" else 1.0,
    )
    ctx = TrainingContext(
        cfg=cfg,
        task=task,
        predictor=predictor,
        controller=controller,
        data=data,
        reward_state=RewardState(),
        rng=derive_rng(cfg.seed, "episodes"),
        val=_validation_set(cfg, data),
        train_targets=targets_for(task, data.train),
    )
    if cfg.mode == "shaped":
        if cfg.shaping_source == "controller" and frozen_h_a is None:
            raise MissingArtifactError(
                cfg.h_a_checkpoint or "<h_a>", "modo shaped exige controlador task-agnostic congelado"
            )
        ctx.shaping = ShapingSource(frozen_h_a if cfg.shaping_source == "controller" else None)
        ctx.h_a_train = ctx.shaping.scores(data.train)
        ctx.h_a_val = ctx.shaping.scores(ctx.val)
        if cfg.warm_start and ctx.shaping.controller is not None and cfg.reward.phi < 1.0:
            controller.net = frozen_h_a.net.clone()
            logger.info("[TREINO] event=warm_start origem=h_a phi=%.2f", cfg.reward.phi)
    return ctx


def train_iqa(
    cfg: TrainerConfig,
    data: SplitDataset,
    frozen_h_a: Optional[ControllerModel] = None,
    checkpoint_dir: Optional[str] = None,
) -> Tuple[PredictorModel, ControllerModel, RunManifest]:
    """
    Laço externo: coleta K episódios, atualiza o controlador, repete até convergir.

    Fluxo de Execução:
    1. **Inicialização:** preditor, controlador e fluxos aleatórios derivados da
       semente mestre (mesma semente, mesmos fluxos em todos os modos).
    2. **Episódios:** `run_episode` K vezes, com o preditor persistente entre
       passos e episódios (treino online).
    3. **Controlador:** `policy_update` sobre os K episódios.
    4. **Convergência:** teto de atualizações ou, passadas `min_updates`, a
       média de R̄ estável (|Δ| < tol) entre duas janelas consecutivas.

    Raises:
        NonFiniteLossError: Aborta a execução; o erro carrega `state` com o
            diagnóstico (atualização, episódio, R̄, digests).
    """
    ctx = _new_context(cfg, data, frozen_h_a)
    manifest = RunManifest(
        mode=cfg.mode,
        phi=ctx.controller.phi,
        seed=cfg.seed,
        config=cfg.model_dump(mode="json"),
    )
    r_bar_history: List[float] = []
    history: List[HistoryRow] = []
    logger.info("[TREINO] Iniciando modo=%s phi=%.2f seed=%d", cfg.mode, manifest.phi, cfg.seed)

    for update in range(cfg.max_updates):
        episodes = []
        for k in range(cfg.episodes_per_update):
            episode = update * cfg.episodes_per_update + k
            try:
                trace = run_episode(ctx, episode)
            except NonFiniteLossError as exc:
                exc.state = {
                    "update_index": update,
                    "episode": episode,
                    "global_step": ctx.global_step,
                    "reward_state": ctx.reward_state.to_dict(),
                    "controller_digest": ctx.controller.net.digest(),
                    "predictor_digest": ctx.predictor.net.digest(),
                }
                logger.error("[ERRO] Perda não finita: %s | estado=%s", exc, exc.state)
                raise
            episodes.append(trace)
            history += [
                HistoryRow(
                    update_index=update,
                    episode=episode,
                    step=r.step,
                    R_tilde=r.r_tilde,
                    R_bar=r.r_bar,
                    R=r.reward,
                    val_metric=r.val_metric,
                    n_selected=int(r.selected_ids.size),
                    n_val_kept=r.n_val_kept,
                )
                for r in trace.steps
            ]
        policy_update(ctx.controller, episodes, cfg.policy)
        ctx.val_scores = None

        mean_r = float(np.mean([r.r_tilde for e in episodes for r in e.steps]))
        r_bar_history.append(ctx.reward_state.r_bar)
        manifest.updates.append(
            UpdateRecord(
                update_index=update,
                controller_digest=ctx.controller.net.digest(),
                predictor_digest=ctx.predictor.net.digest(),
                mean_R_tilde=mean_r,
                R_bar=ctx.reward_state.r_bar,
                return_baseline=ctx.controller.return_baseline,
            )
        )
        manifest.n_updates = update + 1
        if checkpoint_dir and cfg.checkpoint_interval and (update + 1) % cfg.checkpoint_interval == 0:
            _save_models(ctx, checkpoint_dir, f"-u{update + 1:04d}")
        if _converged(r_bar_history, cfg.convergence_window, cfg.convergence_tol, cfg.min_updates):
            manifest.converged = True
            logger.info(
                "[TREINO] event=converged update=%d R_bar=%.5f", update, ctx.reward_state.r_bar
            )
            break
        if (update + 1) % 10 == 0:
            logger.info(
                "[TREINO] update=%d mean_R_tilde=%.5f R_bar=%.5f",
                update + 1,
                mean_r,
                ctx.reward_state.r_bar,
            )

    manifest.history = history
    manifest.reward_state = ctx.reward_state.to_dict()
    if checkpoint_dir:
        manifest.artifacts.update(
            {k: os.path.relpath(v, checkpoint_dir) for k, v in _save_models(ctx, checkpoint_dir, "").items()}
        )
    logger.info("[SUCESSO] Treino concluído: %d atualizações", manifest.n_updates)
    return ctx.predictor, ctx.controller, manifest


def train_shaped(
    cfg: TrainerConfig,
    data: SplitDataset,
    frozen_h_a: Optional[ControllerModel],
    checkpoint_dir: Optional[str] = None,
) -> Tuple[PredictorModel, ControllerModel, RunManifest]:
    """Treino com recompensa moldada; `frozen_h_a` só é pontuado, nunca atualizado."""
    shaped_cfg = cfg.model_copy(update={"mode": "shaped"})
    return train_iqa(shaped_cfg, data, frozen_h_a=frozen_h_a, checkpoint_dir=checkpoint_dir)


def train_non_selective(
    cfg: TrainerConfig, data: SplitDataset, n_steps: Optional[int] = None
) -> Tuple[PredictorModel, RunManifest]:
    """
    Linha de base não seletiva: o preditor treina em todo mini-lote, sem
    controlador, pelo mesmo número de passos de um treino completo.
    """
    task = resolve_task(cfg)
    train = data.train
    n_steps = n_steps if n_steps is not None else (
        cfg.max_updates * cfg.episodes_per_update * cfg.steps_per_episode
    )
    predictor = build_predictor(task, train.input_shape, derive_rng(cfg.seed, "predictor", "init"))
    rng = derive_rng(cfg.seed, "non_selective")
    targets = targets_for(task, train)
    val = _validation_set(cfg, data)
    history: List[HistoryRow] = []
    for step in range(n_steps):
        index = np.sort(rng.choice(len(train), size=cfg.batch_size, replace=False))
        train_step(task, predictor, train.images[index], targets[index])
        if (step + 1) % cfg.steps_per_episode == 0:
            metric = float(performance(task, predict(task, predictor, val).metric_values).mean())
            history.append(
                HistoryRow(
                    update_index=step // (cfg.steps_per_episode * cfg.episodes_per_update),
                    episode=step // cfg.steps_per_episode,
                    step=cfg.steps_per_episode - 1,
                    val_metric=metric,
                    n_selected=cfg.batch_size,
                    n_val_kept=len(val),
                )
            )
    manifest = RunManifest(
        mode="non_selective",
        seed=cfg.seed,
        config=cfg.model_dump(mode="json"),
        history=history,
    )
    logger.info("[SUCESSO] Linha de base não seletiva: %d passos", n_steps)
    return predictor, manifest


def history_frame(manifest: RunManifest) -> pd.DataFrame:
    """Histórico por passo como DataFrame, com o run_id em cada linha."""
    df = pd.DataFrame([row.model_dump() for row in manifest.history], columns=HISTORY_COLUMNS)
    df["run_id"] = manifest.run_id
    return df
