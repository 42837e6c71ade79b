from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.errors import RewardError
from src.nn import (
    LayerSpec,
    Network,
    OptimizerState,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    sigmoid,
)
from .trace import EpisodeTrace

logger = logging.getLogger(__name__)

# notas armazenadas nunca tocam 0 ou 1
SCORE_EPS = 1e-12
CHUNK = 256

Role = Literal["task_specific", "task_agnostic", "shaped"]


class PolicyUpdateConfig(BaseModel):
    """
    Parâmetros da atualização do controlador.

    Attributes:
        rule (str): reinforce | clipped_surrogate.
        learning_rate (float): Passo do otimizador do controlador.
        entropy_coef (float): Peso do bônus de entropia (0 desliga).
        gamma (float): Fator de desconto γ ∈ [0, 1].
        clip_ratio (float): ε da razão recortada (só clipped_surrogate).
        surrogate_epochs (int): Passadas sobre os mesmos episódios (clipped_surrogate).
        baseline_decay (float): Decaimento da linha de base escalar do retorno.
        normalize_advantages (bool): Divide as vantagens da atualização pela sua
            raiz quadrática média; o passo e o bônus de entropia passam a
            valer na mesma escala qualquer que seja a magnitude de R.
        regression_weight (float): Peso do termo de regressão das amostras de
            validação no modo moldado (multiplicado por 1 − φ).
        optimizer (str): adam | sgd.
    """

    model_config = ConfigDict(extra="forbid")

    rule: Literal["reinforce", "clipped_surrogate"] = "reinforce"
    learning_rate: float = Field(default=1e-2, ge=0.0)
    entropy_coef: float = Field(default=0.01, ge=0.0)
    gamma: float = Field(default=0.95, ge=0.0, le=1.0)
    clip_ratio: float = Field(default=0.2, gt=0.0)
    surrogate_epochs: int = Field(default=4, ge=1)
    baseline_decay: float = Field(default=0.9, ge=0.0, le=1.0)
    normalize_advantages: bool = True
    regression_weight: float = Field(default=1.0, ge=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"


@dataclass
class ControllerModel:
    """
    Política de pontuação h(·; θ) ∈ (0, 1).

    Attributes:
        net (Network): Rede com saída em logit `(1,)`; a nota é a logística do logit.
        opt (OptimizerState): Estado do otimizador de θ.
        return_baseline (float): Média móvel dos retornos (redução de variância).
        role (str): task_specific | task_agnostic | shaped.
        phi (float): φ usado no treino (1 fora do modo moldado).
    """

    net: Network
    opt: OptimizerState = field(default_factory=OptimizerState)
    return_baseline: float = 0.0
    role: Role = "task_specific"
    phi: float = 1.0


@dataclass
class ActionBatch:
    scores: np.ndarray
    actions: np.ndarray
    sample_ids: np.ndarray

    @property
    def selected_ids(self) -> np.ndarray:
        return self.sample_ids[self.actions == 1]


@dataclass
class PolicyBatch:
    """Episódios achatados em arrays, prontos para o gradiente da política."""

    images: np.ndarray
    actions: np.ndarray
    old_scores: np.ndarray
    advantages: np.ndarray
    val_images: Optional[np.ndarray] = None
    val_targets: Optional[np.ndarray] = None
    val_weight: float = 0.0


def default_architecture() -> List[LayerSpec]:
    """Codificador convolucional de 3 blocos estreitos e 3 camadas densas até o logit."""
    raw = []
    for channels in (3, 6, 6):
        raw += [
            {"kind": "conv2d", "out_channels": channels},
            {"kind": "activation", "fn": "relu"},
            {"kind": "pool"},
        ]
    raw += [
        {"kind": "flatten"},
        {"kind": "dense", "units": 8},
        {"kind": "activation", "fn": "relu"},
        {"kind": "dense", "units": 8},
        {"kind": "activation", "fn": "relu"},
        {"kind": "dense", "units": 1},
    ]
    return [LayerSpec(**r) for r in raw]


def build_controller(
    input_shape: Sequence[int],
    rng: np.random.Generator,
    cfg: Optional[PolicyUpdateConfig] = None,
    specs: Optional[Sequence[LayerSpec]] = None,
    role: Role = "task_specific",
    phi: float = 1.0,
) -> ControllerModel:
    cfg = cfg or PolicyUpdateConfig()
    net = Network(input_shape, specs or default_architecture(), rng=rng)
    opt = OptimizerState(rule=cfg.optimizer, learning_rate=cfg.learning_rate)
    return ControllerModel(net=net, opt=opt, role=role, phi=phi)


def logits(ctrl: ControllerModel, images: np.ndarray) -> np.ndarray:
    parts = [
        ctrl.net.forward(images[start : start + CHUNK])[:, 0]
        for start in range(0, images.shape[0], CHUNK)
    ]
    return np.concatenate(parts) if parts else np.empty(0)


def score(ctrl: ControllerModel, images: np.ndarray) -> np.ndarray:
    """Uma nota em (0, 1) por amostra; determinística dado θ."""
    return np.clip(sigmoid(logits(ctrl, images)), SCORE_EPS, 1.0 - SCORE_EPS)


def sample_actions(
    scores: np.ndarray, rng: np.random.Generator, sample_ids: Optional[np.ndarray] = None
) -> ActionBatch:
    """Sorteios independentes a_i ~ Bernoulli(h_i)."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(scores.size) if sample_ids is None else np.asarray(sample_ids)
    actions = (rng.random(scores.size) < scores).astype(np.int64)
    return ActionBatch(scores=scores, actions=actions, sample_ids=ids)


def log_policy(scores: np.ndarray, actions: np.ndarray) -> float:
    """log π(a|s) = Σ_i log[h_i·a_i + (1 − h_i)·(1 − a_i)]."""
    h = np.asarray(scores, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64)
    return float(np.sum(np.log(h * a + (1.0 - h) * (1.0 - a))))


def collect_batch(
    episodes: Sequence[EpisodeTrace], gamma: float, baseline: float, normalize: bool = False
) -> Tuple[PolicyBatch, float]:
    """
    Achata os episódios e calcula as vantagens G − b.

    Com `normalize`, as vantagens são divididas pela sua raiz quadrática
    média: o sinal de cada termo é preservado e vantagens todas nulas
    continuam nulas.

    Returns:
        Tuple[PolicyBatch, float]: O lote e a média dos retornos observados.

    Raises:
        RewardError: Sem episódios ou com passo sem recompensa.
    """
    if not episodes:
        raise RewardError("policy_update exige ao menos um episódio completo")
    images, actions, scores, returns = [], [], [], []
    val_images, val_targets, val_weight = [], [], 0.0
    for trace in episodes:
        for record in trace.steps:
            if not record.has_reward:
                raise RewardError(
                    f"episódio {trace.episode}, passo {record.step}: recompensa ausente"
                )
        for record, g in zip(trace.steps, trace.returns(gamma)):
            images.append(record.images)
            actions.append(record.actions)
            scores.append(record.scores)
            returns.append(g)
            if record.val_weight > 0 and record.val_images is not None:
                val_images.append(record.val_images)
                val_targets.append(record.val_targets)
                val_weight = record.val_weight
    returns = np.concatenate(returns)
    advantages = returns - baseline
    if normalize:
        rms = float(np.sqrt(np.mean(advantages**2)))
        if rms > 0.0:
            advantages = advantages / rms
    batch = PolicyBatch(
        images=np.concatenate(images),
        actions=np.concatenate(actions).astype(np.float64),
        old_scores=np.concatenate(scores),
        advantages=advantages,
        val_weight=val_weight,
    )
    if val_images:
        # mesmo conjunto de validação em todos os passos: o gradiente de
        # média((h − t_s)²) sobre os passos é o de (h − média_s t_s)²
        batch.val_images = val_images[0]
        batch.val_targets = np.mean(np.stack(val_targets), axis=0)
    return batch, float(returns.mean())


def _accumulate(ctrl: ControllerModel, images: np.ndarray, d_logits: np.ndarray, grads: Dict) -> None:
    for start in range(0, images.shape[0], CHUNK):
        chunk = images[start : start + CHUNK]
        _, caches = ctrl.net.forward_with_cache(chunk)
        part, _ = ctrl.net.backward(caches, d_logits[start : start + CHUNK, None])
        for key, value in part.items():
            grads[key] += value


def policy_loss_and_grad(
    ctrl: ControllerModel, batch: PolicyBatch, cfg: PolicyUpdateConfig
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Perda da política (negativo do objetivo) e seu gradiente em θ.

    Objetivo, médio sobre todas as (episódio, passo, amostra):
    - **reinforce:** A·log π(a|s) + β·H(π).
    - **clipped_surrogate:** min(ρ·A, clip(ρ, 1 − ε, 1 + ε)·A) + β·H(π), com
      ρ = π/π_antigo avaliado contra as notas guardadas no episódio.
    Somado, quando presente, a peso·média((h(x_j) − alvo_j)²) sobre a validação.
    """
    z = logits(ctrl, batch.images)
    h = np.clip(sigmoid(z), SCORE_EPS, 1.0 - SCORE_EPS)
    a, adv = batch.actions, batch.advantages
    n = z.size

    log_pi = np.log(h * a + (1.0 - h) * (1.0 - a))
    d_log_pi = a - h
    if cfg.rule == "reinforce":
        objective = adv * log_pi
        d_objective = adv * d_log_pi
    else:
        old = batch.old_scores
        log_old = np.log(old * a + (1.0 - old) * (1.0 - a))
        ratio = np.exp(log_pi - log_old)
        clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
        objective = np.minimum(ratio * adv, clipped * adv)
        active = np.where(adv >= 0, ratio <= 1.0 + cfg.clip_ratio, ratio >= 1.0 - cfg.clip_ratio)
        d_objective = np.where(active, adv * ratio * d_log_pi, 0.0)

    entropy = -(h * np.log(h) + (1.0 - h) * np.log(1.0 - h))
    d_entropy = -h * (1.0 - h) * z
    loss = -float(np.mean(objective + cfg.entropy_coef * entropy))
    d_z = -(d_objective + cfg.entropy_coef * d_entropy) / n

    grads = {key: np.zeros_like(v) for key, v in ctrl.net.params.items()}
    _accumulate(ctrl, batch.images, d_z, grads)

    if batch.val_weight > 0 and batch.val_images is not None:
        zv = logits(ctrl, batch.val_images)
        hv = sigmoid(zv)
        diff = hv - batch.val_targets
        loss += batch.val_weight * float(np.mean(diff**2))
        d_zv = batch.val_weight * 2.0 * diff * hv * (1.0 - hv) / zv.size
        _accumulate(ctrl, batch.val_images, d_zv, grads)
    return loss, grads


def policy_update(
    ctrl: ControllerModel, episodes: Sequence[EpisodeTrace], cfg: PolicyUpdateConfig
) -> ControllerModel:
    """
    Um passo de subida no gradiente de E[Σ_t G_t ∇log π_θ(a_t|s_t)].

    A vantagem usa a linha de base escalar anterior (começa em 0), que só é
    atualizada depois do passo; assim recompensas todas nulas não movem θ
    sem bônus de entropia.

    Raises:
        RewardError: Episódios ausentes ou sem recompensa.
    """
    batch, mean_return = collect_batch(
        episodes, cfg.gamma, ctrl.return_baseline, cfg.normalize_advantages
    )
    passes = cfg.surrogate_epochs if cfg.rule == "clipped_surrogate" else 1
    for _ in range(passes):
        loss, grads = policy_loss_and_grad(ctrl, batch, cfg)
        optimizer_step(ctrl.net, grads, ctrl.opt)
    ctrl.return_baseline = float(
        cfg.baseline_decay * ctrl.return_baseline + (1.0 - cfg.baseline_decay) * mean_return
    )
    logger.debug("[CONTROLADOR] loss=%.6f baseline=%.6f", loss, ctrl.return_baseline)
    return ctrl


def save_controller(ctrl: ControllerModel, path: str, extra: Optional[dict] = None) -> Tuple[str, str]:
    meta = {"role": ctrl.role, "phi": ctrl.phi, "return_baseline": ctrl.return_baseline}
    meta.update(extra or {})
    return save_checkpoint(ctrl.net, path, meta=meta)


def load_controller(path: str, cfg: Optional[PolicyUpdateConfig] = None) -> ControllerModel:
    """Carrega um controlador salvo; o otimizador recomeça do zero."""
    cfg = cfg or PolicyUpdateConfig()
    net, meta = load_checkpoint(path)
    return ControllerModel(
        net=net,
        opt=OptimizerState(rule=cfg.optimizer, learning_rate=cfg.learning_rate),
        return_baseline=float(meta.get("return_baseline", 0.0)),
        role=meta.get("role", "task_specific"),
        phi=float(meta.get("phi", 1.0)),
    )
