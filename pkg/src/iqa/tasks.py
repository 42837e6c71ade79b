from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import softmax

from src.errors import ShapeMismatchError
from src.nn import LayerSpec, Network, OptimizerState, loss_and_grad, optimizer_step, sigmoid

logger = logging.getLogger(__name__)

TaskKind = Literal["classification", "segmentation", "reconstruction"]

# kind -> (loss_spec, metric_spec, reward_metric)
TASK_DEFAULTS = {
    "classification": ("cross_entropy", "zero_one", "accuracy"),
    "segmentation": ("ce_dice", "one_minus_dice", "dice"),
    "reconstruction": ("mse", "mae", "neg_mae"),
}


class TaskSpec(BaseModel):
    """
    Descrição da tarefa-alvo do preditor f(·; w).

    Os campos de perda, métrica e medida de desempenho são derivados do
    `kind` quando omitidos; combinações incoerentes são rejeitadas.

    Attributes:
        kind (str): classification | segmentation | reconstruction.
        loss_spec (str): Perda de treino L_f (cross_entropy | ce_dice | mse).
        metric_spec (str): Métrica por amostra L_h (zero_one | one_minus_dice | mae).
        reward_metric (str): Desempenho reportado (accuracy | dice | neg_mae).
        threshold (float): Limiar que binariza mapas de probabilidade.
        learning_rate (float): Passo do otimizador do preditor.
        optimizer (str): Regra do otimizador (adam | sgd).
        architecture (List[LayerSpec], optional): Substitui a arquitetura padrão.
    """

    model_config = ConfigDict(extra="forbid")

    kind: TaskKind = "classification"
    loss_spec: Optional[Literal["cross_entropy", "ce_dice", "mse"]] = None
    metric_spec: Optional[Literal["zero_one", "one_minus_dice", "mae"]] = None
    reward_metric: Optional[Literal["accuracy", "dice", "neg_mae"]] = None
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    learning_rate: float = Field(default=2e-3, ge=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    architecture: Optional[List[LayerSpec]] = None

    @model_validator(mode="after")
    def _resolve_defaults(self) -> "TaskSpec":
        loss, metric, reward = TASK_DEFAULTS[self.kind]
        self.loss_spec = self.loss_spec or loss
        self.metric_spec = self.metric_spec or metric
        self.reward_metric = self.reward_metric or reward
        if (self.metric_spec, self.reward_metric) != (metric, reward):
            raise ValueError(
                f"tarefa '{self.kind}' exige metric_spec={metric} e reward_metric={reward}"
            )
        return self


@dataclass
class PredictorModel:
    """Preditor f(·; w): a rede, seu otimizador e a tarefa que resolve."""

    task: TaskSpec
    net: Network
    opt: OptimizerState = field(default_factory=OptimizerState)
    steps_skipped: int = 0


@dataclass
class PredictionBatch:
    """
    Predições por amostra e a métrica L_h correspondente.

    Attributes:
        predictions (np.ndarray): Probabilidades de classe `(N, 2)`, mapas de
            probabilidade `(N, 1, H, W)` ou rasters reconstruídos `(N, C, H, W)`.
        metric_values (np.ndarray): `l_j >= 0` por amostra.
    """

    predictions: np.ndarray
    metric_values: np.ndarray


def default_architecture(kind: str, input_shape: Sequence[int]) -> List[LayerSpec]:
    """
    Arquiteturas em miniatura para cada tarefa.

    - **classification:** dois blocos conv-relu-pool e uma cabeça densa de 2 saídas.
    - **segmentation:** codificador-decodificador de 2 níveis com conexão de
      salto; saída em logits `(1, H, W)`.
    - **reconstruction:** autoencoder convolucional com gargalo em H/4,
      saída logística no mesmo formato da entrada.
    """
    channels = int(input_shape[0])
    if kind == "classification":
        raw = [
            {"kind": "conv2d", "out_channels": 4},
            {"kind": "activation", "fn": "relu"},
            {"kind": "pool"},
            {"kind": "conv2d", "out_channels": 8},
            {"kind": "activation", "fn": "relu"},
            {"kind": "pool"},
            {"kind": "flatten"},
            {"kind": "dense", "units": 2},
        ]
    elif kind == "segmentation":
        raw = [
            {"kind": "conv2d", "out_channels": 6},
            {"kind": "activation", "fn": "relu"},
            {"kind": "skip_save", "name": "enc1"},
            {"kind": "pool"},
            {"kind": "conv2d", "out_channels": 12},
            {"kind": "activation", "fn": "relu"},
            {"kind": "upsample"},
            {"kind": "skip_concat", "name": "enc1"},
            {"kind": "conv2d", "out_channels": 6},
            {"kind": "activation", "fn": "relu"},
            {"kind": "conv2d", "out_channels": 1, "kernel": 1},
        ]
    elif kind == "reconstruction":
        raw = [
            {"kind": "conv2d", "out_channels": 8},
            {"kind": "activation", "fn": "relu"},
            {"kind": "pool"},
            {"kind": "conv2d", "out_channels": 8},
            {"kind": "activation", "fn": "relu"},
            {"kind": "pool"},
            {"kind": "upsample"},
            {"kind": "conv2d", "out_channels": 8},
            {"kind": "activation", "fn": "relu"},
            {"kind": "upsample"},
            {"kind": "conv2d", "out_channels": channels},
            {"kind": "activation", "fn": "sigmoid"},
        ]
    else:
        raise ValueError(f"Tarefa desconhecida: {kind}")
    return [LayerSpec(**r) for r in raw]


def build_predictor(
    task: TaskSpec, input_shape: Sequence[int], rng: np.random.Generator
) -> PredictorModel:
    specs = task.architecture or default_architecture(task.kind, input_shape)
    net = Network(input_shape, specs, rng=rng)
    opt = OptimizerState(rule=task.optimizer, learning_rate=task.learning_rate)
    return PredictorModel(task=task, net=net, opt=opt)


def targets_for(task: TaskSpec, samples) -> np.ndarray:
    """Alvos Y da tarefa; na reconstrução é o próprio array de entrada (Y = X)."""
    if task.kind == "classification":
        return samples.classes
    if task.kind == "segmentation":
        return samples.masks
    return samples.images


def dice(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """
    Coeficiente de Dice binário `2|A∩B| / (|A|+|B|)`.

    Duas máscaras vazias valem 1 (acertar a ausência do alvo é acerto).

    Raises:
        ShapeMismatchError: Máscaras de formatos diferentes.
    """
    a = np.asarray(mask_a).astype(bool)
    b = np.asarray(mask_b).astype(bool)
    if a.shape != b.shape:
        raise ShapeMismatchError(0, a.shape, b.shape)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def batch_dice(masks_a: np.ndarray, masks_b: np.ndarray) -> np.ndarray:
    """Dice binário por amostra, com a mesma convenção de `dice` para vazios."""
    n = masks_a.shape[0]
    a = np.asarray(masks_a).astype(bool).reshape(n, -1)
    b = np.asarray(masks_b).astype(bool).reshape(n, -1)
    inter = (a & b).sum(axis=1)
    total = a.sum(axis=1) + b.sum(axis=1)
    return np.where(total == 0, 1.0, 2.0 * inter / np.maximum(total, 1))


def accuracy(preds: np.ndarray, targets: np.ndarray) -> float:
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.size == 0:
        raise ValueError("accuracy exige ao menos uma predição")
    if preds.shape != targets.shape:
        raise ShapeMismatchError(0, targets.shape, preds.shape)
    return float(np.mean(preds == targets))


def metric_values(task: TaskSpec, outputs: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Converte a saída bruta da rede em predições e na métrica L_h por amostra."""
    if task.kind == "classification":
        probs = softmax(outputs, axis=1)
        errors = (probs.argmax(axis=1) != np.asarray(targets)).astype(np.float64)
        return probs, errors
    if task.kind == "segmentation":
        probs = sigmoid(outputs)
        return probs, 1.0 - batch_dice(probs > task.threshold, targets > 0.5)
    n = outputs.shape[0]
    mae = np.abs(outputs - targets).reshape(n, -1).mean(axis=1)
    return outputs, mae


def predict(task: TaskSpec, model: PredictorModel, samples, chunk: int = 256) -> PredictionBatch:
    """
    Predições e métrica L_h sobre um conjunto de amostras.

    A avaliação é feita em blocos de `chunk` amostras; o resultado não depende
    do tamanho do bloco.

    Raises:
        ShapeMismatchError: Rasters incompatíveis com a entrada do preditor.
    """
    images = samples.images
    targets = targets_for(task, samples)
    preds, metrics = [], []
    for start in range(0, images.shape[0], chunk):
        outputs = model.net.forward(images[start : start + chunk])
        p, m = metric_values(task, outputs, targets[start : start + chunk])
        preds.append(p)
        metrics.append(m)
    if not preds:
        return PredictionBatch(np.empty((0,) + model.net.output_shape), np.empty(0))
    return PredictionBatch(np.concatenate(preds), np.concatenate(metrics))


def performance(task: TaskSpec, metric: np.ndarray) -> np.ndarray:
    """Desempenho por amostra: acurácia (1 − erro), Dice (1 − L_h) ou −MAE."""
    metric = np.asarray(metric, dtype=np.float64)
    if task.reward_metric == "neg_mae":
        return -metric
    return 1.0 - metric


def train_step(
    task: TaskSpec,
    model: PredictorModel,
    batch: np.ndarray,
    targets: np.ndarray,
    opt: Optional[OptimizerState] = None,
    weights: Optional[np.ndarray] = None,
) -> Optional[float]:
    """
    Um passo de otimização de L_f sobre as amostras selecionadas.

    Seleção vazia é evento legítimo (a amostragem de Bernoulli pode não
    escolher ninguém): o passo é pulado e o evento registrado.

    Returns:
        Optional[float]: A perda do lote, ou None se o passo foi pulado.
    """
    if batch.shape[0] == 0:
        model.steps_skipped += 1
        logger.info("[TREINO] event=empty_selection skipped=%d", model.steps_skipped)
        return None
    loss, grads = loss_and_grad(model.net, batch, targets, task.loss_spec, weights)
    optimizer_step(model.net, grads, opt or model.opt)
    return loss
