from __future__ import annotations

from typing import Dict, Literal, Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from src.errors import NonFiniteLossError
from .layers import sigmoid
from .network import Network

LossSpec = Literal["cross_entropy", "ce_dice", "mse"]

DICE_SMOOTH = 1.0


def _cross_entropy(logits: np.ndarray, targets: np.ndarray):
    targets = np.asarray(targets).astype(np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    losses = -logp[np.arange(n), targets]
    d_out = softmax(logits, axis=1)
    d_out[np.arange(n), targets] -= 1.0
    return losses, d_out


def soft_dice(probs: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Dice suave por amostra, com suavização 1 no numerador e denominador."""
    n = probs.shape[0]
    p = probs.reshape(n, -1)
    g = masks.reshape(n, -1)
    return (2.0 * (p * g).sum(axis=1) + DICE_SMOOTH) / (
        p.sum(axis=1) + g.sum(axis=1) + DICE_SMOOTH
    )


def _ce_dice(logits: np.ndarray, masks: np.ndarray):
    """0,5·entropia cruzada por pixel + 0,5·(1 − Dice), por amostra."""
    n = logits.shape[0]
    z = logits.reshape(n, -1)
    g = np.asarray(masks, dtype=np.float64).reshape(n, -1)
    pixels = z.shape[1]
    p = sigmoid(z)

    bce = (np.maximum(z, 0.0) - z * g + np.log1p(np.exp(-np.abs(z)))).mean(axis=1)
    d_bce = (p - g) / pixels

    inter = (p * g).sum(axis=1, keepdims=True)
    total = p.sum(axis=1, keepdims=True) + g.sum(axis=1, keepdims=True) + DICE_SMOOTH
    dice = (2.0 * inter + DICE_SMOOTH) / total
    d_dice_dp = (2.0 * g * total - (2.0 * inter + DICE_SMOOTH)) / total**2
    d_dice = -d_dice_dp * p * (1.0 - p)

    losses = 0.5 * bce + 0.5 * (1.0 - dice[:, 0])
    d_out = 0.5 * d_bce + 0.5 * d_dice
    return losses, d_out.reshape(logits.shape)


def _mse(outputs: np.ndarray, targets: np.ndarray):
    n = outputs.shape[0]
    diff = (outputs - np.asarray(targets, dtype=np.float64)).reshape(n, -1)
    losses = (diff**2).mean(axis=1)
    d_out = 2.0 * diff / diff.shape[1]
    return losses, d_out.reshape(outputs.shape)


_LOSSES = {"cross_entropy": _cross_entropy, "ce_dice": _ce_dice, "mse": _mse}


def per_sample_loss(
    outputs: np.ndarray, targets: np.ndarray, loss_spec: LossSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Perda por amostra e a derivada de cada perda em relação à saída da rede.

    Returns:
        Tuple[np.ndarray, np.ndarray]: `(losses[N], d_losses/d_outputs)`, em que
        a linha i do segundo termo só depende da amostra i.
    """
    if loss_spec not in _LOSSES:
        raise ValueError(f"loss_spec desconhecida: {loss_spec}")
    return _LOSSES[loss_spec](outputs, targets)


def loss_and_grad(
    net: Network,
    batch: np.ndarray,
    targets: np.ndarray,
    loss_spec: LossSpec,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Perda média (ponderada) do lote e seu gradiente em relação a cada parâmetro.

    A média ponderada é `Σ w_i L_i / Σ w_i`; sem pesos usa-se w ≡ 1, de modo
    que o caminho não ponderado é exatamente o caso particular. Pesos
    uniformemente escalados produzem a mesma perda e o mesmo gradiente.

    Raises:
        NonFiniteLossError: Se alguma amostra de peso não nulo tiver perda
            não finita; carrega o índice da primeira ofensora.
    """
    outputs, caches = net.forward_with_cache(batch)
    losses, d_out = per_sample_loss(outputs, targets, loss_spec)
    n = losses.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)

    bad = np.flatnonzero(~np.isfinite(losses) & (w != 0))
    if bad.size:
        raise NonFiniteLossError(int(bad[0]), float(losses[bad[0]]))

    total = w.sum()
    if total == 0:
        return 0.0, {key: np.zeros_like(v) for key, v in net.params.items()}

    active = w != 0
    loss = float(np.sum(np.where(active, w * losses, 0.0)) / total)
    row = (n,) + (1,) * (d_out.ndim - 1)
    d_out = np.where(active.reshape(row), d_out, 0.0) * (w / total).reshape(row)
    grads, _ = net.backward(caches, d_out)
    return loss, grads
