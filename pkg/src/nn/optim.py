from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Literal

import numpy as np

from src.errors import ShapeMismatchError
from .network import Network


@dataclass
class OptimizerState:
    """
    Estado do otimizador: taxa de aprendizado, momentos e contador de passos.

    Attributes:
        rule (str): 'sgd' (gradiente descendente puro) ou 'adam'.
        learning_rate (float): Passo base.
        beta1, beta2, eps (float): Hiperparâmetros do Adam.
        m, v (Dict[str, np.ndarray]): Acumuladores de momento, com os mesmos
            formatos dos parâmetros (criados preguiçosamente no primeiro passo).
        step (int): Passos já aplicados.
    """

    rule: Literal["sgd", "adam"] = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def _layer_of(key: str) -> int:
    return int(key.split(".", 1)[0])


def optimizer_step(
    net: Network, grads: Dict[str, np.ndarray], opt: OptimizerState
) -> Network:
    """
    Aplica um passo de otimização sobre os parâmetros da rede (in-place).

    Args:
        net (Network): Rede a atualizar; é o único escritor deste estado.
        grads (Dict[str, np.ndarray]): Gradientes, espelhando `net.params`.
        opt (OptimizerState): Estado do otimizador, também atualizado.

    Returns:
        Network: A própria rede, já atualizada.

    Raises:
        ShapeMismatchError: Se algum gradiente não espelhar seu parâmetro.
    """
    for key, param in net.params.items():
        grad = grads.get(key)
        if grad is None or np.shape(grad) != param.shape:
            raise ShapeMismatchError(_layer_of(key), param.shape, np.shape(grad))

    opt.step += 1
    lr = opt.learning_rate
    for key, param in net.params.items():
        grad = np.asarray(grads[key], dtype=np.float64)
        if opt.rule == "sgd":
            param -= lr * grad
            continue
        m = opt.m.setdefault(key, np.zeros_like(param))
        v = opt.v.setdefault(key, np.zeros_like(param))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * grad**2
        m_hat = m / (1.0 - opt.beta1**opt.step)
        v_hat = v / (1.0 - opt.beta2**opt.step)
        param -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return net
