from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .losses import LossSpec, loss_and_grad
from .network import Network

logger = logging.getLogger(__name__)

MAX_CHECK_PARAMS = 10_000


@dataclass
class GradientCheckReport:
    """
    Resultado da comparação entre gradientes analíticos e numéricos.

    Attributes:
        max_relative_deviation (float): Maior desvio relativo entre tensores.
        per_parameter (Dict[str, float]): Desvio relativo de cada tensor.
        tolerance (float): Limite usado para sinalizar falha.
        flagged (bool): True quando o desvio excede a tolerância.
    """

    max_relative_deviation: float
    per_parameter: Dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    flagged: bool = False


def relative_deviation(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Desvio relativo em norma do máximo: max|a − n| / max(max|a|, max|n|)."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_gradient(
    objective: Callable[[], float], param: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Diferenças centrais entrada a entrada, perturbando `param` in-place."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = objective()
        flat[i] = original - h
        minus = objective()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def gradient_check(
    net: Network,
    batch: np.ndarray,
    targets: np.ndarray,
    loss_spec: LossSpec,
    tolerance: float = 1e-4,
    weights: Optional[np.ndarray] = None,
    analytic: Optional[Dict[str, np.ndarray]] = None,
    h: float = 1e-5,
) -> GradientCheckReport:
    """
    Verifica o backward da rede contra diferenças finitas centrais.

    Pensado para redes pequenas (até 10⁴ parâmetros): o custo é duas
    avaliações completas por parâmetro.

    Args:
        analytic (Dict[str, np.ndarray], optional): Gradientes a verificar; por
            padrão os calculados por `loss_and_grad`. Permite injetar falhas.

    Returns:
        GradientCheckReport: Desvios por tensor e sinalização de falha.
    """
    if net.parameter_count > MAX_CHECK_PARAMS:
        logger.warning(
            "[ALERTA] gradient_check em rede com %d parâmetros (lento)",
            net.parameter_count,
        )
    if analytic is None:
        _, analytic = loss_and_grad(net, batch, targets, loss_spec, weights)

    def objective() -> float:
        loss, _ = loss_and_grad(net, batch, targets, loss_spec, weights)
        return loss

    per_parameter = {}
    for key, param in net.params.items():
        numeric = numeric_gradient(objective, param, h)
        per_parameter[key] = relative_deviation(analytic[key], numeric)

    worst = max(per_parameter.values(), default=0.0)
    return GradientCheckReport(
        max_relative_deviation=worst,
        per_parameter=per_parameter,
        tolerance=tolerance,
        flagged=worst > tolerance,
    )
