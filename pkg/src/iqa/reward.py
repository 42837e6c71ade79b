from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import RewardError

logger = logging.getLogger(__name__)

Strategy = Literal["fixed_clean_avg", "weighted", "selective"]


class RewardConfig(BaseModel):
    """
    Parâmetros da recompensa.

    Attributes:
        strategy (str): fixed_clean_avg | weighted | selective.
        s_rej (float): Fração de amostras de validação rejeitadas (só selective).
        alpha_r (float): Fator da média móvel usada no recorte.
        phi (float): Peso do desempenho na recompensa moldada (1 = não moldada).
        keep_lowest (bool): Ablação que inverte o sentido do subconjunto selective.
    """

    model_config = ConfigDict(extra="forbid")

    strategy: Strategy = "weighted"
    s_rej: float = Field(default=0.0, ge=0.0, lt=1.0)
    alpha_r: float = Field(default=0.9, ge=0.0, le=1.0)
    phi: float = Field(default=1.0, ge=0.0, le=1.0)
    keep_lowest: bool = False

    @model_validator(mode="after")
    def _s_rej_only_selective(self) -> "RewardConfig":
        if self.s_rej > 0 and self.strategy != "selective":
            raise ValueError("s_rej só se aplica à estratégia selective")
        return self


@dataclass
class RewardState:
    """Linha de base R̄ da média móvel; indefinida até a primeira observação."""

    r_bar: float = 0.0
    initialized: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def kept_count(m: int, s_rej: float) -> int:
    """M′ = ⌊(1 − s_rej)·M⌋ (tolerância contra erro de arredondamento do produto)."""
    return int(np.floor((1.0 - s_rej) * m + 1e-9))


def selective_keep(
    scores: np.ndarray, ids: np.ndarray, s_rej: float, keep_lowest: bool = False
) -> np.ndarray:
    """
    Índices mantidos pela estratégia selective: os M′ = ⌊(1 − s_rej)·M⌋ de
    maior nota, empates pelo id crescente (ou os de menor nota, na ablação).

    Raises:
        RewardError: Se M′ = 0.
    """
    m = len(scores)
    kept = kept_count(m, s_rej)
    if kept == 0:
        raise RewardError(
            f"rejection ratio leaves empty validation set (M={m}, s_rej={s_rej})"
        )
    primary = scores if keep_lowest else -np.asarray(scores)
    order = np.lexsort((ids, primary))
    return np.sort(order[:kept])


def unclipped_reward(
    strategy: Strategy,
    losses: np.ndarray,
    scores: Optional[np.ndarray] = None,
    s_rej: float = 0.0,
    ids: Optional[np.ndarray] = None,
    keep_lowest: bool = False,
) -> float:
    """
    Recompensa bruta R̃ a partir das métricas de validação.

    - **fixed_clean_avg:** −média(l).
    - **weighted:** −média(l_j·h_j).
    - **selective:** −média de l sobre as M′ amostras de maior nota.

    Raises:
        RewardError: Entrada vazia, notas ausentes ou seleção vazia.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise RewardError("conjunto de validação vazio")
    if strategy == "fixed_clean_avg":
        return float(-losses.mean())
    if scores is None:
        raise RewardError(f"estratégia '{strategy}' exige as notas do controlador")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != losses.shape:
        raise RewardError(f"notas {scores.shape} e perdas {losses.shape} desalinhadas")
    if strategy == "weighted":
        return float(-(losses * scores).mean())
    if strategy == "selective":
        ids = np.arange(losses.size) if ids is None else np.asarray(ids)
        keep = selective_keep(scores, ids, s_rej, keep_lowest)
        return float(-losses[keep].mean())
    raise RewardError(f"estratégia desconhecida: {strategy}")


def clip(r_tilde: float, state: RewardState, alpha_r: float) -> Tuple[float, RewardState]:
    """
    Recorte pela média móvel: R̄ ← α·R̄ + (1 − α)·R̃ e R = R̃ − R̄ (R̄ já atualizado).

    Na primeira chamada R̄ anterior := R̃, logo R = 0.

    Raises:
        RewardError: R̃ não finito (contaminaria R̄ pelo resto da execução).
    """
    if not np.isfinite(r_tilde):
        raise RewardError(f"recompensa não finita: {r_tilde}")
    if not state.initialized:
        return 0.0, RewardState(r_bar=float(r_tilde), initialized=True)
    r_bar = alpha_r * state.r_bar + (1.0 - alpha_r) * r_tilde
    return float(r_tilde - r_bar), RewardState(r_bar=float(r_bar), initialized=True)


def shaped_reward(r_clipped: float, h_a_scores: np.ndarray, phi: float) -> np.ndarray:
    """Recompensa moldada por amostra: R_i = φ·R + (1 − φ)·h_a(x_i)."""
    h_a = np.asarray(h_a_scores, dtype=np.float64)
    if phi == 1.0:
        return np.full(h_a.shape, float(r_clipped))
    if phi == 0.0:
        return h_a.copy()
    return phi * r_clipped + (1.0 - phi) * h_a
