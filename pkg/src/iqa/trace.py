from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


@dataclass
class StepRecord:
    """
    Um passo (s_t, a_t, R_t) de um episódio.

    Attributes:
        sample_ids (np.ndarray): Ids das B amostras do mini-lote de treino.
        images (np.ndarray): Rasters do mini-lote (usados na atualização da política).
        scores (np.ndarray): Notas h_i do controlador no momento da ação.
        actions (np.ndarray): Ações a_i ∈ {0, 1}.
        selected_ids (np.ndarray): Ids efetivamente usados no passo do preditor.
        r_tilde, r_bar, reward (float): Recompensa bruta, linha de base e recortada.
        sample_rewards (np.ndarray): Recompensa por amostra de treino (moldada ou
            constante igual a `reward`).
        signal (float): Escalar propagado no retorno dos passos seguintes.
        val_metric (float): Desempenho médio do preditor na validação.
        n_val_kept (int): Amostras de validação que entraram em R̃.
        val_images, val_targets (np.ndarray, optional): Amostras de validação e
            alvos do termo de regressão do controlador (modo moldado, φ < 1).
        val_weight (float): Peso do termo de regressão (0 desliga).
    """

    step: int
    sample_ids: np.ndarray
    images: np.ndarray
    scores: np.ndarray
    actions: np.ndarray
    selected_ids: np.ndarray
    r_tilde: float = float("nan")
    r_bar: float = float("nan")
    reward: float = float("nan")
    sample_rewards: Optional[np.ndarray] = None
    signal: float = float("nan")
    val_metric: float = float("nan")
    n_val_kept: int = 0
    val_images: Optional[np.ndarray] = None
    val_targets: Optional[np.ndarray] = None
    val_weight: float = 0.0

    @property
    def has_reward(self) -> bool:
        return (
            self.sample_rewards is not None
            and np.all(np.isfinite(self.sample_rewards))
            and np.isfinite(self.signal)
        )


@dataclass
class EpisodeTrace:
    """Trajetória (s_1, a_1, R_1, …, s_T, a_T, R_T) de um episódio."""

    episode: int
    steps: List[StepRecord] = field(default_factory=list)

    def returns(self, gamma: float) -> List[np.ndarray]:
        """
        Retorno descontado por amostra de cada passo.

        G_t^i = r_t^i + γ·Ḡ_{t+1}, com Ḡ_t = s_t + γ·Ḡ_{t+1}: a recompensa
        própria de cada amostra só pesa no seu passo; os passos seguintes
        contribuem com o escalar `signal`.
        """
        out: List[np.ndarray] = [None] * len(self.steps)
        future = 0.0
        for t in range(len(self.steps) - 1, -1, -1):
            record = self.steps[t]
            out[t] = record.sample_rewards + gamma * future
            future = record.signal + gamma * future
        return out
