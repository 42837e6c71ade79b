from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

CODE_VERSION = "0.3.0"


class HistoryRow(BaseModel):
    """
    Uma linha do histórico de recompensa/métrica (um passo de episódio).

    Attributes:
        update_index (int): Atualização do controlador à qual o passo pertence.
        episode (int): Índice global do episódio.
        step (int): Passo dentro do episódio (0..T-1).
        R_tilde (float, optional): Recompensa bruta R̃ da validação (None na
            linha de base não seletiva, que não tem recompensa).
        R_bar (float): Linha de base da média móvel já atualizada.
        R (float): Recompensa recortada R̃ − R̄.
        val_metric (float): Desempenho médio do preditor na validação.
        n_selected (int): Amostras selecionadas (ação 1) no mini-lote.
        n_val_kept (int): Amostras de validação que entraram em R̃.
    """

    update_index: int
    episode: int
    step: int
    R_tilde: Optional[float] = None
    R_bar: Optional[float] = None
    R: Optional[float] = None
    val_metric: float
    n_selected: int
    n_val_kept: int


class UpdateRecord(BaseModel):
    """
    Registro de uma atualização do controlador (trajetória auditável).

    Attributes:
        update_index (int): Índice da atualização.
        controller_digest (str): SHA-256 de θ após a atualização.
        predictor_digest (str): SHA-256 de w ao fim dos episódios.
        mean_R_tilde (float): Média de R̃ nos episódios da atualização.
        R_bar (float): Média móvel R̄ ao fim da atualização (critério de convergência).
        return_baseline (float): Linha de base do retorno após a atualização.
    """

    update_index: int
    controller_digest: str
    predictor_digest: str
    mean_R_tilde: float
    R_bar: float
    return_baseline: float


class RunManifest(BaseModel):
    """
    Manifesto de uma execução de treino: suficiente para reproduzi-la.

    Não carrega relógio de parede; tempos ficam em `timing.json`, de modo que
    duas execuções de mesma configuração e semente gerem manifestos idênticos.

    Attributes:
        run_id (str): Identificador determinístico (hash de configuração + semente).
        command (str): Comando da CLI que produziu a execução.
        mode (str): task_specific | task_agnostic | shaped | non_selective.
        phi (float): φ da recompensa moldada (1 fora do modo moldado).
        seed (int): Semente mestre.
        code_version (str): Versão do código.
        config (Dict[str, Any]): Configuração completa resolvida.
        status (str): ok | failed.
        failure (str, optional): Causa da falha, quando houver.
        n_updates (int): Atualizações do controlador efetivamente aplicadas.
        converged (bool): True se parou pelo critério de convergência.
        reward_state (Dict[str, Any]): Estado final do recorte.
        updates (List[UpdateRecord]): Trajetória de atualizações.
        history (List[HistoryRow]): Histórico por passo.
        artifacts (Dict[str, str]): Caminhos relativos dos artefatos gerados.
        summary (Dict[str, Any]): Resultados próprios do comando (checksum, AUC, κ).
    """

    run_id: str = ""
    command: str = "train"
    mode: str = "task_specific"
    phi: float = 1.0
    seed: int = 0
    code_version: str = CODE_VERSION
    config: Dict[str, Any] = Field(default_factory=dict)
    status: str = "ok"
    failure: Optional[str] = None
    n_updates: int = 0
    converged: bool = False
    reward_state: Dict[str, Any] = Field(default_factory=dict)
    updates: List[UpdateRecord] = Field(default_factory=list)
    history: List[HistoryRow] = Field(default_factory=list)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
