from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.metrics import roc_auc_score

from src.errors import ShapeMismatchError
from .controller import ControllerModel, score
from .tasks import PredictorModel, TaskSpec, performance, predict

logger = logging.getLogger(__name__)

POSITIVE_CONVENTION = "positive = low quality in both rankings (bottom-k of a and of b)"
QUADRANTS = ("TP", "FP", "FN", "TN")


def retained_count(h: int, k: float) -> int:
    return int(np.ceil((1.0 - k) * h - 1e-9))


def reject_lowest(scores: np.ndarray, ids: np.ndarray, k: float) -> np.ndarray:
    """
    Índices (em ordem crescente) das ⌈(1 − k)·H⌉ amostras de maior nota.

    Só a ordem das notas importa; empates são resolvidos pelo id crescente.

    Raises:
        ValueError: k fora de [0, 1) ou nenhuma amostra retida.
    """
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(ids)
    if scores.shape != ids.shape:
        raise ShapeMismatchError(0, ids.shape, scores.shape)
    if not 0.0 <= k < 1.0:
        raise ValueError(f"k fora de [0, 1): {k}")
    keep = retained_count(scores.size, k)
    if keep <= 0:
        raise ValueError("rejeição remove todas as amostras")
    order = np.lexsort((ids, -scores))
    return np.sort(order[:keep])


def bottom_k(scores: np.ndarray, ids: np.ndarray, k: float) -> np.ndarray:
    """Máscara booleana das amostras rejeitadas (baixa qualidade) com razão k."""
    low = np.ones(np.asarray(scores).size, dtype=bool)
    if k <= 0.0:
        low[:] = False
        return low
    low[reject_lowest(scores, ids, k)] = False
    return low


def _is_label_vector(values: np.ndarray) -> bool:
    if values.dtype == bool:
        return True
    if not np.issubdtype(values.dtype, np.integer):
        return False
    return bool(np.isin(values, (0, 1)).all())


@dataclass
class RejectionCurve:
    """
    Curva desempenho × razão de rejeição, agregada entre execuções.

    Attributes:
        frame (pd.DataFrame): Colunas `k, mean, std, n_retained` e uma coluna
            `run_<i>` com o valor de cada execução.
    """

    frame: pd.DataFrame
    run_ids: Sequence[str] = field(default_factory=list)

    @property
    def ks(self) -> np.ndarray:
        return self.frame["k"].to_numpy()

    def values(self) -> np.ndarray:
        cols = [c for c in self.frame.columns if c.startswith("run_")]
        return self.frame[cols].to_numpy()


def curve_from_runs(
    ks: Sequence[float],
    per_run: Sequence[np.ndarray],
    n_retained: Sequence[int],
    run_ids: Optional[Sequence[str]] = None,
) -> RejectionCurve:
    """Agrega valores por execução (uma coluna por execução) em média ± desvio."""
    ks = [float(k) for k in ks]
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("valores de k devem ser estritamente crescentes")
    if not per_run:
        raise ValueError("curva exige ao menos uma execução")
    matrix = np.column_stack(per_run)
    std = matrix.std(axis=1, ddof=1) if matrix.shape[1] > 1 else np.zeros(len(ks))
    frame = pd.DataFrame(
        {"k": ks, "mean": matrix.mean(axis=1), "std": std, "n_retained": list(n_retained)}
    )
    for i in range(matrix.shape[1]):
        frame[f"run_{i}"] = matrix[:, i]
    return RejectionCurve(frame=frame, run_ids=list(run_ids or []))


def rejection_values(scores: np.ndarray, ids: np.ndarray, per_sample: np.ndarray, ks: Sequence[float]) -> np.ndarray:
    """Desempenho médio sobre as amostras retidas para cada k."""
    return np.array([per_sample[reject_lowest(scores, ids, k)].mean() for k in ks])


def rejection_sweep(
    controllers: Sequence[ControllerModel],
    predictors: Sequence[PredictorModel],
    holdout,
    ks: Sequence[float],
    task: Optional[TaskSpec] = None,
    run_ids: Optional[Sequence[str]] = None,
) -> RejectionCurve:
    """
    Ordena o holdout pelas notas do controlador e mede o preditor nas amostras
    retidas, para cada k; um par (controlador, preditor) por semente.

    A linha k = 0 é a linha de base não seletiva do mesmo preditor.
    """
    if len(controllers) != len(predictors):
        raise ValueError("um controlador por preditor")
    per_run = []
    for ctrl, pred in zip(controllers, predictors):
        t = task or pred.task
        per_sample = performance(t, predict(t, pred, holdout).metric_values)
        per_run.append(rejection_values(score(ctrl, holdout.images), holdout.ids, per_sample, ks))
    n_retained = [retained_count(len(holdout), k) for k in ks]
    logger.info("[AVALIAR] Curva de rejeição com %d pontos e %d execuções", len(ks), len(per_run))
    return curve_from_runs(ks, per_run, n_retained, run_ids)


@dataclass
class ContingencyTable:
    tp: int
    fp: int
    fn: int
    tn: int
    convention: str = POSITIVE_CONVENTION

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def transpose(self) -> "ContingencyTable":
        return ContingencyTable(self.tp, self.fn, self.fp, self.tn, self.convention)

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def contingency(
    scores_a: np.ndarray,
    scores_b_or_labels: np.ndarray,
    k_a: float,
    k_b: float = 0.0,
    ids: Optional[np.ndarray] = None,
) -> ContingencyTable:
    """
    Tabela 2×2 entre duas noções de baixa qualidade.

    `a` (task-specific por convenção) é sempre um vetor de notas; baixa
    qualidade = bottom-k_a. `b` pode ser notas (bottom-k_b) ou rótulos
    (1/True = baixa qualidade), caso em que `k_b` é ignorado. Conta como
    rótulo todo vetor bool ou inteiro com valores em {0, 1}; notas reais
    devem vir em ponto flutuante.
    TP = baixa nas duas; FP = baixa só por a; FN = baixa só por b.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b_or_labels)
    if a.shape != b.shape:
        raise ShapeMismatchError(0, a.shape, b.shape)
    ids = np.arange(a.size) if ids is None else np.asarray(ids)
    low_a = bottom_k(a, ids, k_a)
    low_b = b.astype(bool) if _is_label_vector(b) else bottom_k(b.astype(np.float64), ids, k_b)
    return ContingencyTable(
        tp=int(np.sum(low_a & low_b)),
        fp=int(np.sum(low_a & ~low_b)),
        fn=int(np.sum(~low_a & low_b)),
        tn=int(np.sum(~low_a & ~low_b)),
    )


def prevalence_k(labels: np.ndarray) -> float:
    """
    Razão de rejeição igual à fração de amostras sinalizadas.

    Comparar o bottom-k de uma ordenação com rótulos só admite κ = 1 quando
    k coincide com a prevalência; o valor fica abaixo de 1 para que ao menos
    uma amostra seja retida.
    """
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        raise ValueError("rótulos vazios")
    return float(min(labels.mean(), (labels.size - 1) / labels.size))


def cohens_kappa(table: ContingencyTable) -> float:
    """κ = (p_o − p_e)/(1 − p_e); vale 1 na tabela degenerada com p_e = p_o = 1."""
    n = table.total
    if n < 1:
        raise ValueError("tabela vazia")
    p_o = (table.tp + table.tn) / n
    row_low, col_low = (table.tp + table.fp) / n, (table.tp + table.fn) / n
    p_e = row_low * col_low + (1.0 - row_low) * (1.0 - col_low)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class QuadrantReport:
    """
    Partição do holdout em TP/FP/FN/TN pelas duas ordenações.

    Attributes:
        frame (pd.DataFrame): Uma linha por amostra: sample_id, quadrant,
            ts_score, ta_score, shaped_score, artefact_flag, hard_flag.
        medians (Dict[str, float]): Mediana da nota moldada por quadrante
            (NaN para quadrante vazio).
    """

    frame: pd.DataFrame
    medians: Dict[str, float]

    def ids(self, quadrant: str) -> np.ndarray:
        return self.frame.loc[self.frame["quadrant"] == quadrant, "sample_id"].to_numpy()


def quadrant_report(
    ts_scores: np.ndarray,
    ta_scores: np.ndarray,
    meta: pd.DataFrame,
    k: float,
    shaped_scores: Optional[np.ndarray] = None,
) -> QuadrantReport:
    """
    Quadrantes pela pertença ao bottom-k de cada ordenação, com as flags do
    gerador anexadas e a mediana da nota moldada por quadrante.
    """
    ids = meta["sample_id"].to_numpy()
    low_ts = bottom_k(ts_scores, ids, k)
    low_ta = bottom_k(ta_scores, ids, k)
    quadrant = np.select(
        [low_ts & low_ta, low_ts & ~low_ta, ~low_ts & low_ta], ["TP", "FP", "FN"], default="TN"
    )
    shaped = np.asarray(ts_scores if shaped_scores is None else shaped_scores, dtype=np.float64)
    frame = pd.DataFrame(
        {
            "sample_id": ids,
            "quadrant": quadrant,
            "ts_score": np.asarray(ts_scores, dtype=np.float64),
            "ta_score": np.asarray(ta_scores, dtype=np.float64),
            "shaped_score": shaped,
            "artefact_flag": meta["artefact_flag"].to_numpy(dtype=bool),
            "hard_flag": meta["hard_flag"].to_numpy(dtype=bool),
        }
    )
    grouped = frame.groupby("quadrant")["shaped_score"].median()
    medians = {q: float(grouped.get(q, np.nan)) for q in QUADRANTS}
    return QuadrantReport(frame=frame, medians=medians)


def task_impact_flags(meta: pd.DataFrame) -> np.ndarray:
    """Verdade de campo do eixo task-specific: artefato na região do alvo ou caso difícil."""
    artefact_in_roi = meta["artefact_flag"].to_numpy(dtype=bool) & meta["artefact_in_roi"].to_numpy(dtype=bool)
    return artefact_in_roi | meta["hard_flag"].to_numpy(dtype=bool)


def detection_auc(scores: np.ndarray, flags: np.ndarray) -> float:
    """ROC-AUC das notas baixas como detector das amostras sinalizadas."""
    return float(roc_auc_score(np.asarray(flags, dtype=bool), -np.asarray(scores, dtype=np.float64)))


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    return float(stats.spearmanr(a, b).statistic)


def paired_ttest(baseline: Sequence[float], treatment: Sequence[float]) -> float:
    """p-valor do teste t pareado unilateral (tratamento > linha de base)."""
    return float(stats.ttest_rel(treatment, baseline, alternative="greater").pvalue)
