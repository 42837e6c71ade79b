from __future__ import annotations

import logging
import os
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

# hash fixo nos ids do SVG: mesma curva, mesmos bytes
matplotlib.rcParams["svg.hashsalt"] = "amenability-report"
matplotlib.rcParams["svg.fonttype"] = "none"


def write_curve_svg(
    curves: pd.DataFrame,
    path: str,
    group: str = "run_id",
    title: str = "Desempenho x razão de rejeição",
    ylabel: Optional[str] = None,
) -> str:
    """
    Grava o gráfico de linhas das curvas de rejeição em SVG.

    Uma linha por grupo (média) com faixa ± desvio quando houver mais de uma
    semente agregada. A saída é determinística: sem data nos metadados e
    grupos ordenados.

    Args:
        curves (pd.DataFrame): Colunas `k`, `mean`, `std` e a coluna de grupo.
        path (str): Arquivo de saída `.svg`.
        group (str): Coluna que identifica cada linha.

    Returns:
        str: O caminho gravado.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, part in sorted(curves.groupby(group), key=lambda item: str(item[0])):
        part = part.sort_values("k")
        ax.plot(part["k"], part["mean"], marker="o", linewidth=1.5, label=str(name))
        std = part["std"].fillna(0.0)
        if (std > 0).any():
            ax.fill_between(part["k"], part["mean"] - std, part["mean"] + std, alpha=0.2)
    ax.set_xlabel("razão de rejeição k")
    ax.set_ylabel(ylabel or "desempenho no holdout")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if curves[group].nunique() <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("[RELATORIO] Gráfico gravado: %s", path)
    return path
