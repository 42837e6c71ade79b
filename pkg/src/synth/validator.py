from __future__ import annotations

from typing import TYPE_CHECKING, Dict

import numpy as np
import pandas as pd

if TYPE_CHECKING:
    from .dataset import SampleSet

QUADRANT_NAMES = {
    (True, True): "artefato_dificil",
    (True, False): "artefato_facil",
    (False, True): "limpo_dificil",
    (False, False): "limpo_facil",
}


class DatasetValidator:
    """
    Auditoria de qualidade do benchmark sintético (Data Quality Assurance).

    Estratégia de Validação:
    Mesma abordagem não-destrutiva (**Soft Validation**) usada em toda a base:
    nenhuma amostra é descartada; os metadados recebem colunas booleanas que
    indicam a conformidade de cada registro, e o chamador decide o que fazer.

    Escopo de Regras:
    1. **Faixa:** Raster finito e contido em [0, 1].
    2. **Rótulo:** Máscara binária, vazia se e somente se o alvo estiver ausente.
    3. **Flags:** `artefact_in_roi` implica `artefact_flag`; `hard_flag` só com alvo
       presente; os tipos (`*_kind`) concordam com as flags.
    """

    @staticmethod
    def raster_in_range(images: np.ndarray) -> np.ndarray:
        flat = images.reshape(images.shape[0], -1)
        return np.isfinite(flat).all(axis=1) & (flat.min(axis=1) >= 0.0) & (flat.max(axis=1) <= 1.0)

    @staticmethod
    def mask_consistent(masks: np.ndarray, present: np.ndarray) -> np.ndarray:
        flat = masks.reshape(masks.shape[0], -1)
        binary = np.isin(flat, (0.0, 1.0)).all(axis=1)
        nonempty = flat.sum(axis=1) > 0
        return binary & (nonempty == present)

    @classmethod
    def run_quality_checks(cls, part: "SampleSet") -> pd.DataFrame:
        """
        Executa as validações e devolve os metadados enriquecidos com as flags.

        Args:
            part (SampleSet): Partição a auditar (os metadados originais não
                são alterados; uma cópia é anotada).

        Returns:
            pd.DataFrame: Metadados acrescidos de:
            - `raster_valido` (bool)
            - `mascara_valida` (bool)
            - `flags_validas` (bool)
            - `registro_conforme` (bool): True apenas se todas as regras passarem.
        """
        df = part.meta.copy()
        if df.empty:
            return df

        present = df["target_present"].to_numpy(dtype=bool)
        df["raster_valido"] = cls.raster_in_range(part.images)
        df["mascara_valida"] = cls.mask_consistent(part.masks, present)

        art = df["artefact_flag"].astype(bool)
        hard = df["hard_flag"].astype(bool)
        df["flags_validas"] = (
            (~df["artefact_in_roi"].astype(bool) | art)
            & (~hard | df["target_present"].astype(bool))
            & ((df["artefact_kind"] != "none") == art)
            & ((df["hard_kind"] != "none") == hard)
        )

        df["registro_conforme"] = df["raster_valido"] & df["mascara_valida"] & df["flags_validas"]
        return df

    @staticmethod
    def quadrant_counts(meta: pd.DataFrame) -> Dict[str, int]:
        """Contagem das amostras com alvo em cada combinação (artefato × difícil)."""
        present = meta[meta["target_present"].astype(bool)]
        counts = {name: 0 for name in QUADRANT_NAMES.values()}
        for (art, hard), group in present.groupby(["artefact_flag", "hard_flag"]):
            counts[QUADRANT_NAMES[(bool(art), bool(hard))]] = int(len(group))
        return counts
