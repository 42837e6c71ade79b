from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import pandas as pd

META_COLUMNS = [
    "sample_id",
    "split",
    "label",
    "target_present",
    "artefact_flag",
    "artefact_kind",
    "artefact_in_roi",
    "artefact_severity",
    "hard_flag",
    "hard_kind",
    "hard_severity",
    "center_y",
    "center_x",
    "radius",
]


@dataclass
class ImageSample:
    """
    Uma amostra sintética com seus rótulos e flags de qualidade verdadeiras.

    O raster é guardado canal-primeiro `(C, H, W)`, o layout consumido pelas
    redes; valores sempre em [0, 1].
    """

    sample_id: int
    raster: np.ndarray
    mask: np.ndarray
    target_present: bool
    artefact_flag: bool = False
    artefact_kind: str = "none"
    artefact_in_roi: bool = False
    artefact_severity: float = 0.0
    hard_flag: bool = False
    hard_kind: str = "none"
    hard_severity: float = 0.0
    center_y: float = 0.0
    center_x: float = 0.0
    radius: float = 0.0

    @property
    def label(self) -> int:
        return int(self.target_present)


@dataclass
class SampleSet:
    """
    Partição de amostras em forma de arrays empilhados + metadados tabulares.

    Attributes:
        images (np.ndarray): `(N, C, H, W)` em float64 (valores representáveis
            em float32, para que a leitura do disco seja bit a bit idêntica).
        masks (np.ndarray): `(N, 1, H, W)` máscaras binárias do alvo limpo.
        meta (pd.DataFrame): Uma linha por amostra, colunas `META_COLUMNS`.
    """

    images: np.ndarray
    masks: np.ndarray
    meta: pd.DataFrame

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def ids(self) -> np.ndarray:
        return self.meta["sample_id"].to_numpy(dtype=np.int64)

    @property
    def classes(self) -> np.ndarray:
        return self.meta["label"].to_numpy(dtype=np.int64)

    @property
    def artefact_flags(self) -> np.ndarray:
        return self.meta["artefact_flag"].to_numpy(dtype=bool)

    @property
    def hard_flags(self) -> np.ndarray:
        return self.meta["hard_flag"].to_numpy(dtype=bool)

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, index) -> "SampleSet":
        index = np.asarray(index)
        return SampleSet(
            images=self.images[index],
            masks=self.masks[index],
            meta=self.meta.iloc[index].reset_index(drop=True),
        )

    @classmethod
    def from_samples(cls, samples, split: str) -> "SampleSet":
        images = np.stack([s.raster for s in samples]).astype(np.float32).astype(np.float64)
        masks = np.stack([s.mask for s in samples]).astype(np.float64)
        rows = []
        for s in samples:
            rows.append(
                {
                    "sample_id": s.sample_id,
                    "split": split,
                    "label": s.label,
                    "target_present": s.target_present,
                    "artefact_flag": s.artefact_flag,
                    "artefact_kind": s.artefact_kind,
                    "artefact_in_roi": s.artefact_in_roi,
                    "artefact_severity": s.artefact_severity,
                    "hard_flag": s.hard_flag,
                    "hard_kind": s.hard_kind,
                    "hard_severity": s.hard_severity,
                    "center_y": s.center_y,
                    "center_x": s.center_x,
                    "radius": s.radius,
                }
            )
        return cls(images=images, masks=masks, meta=pd.DataFrame(rows, columns=META_COLUMNS))


@dataclass
class SplitDataset:
    """Partições disjuntas treino/validação/holdout de um mesmo gerador."""

    train: SampleSet
    val: SampleSet
    holdout: SampleSet
    config: Optional[Dict] = None
    seed: int = 0

    def splits(self) -> Dict[str, SampleSet]:
        return {"train": self.train, "val": self.val, "holdout": self.holdout}

    @property
    def meta(self) -> pd.DataFrame:
        return pd.concat([s.meta for s in self.splits().values()], ignore_index=True)
