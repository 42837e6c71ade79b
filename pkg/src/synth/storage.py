from __future__ import annotations

import hashlib
import json
import logging
import os
from typing import Dict, List

import numpy as np
import pandas as pd

from src.errors import MissingArtifactError
from .dataset import META_COLUMNS, SampleSet, SplitDataset

logger = logging.getLogger(__name__)

DATASET_VERSION = "data-v1"
MANIFEST_NAME = "manifest.json"
SAMPLES_NAME = "samples.bin"
LABELS_NAME = "labels.bin"
SPLIT_ORDER = ("train", "val", "holdout")


def _encode(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)


def _meta_records(meta: pd.DataFrame) -> List[Dict]:
    # escalares Python nativos: json grava floats com repr, leitura exata
    return [
        {col: (value.item() if hasattr(value, "item") else value) for col, value in row.items()}
        for row in meta.to_dict(orient="records")
    ]


def checksum(data: SplitDataset) -> str:
    """Hash sha256 dos rasters, rótulos e metadados, na ordem do manifesto."""
    digest = hashlib.sha256()
    for part in data.splits().values():
        digest.update(_encode([part.images, part.masks]))
    digest.update(data.meta.to_csv(index=False).encode("utf-8"))
    return digest.hexdigest()


def save_dataset(data: SplitDataset, out_dir: str) -> str:
    """
    Grava o conjunto no contêiner "data-v1".

    Estrutura do diretório:
    - `manifest.json`: versão, configuração, semente, formato do raster,
      tamanho das partições e metadados por amostra (incluindo as flags).
    - `samples.bin`: rasters float32 little-endian, row-major, concatenados
      na ordem do manifesto (treino, validação, holdout).
    - `labels.bin`: máscaras no mesmo layout.

    Returns:
        str: O checksum do conjunto gravado.
    """
    os.makedirs(out_dir, exist_ok=True)
    parts = data.splits()
    with open(os.path.join(out_dir, SAMPLES_NAME), "wb") as f:
        f.write(_encode(p.images for p in parts.values()))
    with open(os.path.join(out_dir, LABELS_NAME), "wb") as f:
        f.write(_encode(p.masks for p in parts.values()))

    digest = checksum(data)
    manifest = {
        "version": DATASET_VERSION,
        "config": data.config or {},
        "seed": int(data.seed),
        "raster_shape": list(data.train.input_shape),
        "label_shape": list(data.train.masks.shape[1:]),
        "splits": {name: len(p) for name, p in parts.items()},
        "checksum": digest,
        "samples": _meta_records(data.meta),
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("[SUCESSO] Conjunto gravado em %s (checksum=%s)", out_dir, digest[:12])
    return digest


def load_dataset(in_dir: str) -> SplitDataset:
    """
    Lê um contêiner "data-v1" gravado por `save_dataset`.

    Raises:
        MissingArtifactError: Manifesto ou blobs ausentes.
        ValueError: Versão desconhecida ou checksum divergente.
    """
    paths = {name: os.path.join(in_dir, name) for name in (MANIFEST_NAME, SAMPLES_NAME, LABELS_NAME)}
    for path in paths.values():
        if not os.path.exists(path):
            raise MissingArtifactError(path, "contêiner de dados")

    with open(paths[MANIFEST_NAME], encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != DATASET_VERSION:
        raise ValueError(f"Versão de conjunto não suportada: {manifest.get('version')}")

    raster_shape = tuple(manifest["raster_shape"])
    label_shape = tuple(manifest["label_shape"])
    images = np.fromfile(paths[SAMPLES_NAME], dtype="<f4").astype(np.float64)
    masks = np.fromfile(paths[LABELS_NAME], dtype="<f4").astype(np.float64)
    images = images.reshape((-1,) + raster_shape)
    masks = masks.reshape((-1,) + label_shape)
    meta = pd.DataFrame(manifest["samples"], columns=META_COLUMNS)

    parts: Dict[str, SampleSet] = {}
    start = 0
    for name in SPLIT_ORDER:
        n = manifest["splits"][name]
        stop = start + n
        parts[name] = SampleSet(
            images=images[start:stop],
            masks=masks[start:stop],
            meta=meta.iloc[start:stop].reset_index(drop=True),
        )
        start = stop

    data = SplitDataset(
        train=parts["train"],
        val=parts["val"],
        holdout=parts["holdout"],
        config=manifest["config"],
        seed=manifest["seed"],
    )
    if checksum(data) != manifest["checksum"]:
        raise ValueError(f"Checksum divergente no conjunto em {in_dir}")
    return data
