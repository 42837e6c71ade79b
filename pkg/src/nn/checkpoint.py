from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.errors import MissingArtifactError
from .network import Network

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "ckpt-v1"


def _encode_tensors(params: Dict[str, np.ndarray]) -> bytes:
    chunks = []
    for name in sorted(params):
        value = np.ascontiguousarray(params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    return b"".join(chunks)


def _decode_tensors(blob: bytes) -> Dict[str, np.ndarray]:
    params = {}
    offset = 0
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        value = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        params[name] = value.reshape(dims).astype(np.float64)
    return params


def save_checkpoint(
    net: Network, path: str, meta: Optional[Dict[str, Any]] = None
) -> Tuple[str, str]:
    """
    Persiste a rede no formato "ckpt-v1".

    Gera dois arquivos lado a lado: `<path>.json` (manifesto com descritores
    de camada, formato de entrada, metadados e o hash do blob) e `<path>.bin`
    (tensores nomeados, float64 little-endian, row-major, cada um prefixado
    por tamanho do nome, nome, posto e dimensões).

    Returns:
        Tuple[str, str]: Caminhos do manifesto e do blob.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    blob = _encode_tensors(net.params)
    blob_path = f"{path}.bin"
    manifest_path = f"{path}.json"
    manifest = {
        "version": CHECKPOINT_VERSION,
        "input_shape": list(net.input_shape),
        "layers": [spec.model_dump(exclude_none=True) for spec in net.specs],
        "blob": os.path.basename(blob_path),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    with open(blob_path, "wb") as f:
        f.write(blob)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("[CHECKPOINT] event=saved path=%s", manifest_path)
    return manifest_path, blob_path


def load_checkpoint(path: str) -> Tuple[Network, Dict[str, Any]]:
    """
    Carrega um checkpoint "ckpt-v1" salvo por `save_checkpoint`.

    Args:
        path (str): Prefixo comum (sem extensão) ou caminho do manifesto `.json`.

    Returns:
        Tuple[Network, Dict[str, Any]]: A rede reconstruída e os metadados.

    Raises:
        MissingArtifactError: Se manifesto ou blob não existirem.
        ValueError: Versão desconhecida ou blob corrompido (hash divergente).
    """
    if path.endswith(".json"):
        path = path[: -len(".json")]
    manifest_path = f"{path}.json"
    if not os.path.exists(manifest_path):
        raise MissingArtifactError(manifest_path, "manifesto de checkpoint")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"Versão de checkpoint não suportada: {manifest.get('version')}")

    blob_path = os.path.join(os.path.dirname(manifest_path), manifest["blob"])
    if not os.path.exists(blob_path):
        raise MissingArtifactError(blob_path, "blob de checkpoint")
    with open(blob_path, "rb") as f:
        blob = f.read()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ValueError(f"Blob corrompido (hash divergente): {blob_path}")

    net = Network(manifest["input_shape"], manifest["layers"], params=_decode_tensors(blob))
    return net, manifest.get("meta", {})
