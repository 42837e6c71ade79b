from __future__ import annotations

import copy
import hashlib
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ShapeMismatchError
from .layers import LAYER_TYPES, Layer, LayerSpec, Params, Shape, SkipConcat

logger = logging.getLogger(__name__)


class Network:
    """
    Rede sequencial com conexões de salto nomeadas, em float64.

    A rede é montada a partir de uma lista de `LayerSpec` e do formato de uma
    amostra (sem o eixo do lote). Os parâmetros ficam em um dicionário plano
    `"<indice>.<nome>"` -> `np.ndarray`, o que simplifica otimizador,
    verificação de gradiente e checkpoint.

    Decisões de Arquitetura:
    - **Forward puro:** `forward` não altera estado algum; os caches do
      backward são devolvidos explicitamente por `forward_with_cache`.
    - **Gradientes derivados à mão:** cada tipo de camada implementa seu
      próprio backward; não há fita genérica de autodiferenciação.
    - **Contagem fixa de parâmetros:** definida na construção e nunca alterada.

    Attributes:
        input_shape (Tuple[int, ...]): Formato de uma amostra de entrada.
        specs (List[LayerSpec]): Descritores das camadas.
        layers (List[Layer]): Camadas instanciadas.
        params (Dict[str, np.ndarray]): Parâmetros treináveis.
    """

    def __init__(
        self,
        input_shape: Sequence[int],
        specs: Sequence[LayerSpec],
        rng: Optional[np.random.Generator] = None,
        params: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.input_shape: Shape = tuple(int(d) for d in input_shape)
        self.specs: List[LayerSpec] = [
            s if isinstance(s, LayerSpec) else LayerSpec(**s) for s in specs
        ]
        self.layers: List[Layer] = []
        saved_shapes: Dict[str, Shape] = {}

        shape = self.input_shape
        for index, spec in enumerate(self.specs):
            try:
                if spec.kind == "skip_concat":
                    if spec.name not in saved_shapes:
                        raise ValueError(f"skip '{spec.name}' não foi salvo antes")
                    layer = SkipConcat(spec, shape, saved_shapes[spec.name])
                else:
                    layer = LAYER_TYPES[spec.kind](spec, shape)
            except ValueError as exc:
                raise ShapeMismatchError(index, str(exc), shape) from exc
            if spec.kind == "skip_save":
                saved_shapes[spec.name] = shape
            self.layers.append(layer)
            shape = layer.out_shape
        self.output_shape: Shape = shape

        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {}
            for index, layer in enumerate(self.layers):
                for name, value in layer.init_params(rng).items():
                    params[f"{index}.{name}"] = value.astype(np.float64)
        self.params: Dict[str, np.ndarray] = params
        self._check_params()

    def _check_params(self) -> None:
        for index, layer in enumerate(self.layers):
            if not layer.has_params:
                continue
            for name, expected in layer.init_params(np.random.default_rng(0)).items():
                key = f"{index}.{name}"
                if key not in self.params:
                    raise ShapeMismatchError(index, expected.shape, None)
                if self.params[key].shape != expected.shape:
                    raise ShapeMismatchError(index, expected.shape, self.params[key].shape)

    def _layer_params(self, index: int) -> Params:
        prefix = f"{index}."
        return {
            key[len(prefix) :]: value
            for key, value in self.params.items()
            if key.startswith(prefix)
        }

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape[1:] != self.input_shape:
            raise ShapeMismatchError(0, self.input_shape, batch.shape[1:])
        return batch

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Avalia a rede sobre um lote `(N, *input_shape)`."""
        out, _ = self.forward_with_cache(batch)
        return out

    def forward_with_cache(self, batch: np.ndarray) -> Tuple[np.ndarray, list]:
        x = self._check_batch(batch)
        skips: Dict[str, np.ndarray] = {}
        caches = []
        for index, layer in enumerate(self.layers):
            x, cache = layer.forward(x, self._layer_params(index), skips)
            caches.append(cache)
        return x, caches

    def backward(
        self, caches: list, grad_output: np.ndarray
    ) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        """
        Propaga `grad_output` de volta pela rede.

        Returns:
            Tuple[Dict[str, np.ndarray], np.ndarray]: Gradientes de cada
            parâmetro e gradiente em relação à entrada.
        """
        g = np.asarray(grad_output, dtype=np.float64)
        pending: Dict[str, np.ndarray] = {}
        grads: Dict[str, np.ndarray] = {}
        for index in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[index]
            g, layer_grads = layer.backward(
                g, self._layer_params(index), caches[index], pending
            )
            for name, value in layer_grads.items():
                grads[f"{index}.{name}"] = value
        return {key: grads[key] for key in self.params}, g

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def clone(self) -> "Network":
        return Network(self.input_shape, self.specs, params=copy.deepcopy(self.params))

    def digest(self) -> str:
        """Impressão digital SHA-256 dos parâmetros (auditoria de trajetórias)."""
        h = hashlib.sha256()
        for key in sorted(self.params):
            h.update(key.encode("utf-8"))
            h.update(np.ascontiguousarray(self.params[key], dtype="<f8").tobytes())
        return h.hexdigest()


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def backprop(
    net: Network, batch: np.ndarray, grad_output: np.ndarray
) -> Dict[str, np.ndarray]:
    """Gradientes dos parâmetros para um gradiente arbitrário na saída da rede."""
    out, caches = net.forward_with_cache(batch)
    if np.shape(grad_output) != out.shape:
        raise ShapeMismatchError(len(net.layers), out.shape, np.shape(grad_output))
    grads, _ = net.backward(caches, grad_output)
    return grads
