from __future__ import annotations

import math
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

Shape = Tuple[int, ...]
Params = Dict[str, np.ndarray]

LayerKind = Literal[
    "dense",
    "conv2d",
    "activation",
    "flatten",
    "pool",
    "upsample",
    "skip_save",
    "skip_concat",
]


class LayerSpec(BaseModel):
    """
    Descritor declarativo de uma camada.

    É o que vai para o manifesto do checkpoint: a partir de uma lista de
    `LayerSpec` e do formato de entrada a rede inteira pode ser reconstruída.

    Attributes:
        kind (str): Tipo da camada.
        units (int, optional): Saídas da camada densa.
        out_channels (int, optional): Canais de saída da convolução.
        kernel (int): Lado do kernel (ímpar, padding 'same', stride 1).
        fn (str, optional): Função de ativação (relu | sigmoid | tanh).
        mode (str): Redução do pooling (max | avg).
        name (str, optional): Chave da conexão de salto (skip_save/skip_concat).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LayerKind
    units: Optional[int] = Field(default=None, ge=1)
    out_channels: Optional[int] = Field(default=None, ge=1)
    kernel: int = Field(default=3, ge=1)
    fn: Optional[Literal["relu", "sigmoid", "tanh"]] = None
    mode: Literal["max", "avg"] = "max"
    name: Optional[str] = None


def glorot_uniform(
    rng: np.random.Generator, shape: Shape, fan_in: int, fan_out: int
) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Contrato comum: formato de saída, inicialização, forward e backward."""

    has_params = False

    def __init__(self, spec: LayerSpec, in_shape: Shape):
        self.spec = spec
        self.in_shape = in_shape
        self.out_shape = self.output_shape(in_shape)

    def output_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def init_params(self, rng: np.random.Generator) -> Params:
        return {}

    def forward(self, x: np.ndarray, params: Params, skips: Dict[str, np.ndarray]):
        raise NotImplementedError

    def backward(self, g: np.ndarray, params: Params, cache, pending: Dict):
        raise NotImplementedError


class Dense(Layer):
    has_params = True

    def output_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 1:
            raise ValueError(f"dense espera entrada plana, recebeu {in_shape}")
        return (self.spec.units,)

    def init_params(self, rng):
        fan_in, fan_out = self.in_shape[0], self.spec.units
        return {
            "W": glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out),
            "b": np.zeros(fan_out),
        }

    def forward(self, x, params, skips):
        return x @ params["W"] + params["b"], x

    def backward(self, g, params, cache, pending):
        x = cache
        grads = {"W": x.T @ g, "b": g.sum(axis=0)}
        return g @ params["W"].T, grads


class Conv2D(Layer):
    """Convolução 2D NCHW, stride 1, padding 'same'."""

    has_params = True

    def output_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise ValueError(f"conv2d espera entrada (C, H, W), recebeu {in_shape}")
        if self.spec.kernel % 2 == 0:
            raise ValueError("conv2d exige kernel ímpar")
        return (self.spec.out_channels, in_shape[1], in_shape[2])

    def init_params(self, rng):
        c_in, k, c_out = self.in_shape[0], self.spec.kernel, self.spec.out_channels
        return {
            "W": glorot_uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k),
            "b": np.zeros(c_out),
        }

    def forward(self, x, params, skips):
        k = self.spec.kernel
        pad = k // 2
        xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        windows = sliding_window_view(xpad, (k, k), axis=(2, 3))
        out = np.tensordot(windows, params["W"], axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2) + params["b"][None, :, None, None]
        return out, xpad

    def backward(self, g, params, cache, pending):
        xpad = cache
        k = self.spec.kernel
        pad = k // 2
        h, w = g.shape[2], g.shape[3]
        windows = sliding_window_view(xpad, (k, k), axis=(2, 3))
        d_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        d_xpad = np.zeros_like(xpad)
        for di in range(k):
            for dj in range(k):
                d_xpad[:, :, di : di + h, dj : dj + w] += np.einsum(
                    "nohw,oc->nchw", g, params["W"][:, :, di, dj]
                )
        d_x = d_xpad[:, :, pad : pad + h, pad : pad + w]
        return d_x, {"W": d_w, "b": g.sum(axis=(0, 2, 3))}


class Activation(Layer):
    def forward(self, x, params, skips):
        fn = self.spec.fn
        if fn == "relu":
            out = np.maximum(x, 0.0)
            return out, x > 0
        if fn == "sigmoid":
            out = sigmoid(x)
            return out, out
        out = np.tanh(x)
        return out, out

    def backward(self, g, params, cache, pending):
        fn = self.spec.fn
        if fn == "relu":
            return g * cache, {}
        if fn == "sigmoid":
            return g * cache * (1.0 - cache), {}
        return g * (1.0 - cache**2), {}


class Flatten(Layer):
    def output_shape(self, in_shape: Shape) -> Shape:
        return (int(np.prod(in_shape)),)

    def forward(self, x, params, skips):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, params, cache, pending):
        return g.reshape(cache), {}


class Pool(Layer):
    """Pooling 2x2 (max ou média) sem sobreposição."""

    def output_shape(self, in_shape: Shape) -> Shape:
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ValueError(f"pool 2x2 exige dimensões pares, recebeu {in_shape}")
        return (c, h // 2, w // 2)

    @staticmethod
    def _blocks(x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        return (
            x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )

    @staticmethod
    def _unblocks(blocks: np.ndarray) -> np.ndarray:
        n, c, h2, w2, _ = blocks.shape
        return (
            blocks.reshape(n, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h2 * 2, w2 * 2)
        )

    def forward(self, x, params, skips):
        blocks = self._blocks(x)
        if self.spec.mode == "avg":
            return blocks.mean(axis=-1), None
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, idx

    def backward(self, g, params, cache, pending):
        if self.spec.mode == "avg":
            blocks = np.repeat(g[..., None] / 4.0, 4, axis=-1)
            return self._unblocks(blocks), {}
        blocks = np.zeros(g.shape + (4,))
        np.put_along_axis(blocks, cache[..., None], g[..., None], axis=-1)
        return self._unblocks(blocks), {}


class Upsample(Layer):
    """Upsampling por vizinho mais próximo, fator 2."""

    def output_shape(self, in_shape: Shape) -> Shape:
        c, h, w = in_shape
        return (c, h * 2, w * 2)

    def forward(self, x, params, skips):
        return x.repeat(2, axis=2).repeat(2, axis=3), None

    def backward(self, g, params, cache, pending):
        n, c, h, w = g.shape
        return g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)), {}


class SkipSave(Layer):
    def forward(self, x, params, skips):
        skips[self.spec.name] = x
        return x, None

    def backward(self, g, params, cache, pending):
        extra = pending.pop(self.spec.name, None)
        return (g if extra is None else g + extra), {}


class SkipConcat(Layer):
    """Concatena, no eixo de canais, a ativação salva sob `name`."""

    def __init__(self, spec: LayerSpec, in_shape: Shape, saved_shape: Shape):
        self.saved_shape = saved_shape
        super().__init__(spec, in_shape)

    def output_shape(self, in_shape: Shape) -> Shape:
        if in_shape[1:] != self.saved_shape[1:]:
            raise ValueError(
                f"skip '{self.spec.name}' com dimensões espaciais "
                f"{self.saved_shape[1:]} != {in_shape[1:]}"
            )
        return (in_shape[0] + self.saved_shape[0],) + in_shape[1:]

    def forward(self, x, params, skips):
        return np.concatenate([x, skips[self.spec.name]], axis=1), x.shape[1]

    def backward(self, g, params, cache, pending):
        c = cache
        name = self.spec.name
        pending[name] = pending.get(name, 0.0) + g[:, c:]
        return g[:, :c], {}


LAYER_TYPES = {
    "dense": Dense,
    "conv2d": Conv2D,
    "activation": Activation,
    "flatten": Flatten,
    "pool": Pool,
    "upsample": Upsample,
    "skip_save": SkipSave,
}


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logística numericamente estável."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
