"""Small building blocks shared by the encoder, sequence model and heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from byb import tensor as T
from byb.tensor import Tensor


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table of shape [length, dim]."""
    pos = np.arange(length)[:, None]
    rate = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return table


def uniform(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(shape, name: str | None = None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


@dataclass
class MLPParams:
    """x -> relu(x w1 + b1) w2 + b2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]


def init_mlp(rng: np.random.Generator, d_in: int, hidden: int, d_out: int) -> MLPParams:
    return MLPParams(
        uniform(rng, (d_in, hidden), d_in),
        zeros(hidden),
        uniform(rng, (hidden, d_out), hidden),
        zeros(d_out),
    )


def mlp_forward(p: MLPParams, x: Tensor) -> Tensor:
    h = T.relu(T.broadcast_add(T.matmul(x, p.w1), p.b1))
    return T.broadcast_add(T.matmul(h, p.w2), p.b2)


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> LinearParams:
    return LinearParams(uniform(rng, (d_in, d_out), d_in), zeros(d_out))


def linear_forward(p: LinearParams, x: Tensor) -> Tensor:
    return T.broadcast_add(T.matmul(x, p.w), p.b)


def load_into(tensors: dict[str, Tensor], state: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy archived arrays into existing tensors, checking shapes."""
    for name, t in tensors.items():
        key = prefix + name
        if key not in state:
            raise KeyError(f"checkpoint lacks {key}")
        arr = state[key]
        if arr.shape != t.shape:
            raise ValueError(f"{key}: checkpoint shape {arr.shape} != model shape {t.shape}")
        t.data[...] = arr
