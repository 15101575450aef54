"""Pre-norm causal transformer over pooled day sequences, predictor and heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from byb import tensor as T
from byb.nn import MLPParams, init_mlp, mlp_forward, ones, sinusoidal_table, uniform, zeros
from byb.tensor import Tensor

# (ff_dim, num_layers) at d_model = 128
PRESETS: dict[str, tuple[int, int]] = {
    "base": (128, 4),
    "base_x2": (128, 8),
    "base_x4": (256, 5),
    "base_x8": (256, 10),
    "base_x16": (512, 5),
}

LAYER_PARAMS = ("wq", "wk", "wv", "wo", "ff1", "ff2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")


@dataclass
class SeqModelConfig:
    d_model: int = 128
    ff_dim: int = 128
    num_layers: int = 4
    num_heads: int = 4
    max_positions: int = 4096

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if min(self.d_model, self.ff_dim, self.num_layers, self.num_heads) <= 0:
            raise ValueError("all sequence-model dimensions must be positive")

    @classmethod
    def from_preset(cls, name: str, d_model: int = 128, num_heads: int = 4) -> "SeqModelConfig":
        try:
            ff, layers = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(d_model=d_model, ff_dim=ff, num_layers=layers, num_heads=num_heads)


def count_params(cfg: SeqModelConfig) -> dict[str, int]:
    """Trainable parameters of the sequence model alone.

    Per layer: four bias-free d x d projections, two bias-free feed-forward
    matrices and two affine layer norms.
    """
    d, ff = cfg.d_model, cfg.ff_dim
    attention = 4 * d * d
    feed_forward = 2 * d * ff
    norms = 4 * d
    per_layer = attention + feed_forward + norms
    return {
        "attention": attention * cfg.num_layers,
        "feed_forward": feed_forward * cfg.num_layers,
        "layer_norm": norms * cfg.num_layers,
        "per_layer": per_layer,
        "total": per_layer * cfg.num_layers,
    }


@dataclass
class SeqModelParams:
    config: SeqModelConfig
    layers: list[dict[str, Tensor]] = field(default_factory=list)

    def tensors(self) -> dict[str, Tensor]:
        return {f"layer{i}.{k}": t for i, layer in enumerate(self.layers) for k, t in layer.items()}


def init_seqmodel(cfg: SeqModelConfig, seed: int) -> SeqModelParams:
    rng = np.random.default_rng(seed)
    d, ff = cfg.d_model, cfg.ff_dim
    layers = []
    for _ in range(cfg.num_layers):
        layers.append(
            {
                "wq": uniform(rng, (d, d), d),
                "wk": uniform(rng, (d, d), d),
                "wv": uniform(rng, (d, d), d),
                "wo": uniform(rng, (d, d), d),
                "ff1": uniform(rng, (d, ff), d),
                "ff2": uniform(rng, (ff, d), ff),
                "ln1_g": ones(d),
                "ln1_b": zeros(d),
                "ln2_g": ones(d),
                "ln2_b": zeros(d),
            }
        )
    return SeqModelParams(cfg, layers)


def attention_mask(valid: np.ndarray, causal: bool = True) -> np.ndarray:
    """Additive mask [B, 1, K, K]: -inf on future keys and on empty-day keys.

    The diagonal is always open so every query row has at least one key.
    """
    B, K = valid.shape
    allowed = np.broadcast_to(valid[:, None, :], (B, K, K)).copy()
    if causal:
        allowed &= np.tril(np.ones((K, K), dtype=bool))[None]
    allowed |= np.eye(K, dtype=bool)[None]
    return np.where(allowed, 0.0, -np.inf)[:, None, :, :]


def _split_heads(x: Tensor, B: int, K: int, h: int) -> Tensor:
    return T.transpose(T.reshape(x, (B, K, h, x.shape[-1] // h)), (0, 2, 1, 3))


def encode_sequence(
    params: SeqModelParams,
    x: Tensor,
    valid: np.ndarray,
    causal: bool = True,
    attn_weights: list | None = None,
) -> Tensor:
    """Per-position outputs H [B, K, d] of the last layer.

    ``x`` is [B, K, d] (or [K, d] for one sample); invalid positions should
    already hold zero vectors.
    """
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
        valid = np.asarray(valid)[None]
    valid = np.asarray(valid, dtype=bool)
    B, K, d = x.shape
    cfg = params.config
    if d != cfg.d_model:
        raise ValueError(f"input width {d} != d_model {cfg.d_model}")
    if not valid.any(axis=1).all():
        raise ValueError("every sequence needs at least one valid position")
    h = cfg.num_heads
    mask = attention_mask(valid, causal)
    pos = Tensor(np.broadcast_to(sinusoidal_table(K, d), (B, K, d)))
    z = T.add(x, pos)
    for layer in params.layers:
        a = T.layer_norm(z, layer["ln1_g"], layer["ln1_b"])
        q = _split_heads(T.matmul(a, layer["wq"]), B, K, h)
        k = _split_heads(T.matmul(a, layer["wk"]), B, K, h)
        v = _split_heads(T.matmul(a, layer["wv"]), B, K, h)
        o = T.scaled_dot_attention(q, k, v, mask, weights_out=attn_weights)
        o = T.reshape(T.transpose(o, (0, 2, 1, 3)), (B, K, d))
        z = T.add(z, T.matmul(o, layer["wo"]))
        f = T.layer_norm(z, layer["ln2_g"], layer["ln2_b"])
        z = T.add(z, T.matmul(T.relu(T.matmul(f, layer["ff1"])), layer["ff2"]))
    if single:
        z = T.reshape(z, (K, d))
    return z


def last_valid_index(valid: np.ndarray) -> np.ndarray:
    valid = np.asarray(valid, dtype=bool)
    K = valid.shape[-1]
    return K - 1 - np.argmax(valid[..., ::-1], axis=-1)


def sequence_representation(H: Tensor, valid: np.ndarray) -> Tensor:
    """E: the last-layer output at each sequence's last valid position."""
    last = last_valid_index(valid)
    if H.ndim == 2:
        return H[int(last)]
    return H[np.arange(H.shape[0]), last]


def init_predictor(d_model: int, hidden: int, seed: int) -> MLPParams:
    return init_mlp(np.random.default_rng(seed), d_model, hidden, d_model)


def predict(pred: MLPParams, x: Tensor) -> Tensor:
    return mlp_forward(pred, x)


def attach_head(d_model: int, num_classes: int, seed: int, hidden: int = 64) -> MLPParams:
    if num_classes < 2:
        raise ValueError("a classification head needs at least two classes")
    return init_mlp(np.random.default_rng(seed), d_model, hidden, num_classes)


def head_forward(head: MLPParams, E: Tensor) -> Tensor:
    return mlp_forward(head, E)


def attention_maps(
    params: SeqModelParams, x: np.ndarray | Tensor, valid: np.ndarray, causal: bool = True
) -> list[np.ndarray]:
    """Per-layer [K, K] attention averaged over samples and heads."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    weights: list[np.ndarray] = []
    encode_sequence(params, x, valid, causal=causal, attn_weights=weights)
    return [w.mean(axis=(0, 1)) for w in weights]
