"""
Tiny Vision Transformer producing the global visual descriptor h_v.

Images are cut into non-overlapping P x P patches, projected into D
dimensions, prefixed with a learnable class token and summed with learnable
positional embeddings. L pre-LN encoder blocks follow; the final-LN class
token row is h_v.
"""

import logging
from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from errors import ConfigError, DimensionError
from image_ops import patchify
from parameters import ModelParams, normal_init
from tensor_core import Tensor

logger = logging.getLogger(__name__)


@dataclass
class ViTConfig:
    image_side: int = 32
    patch_side: int = 8
    embed_dim: int = 64
    layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    dropout_p: float = 0.0

    @property
    def num_patches(self) -> int:
        return (self.image_side // self.patch_side) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_side * self.patch_side * 3

    def validate(self) -> "ViTConfig":
        if self.patch_side < 1 or self.image_side % self.patch_side:
            raise ConfigError(f"vit.image_side={self.image_side} is not divisible by vit.patch_side={self.patch_side}")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"vit.embed_dim={self.embed_dim} is not divisible by vit.heads={self.heads}")
        if self.layers < 0 or self.mlp_ratio < 1:
            raise ConfigError("vit.layers must be >= 0 and vit.mlp_ratio >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"vit.dropout_p must be in [0, 1), got {self.dropout_p}")
        return self


@dataclass
class AttentionWeights:
    """Query/key/value/output projections of one multi-head attention block."""

    q: tuple
    k: tuple
    v: tuple
    o: tuple

    @classmethod
    def register(cls, params: ModelParams, prefix: str, q_dim: int, kv_dim: int, attn_dim: int,
                 out_dim: int, group: str, rng: np.random.Generator) -> "AttentionWeights":
        return cls(
            q=params.linear(f"{prefix}.q", q_dim, attn_dim, group, rng),
            k=params.linear(f"{prefix}.k", kv_dim, attn_dim, group, rng),
            v=params.linear(f"{prefix}.v", kv_dim, attn_dim, group, rng),
            o=params.linear(f"{prefix}.o", attn_dim, out_dim, group, rng),
        )


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, a = x.shape
    return tc.transpose(tc.reshape(x, (b, n, heads, a // heads)), (0, 2, 1, 3))


def multi_head_attention(query: Tensor, key_value: Tensor, w: AttentionWeights, heads: int,
                         probs_out: list | None = None) -> Tensor:
    """
    softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated and output-projected.

    Args:
        query (Tensor): (B, Nq, Dq)
        key_value (Tensor): (B, Nk, Dk)
        w (AttentionWeights): projections
        heads (int): number of heads; must divide the attention width
        probs_out (list): when given, receives the (B, H, Nq, Nk) attention probabilities

    Returns:
        Tensor: (B, Nq, out_dim)
    """
    attn_dim = w.q[0].shape[1]
    if heads < 1 or attn_dim % heads:
        raise ConfigError(f"Attention width {attn_dim} is not divisible by {heads} heads")
    if query.ndim != 3 or key_value.ndim != 3 or query.shape[0] != key_value.shape[0]:
        raise DimensionError(f"attention expects (B, N, D) inputs, got {query.shape} and {key_value.shape}")

    q = _split_heads(tc.linear(query, *w.q), heads)
    k = _split_heads(tc.linear(key_value, *w.k), heads)
    v = _split_heads(tc.linear(key_value, *w.v), heads)
    scores = tc.scale(tc.matmul(q, tc.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(attn_dim // heads))
    probs = tc.softmax_lastdim(scores)
    if probs_out is not None:
        probs_out.append(probs.data)
    context = tc.matmul(probs, v)
    b, _, nq, _ = context.shape
    merged = tc.reshape(tc.transpose(context, (0, 2, 1, 3)), (b, nq, attn_dim))
    return tc.linear(merged, *w.o)


@dataclass
class EncoderLayer:
    ln1: tuple
    attn: AttentionWeights
    ln2: tuple
    fc1: tuple
    fc2: tuple


class VisualEncoder:
    """
    Registers its parameters (group "visual") in a shared ModelParams.

    Args:
        cfg (ViTConfig): geometry of the transformer
        params (ModelParams): parameter store
        rng (np.random.Generator): initialisation randomness
    """

    group = "visual"

    def __init__(self, cfg: ViTConfig, params: ModelParams, rng: np.random.Generator, prefix: str = "visual"):
        self.cfg = cfg.validate()
        d = cfg.embed_dim
        self.patch_proj = params.add(f"{prefix}.patch_embed", rng.uniform(
            -1.0 / np.sqrt(cfg.patch_dim), 1.0 / np.sqrt(cfg.patch_dim), size=(cfg.patch_dim, d)), self.group)
        self.cls_token = params.add(f"{prefix}.cls_token", normal_init(rng, (d,)), self.group)
        self.pos_embed = params.add(f"{prefix}.pos_embed", normal_init(rng, (cfg.num_patches + 1, d)), self.group)
        self.layers = []
        for i in range(cfg.layers):
            name = f"{prefix}.block{i}"
            self.layers.append(EncoderLayer(
                ln1=params.norm(f"{name}.ln1", d, self.group),
                attn=AttentionWeights.register(params, f"{name}.attn", d, d, d, d, self.group, rng),
                ln2=params.norm(f"{name}.ln2", d, self.group),
                fc1=params.linear(f"{name}.fc1", d, d * cfg.mlp_ratio, self.group, rng),
                fc2=params.linear(f"{name}.fc2", d * cfg.mlp_ratio, d, self.group, rng),
            ))
        self.final_ln = params.norm(f"{prefix}.ln_final", d, self.group)
        logger.debug("Visual encoder: %d patches of %d values, D=%d, L=%d, H=%d",
                     cfg.num_patches, cfg.patch_dim, d, cfg.layers, cfg.heads)

    def patch_embed(self, images: np.ndarray) -> Tensor:
        """
        Channel-normalized (B, S, S, 3) images -> (B, N+1, D) token sequence.

        Row 0 is the class token; rows 1..N follow the row-major patch order.
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        side = self.cfg.image_side
        if images.shape[1:] != (side, side, 3):
            raise DimensionError(f"Expected images of shape ({side}, {side}, 3), got {images.shape[1:]}")
        batch = images.shape[0]
        tokens = tc.matmul(Tensor(patchify(images, self.cfg.patch_side), copy=False), self.patch_proj)
        cls = tc.broadcast_to(tc.reshape(self.cls_token, (1, 1, self.cfg.embed_dim)),
                              (batch, 1, self.cfg.embed_dim))
        return tc.add(tc.concat([cls, tokens], axis=1), self.pos_embed)

    def encoder_block(self, z: Tensor, layer: EncoderLayer, training: bool = False,
                      rng: np.random.Generator | None = None, probs_out: list | None = None) -> Tensor:
        p = self.cfg.dropout_p
        h = tc.layer_norm(z, *layer.ln1)
        z = tc.add(z, tc.dropout(multi_head_attention(h, h, layer.attn, self.cfg.heads, probs_out), p, rng, training))
        h = tc.layer_norm(z, *layer.ln2)
        ffn = tc.linear(tc.gelu(tc.linear(h, *layer.fc1)), *layer.fc2)
        return tc.add(z, tc.dropout(ffn, p, rng, training))

    def encode_tokens(self, images: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Final-LN token sequence (B, N+1, D)."""
        z = tc.dropout(self.patch_embed(images), self.cfg.dropout_p, rng, training)
        for layer in self.layers:
            z = self.encoder_block(z, layer, training, rng)
        return tc.layer_norm(z, *self.final_ln)

    def encode(self, images: np.ndarray, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        """h_v: the final-LN class-token row, (B, D)."""
        return tc.take(self.encode_tokens(images, training, rng), 0, axis=1)
