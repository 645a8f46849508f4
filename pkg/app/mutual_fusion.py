"""
Stacked mutual attention fusion of the visual (h_v) and metadata (h_m)
descriptors.

Each block runs two cross-attention directions (visual queries metadata,
metadata queries visual), concatenates their outputs with residual
projections of both inputs and distils the result through a two-layer MLP.
Blocks after the first refine the fused vector against itself.
"""

from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from errors import ConfigError
from parameters import ModelParams
from tensor_core import Tensor
from visual_encoder import AttentionWeights, multi_head_attention

FUSION_MODES = ("mutual", "v2m", "m2v", "concat")
_MODE_ALIASES = {"one_way_v2m": "v2m", "one_way_m2v": "m2v"}


@dataclass
class FusionConfig:
    mode: str = "mutual"
    heads: int = 4
    stages: int = 2
    fused_dim: int = 256
    dropout_p: float = 0.1
    # metadata queries the visual token sequence instead of the pooled h_v
    token_level: bool = False

    def validate(self) -> "FusionConfig":
        self.mode = _MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"Unknown fusion mode '{self.mode}' (expected one of {', '.join(FUSION_MODES)})")
        if self.stages < 1:
            raise ConfigError(f"fusion.stages must be >= 1, got {self.stages}")
        if self.heads < 1 or self.fused_dim % self.heads:
            raise ConfigError(f"fusion.fused_dim={self.fused_dim} is not divisible by fusion.heads={self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"fusion.dropout_p must be in [0, 1), got {self.dropout_p}")
        return self

    @property
    def uses_v2m(self) -> bool:
        return self.mode in ("mutual", "v2m")

    @property
    def uses_m2v(self) -> bool:
        return self.mode in ("mutual", "m2v")


def cross_attend(q_src: Tensor, kv_src: Tensor, attn: AttentionWeights, norm: tuple, heads: int,
                 probs_out: list | None = None) -> Tensor:
    """
    LN(MHA(Q=q_src, K=V=kv_src)) for a pooled query.

    Args:
        q_src (Tensor): (B, Dq) query vectors
        kv_src (Tensor): (B, Dk) pooled or (B, Nk, Dk) token key/value source
        attn (AttentionWeights): direction-specific projections
        norm (tuple): (gamma, beta) of the output LayerNorm
        heads (int): attention heads

    Returns:
        Tensor: (B, attn_dim)
    """
    b = q_src.shape[0]
    query = tc.reshape(q_src, (b, 1, q_src.shape[-1]))
    if kv_src.ndim == 2:
        kv_src = tc.reshape(kv_src, (b, 1, kv_src.shape[-1]))
    out = multi_head_attention(query, kv_src, attn, heads, probs_out)
    return tc.layer_norm(tc.take(out, 0, axis=1), *norm)


class MutualAttentionBlock:
    """One fusion stage over inputs of widths (dim_a, dim_b) producing fused_dim."""

    group = "fusion"

    def __init__(self, name: str, dim_a: int, dim_b: int, cfg: FusionConfig, params: ModelParams,
                 rng: np.random.Generator):
        f = cfg.fused_dim
        self.cfg = cfg
        self.name = name
        self.attn_ab = AttentionWeights.register(params, f"{name}.v2m", dim_a, dim_b, f, f, self.group, rng)
        self.norm_ab = params.norm(f"{name}.v2m_ln", f, self.group)
        self.attn_ba = AttentionWeights.register(params, f"{name}.m2v", dim_b, dim_a, f, f, self.group, rng)
        self.norm_ba = params.norm(f"{name}.m2v_ln", f, self.group)
        self.res_a = params.linear(f"{name}.res_v", dim_a, f, self.group, rng)
        self.res_b = params.linear(f"{name}.res_m", dim_b, f, self.group, rng)
        self.mlp1 = params.linear(f"{name}.mlp1", 4 * f, f, self.group, rng)
        self.mlp2 = params.linear(f"{name}.mlp2", f, f, self.group, rng)
        self.out_norm = params.norm(f"{name}.out_ln", f, self.group)

    def __call__(self, a: Tensor, b: Tensor, training: bool = False, rng: np.random.Generator | None = None,
                 a_tokens: Tensor | None = None, probs_out: list | None = None) -> Tensor:
        cfg = self.cfg
        res_a = tc.linear(a, *self.res_a)
        res_b = tc.linear(b, *self.res_b)
        z_ab = cross_attend(a, b, self.attn_ab, self.norm_ab, cfg.heads, probs_out) if cfg.uses_v2m else res_a
        keys = a_tokens if a_tokens is not None else a
        z_ba = cross_attend(b, keys, self.attn_ba, self.norm_ba, cfg.heads, probs_out) if cfg.uses_m2v else res_b

        z_cat = tc.concat([z_ab, z_ba, res_a, res_b], axis=-1)
        hidden = tc.dropout(tc.relu(tc.linear(z_cat, *self.mlp1)), cfg.dropout_p, rng, training)
        return tc.layer_norm(tc.relu(tc.linear(hidden, *self.mlp2)), *self.out_norm)


class MutualFusion:
    """
    Args:
        cfg (FusionConfig): mode, heads, depth and width
        visual_dim (int): width of h_v
        meta_dim (int): width of h_m
    """

    def __init__(self, cfg: FusionConfig, visual_dim: int, meta_dim: int, params: ModelParams,
                 rng: np.random.Generator, prefix: str = "fusion"):
        self.cfg = cfg.validate()
        self.blocks = [MutualAttentionBlock(f"{prefix}.block0", visual_dim, meta_dim, cfg, params, rng)]
        for i in range(1, cfg.stages):
            self.blocks.append(MutualAttentionBlock(
                f"{prefix}.block{i}", cfg.fused_dim, cfg.fused_dim, cfg, params, rng))

    def fuse(self, h_v: Tensor, h_m: Tensor, training: bool = False, rng: np.random.Generator | None = None,
             visual_tokens: Tensor | None = None, probs_out: list | None = None) -> Tensor:
        tokens = visual_tokens if self.cfg.token_level else None
        z = self.blocks[0](h_v, h_m, training, rng, a_tokens=tokens, probs_out=probs_out)
        for block in self.blocks[1:]:
            z = block(z, z, training, rng, probs_out=probs_out)
        return z


def modality_norms(h_v, h_m) -> tuple:
    """Euclidean norms of the two context vectors (row-wise for batches)."""
    v = h_v.data if isinstance(h_v, Tensor) else np.asarray(h_v, dtype=np.float64)
    m = h_m.data if isinstance(h_m, Tensor) else np.asarray(h_m, dtype=np.float64)
    norm_v = np.linalg.norm(v, axis=-1)
    norm_m = np.linalg.norm(m, axis=-1)
    if norm_v.ndim == 0:
        return float(norm_v), float(norm_m)
    return norm_v, norm_m
