"""
Metadata encoder: category embedding + bottleneck MLP over the standardized
physics features, merged into h_m by a ReLU projection.
"""

from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from errors import ConfigError, DimensionError, VocabularyError
from parameters import ModelParams, normal_init
from physics_features import SELECTED_FEATURES
from tensor_core import Tensor


@dataclass
class MetaConfig:
    num_categories: int = 11
    embed_dim: int = 32
    hidden: tuple = (128, 64, 32)
    out_dim: int = 256

    def validate(self) -> "MetaConfig":
        if self.num_categories < 1:
            raise ConfigError("The metadata encoder needs at least one category")
        if not self.hidden or min(self.hidden) < 1 or self.out_dim < 1 or self.embed_dim < 1:
            raise ConfigError("Metadata encoder widths must be positive")
        return self


class MetadataEncoder:
    group = "meta"

    def __init__(self, cfg: MetaConfig, params: ModelParams, rng: np.random.Generator, prefix: str = "meta"):
        self.cfg = cfg.validate()
        self.embedding = params.add(f"{prefix}.embedding",
                                    normal_init(rng, (cfg.num_categories, cfg.embed_dim)), self.group)
        widths = (len(SELECTED_FEATURES),) + tuple(cfg.hidden)
        self.mlp = [params.linear(f"{prefix}.mlp{i}", widths[i], widths[i + 1], self.group, rng)
                    for i in range(len(cfg.hidden))]
        self.fuse = params.linear(f"{prefix}.fuse", cfg.embed_dim + cfg.hidden[-1], cfg.out_dim, self.group, rng)

    def category_branch(self, categories: np.ndarray) -> Tensor:
        categories = np.asarray(categories, dtype=np.int64).reshape(-1)
        bad = categories[(categories < 0) | (categories >= self.cfg.num_categories)]
        if bad.size:
            raise VocabularyError(
                f"Category index {int(bad[0])} is outside [0, {self.cfg.num_categories})")
        return tc.take_rows(self.embedding, categories)

    def numeric_branch(self, features) -> Tensor:
        x = tc.as_tensor(features)
        if x.ndim != 2 or x.shape[1] != len(SELECTED_FEATURES):
            raise DimensionError(f"Expected (B, {len(SELECTED_FEATURES)}) features, got {x.shape}")
        for weight, bias in self.mlp:
            x = tc.gelu(tc.linear(x, weight, bias))
        return x

    def encode_meta(self, features, categories: np.ndarray) -> Tensor:
        """
        h_m = ReLU(W_f [e_c; e_n] + b_f).

        Args:
            features: standardized (B, 9) features, array or Tensor
            categories (np.ndarray): (B,) 0-based category indices

        Returns:
            Tensor: (B, out_dim), entries >= 0
        """
        e_c = self.category_branch(categories)
        e_n = self.numeric_branch(features)
        if e_c.shape[0] != e_n.shape[0]:
            raise DimensionError(f"{e_c.shape[0]} categories for {e_n.shape[0]} feature rows")
        return tc.relu(tc.linear(tc.concat([e_c, e_n], axis=-1), *self.fuse))
