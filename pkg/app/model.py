"""
The multimodal weight predictor: visual encoder + metadata encoder +
mutual fusion + regression head over one parameter store.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

import tensor_core as tc
from errors import ContractError
from image_ops import normalize_pixels
from metadata_encoder import MetaConfig, MetadataEncoder
from mutual_fusion import FusionConfig, MutualFusion
from parameters import ModelParams
from physics_features import Standardizer, target_log, target_log_inverse, transform_matrix
from tensor_core import Tensor
from visual_encoder import ViTConfig, VisualEncoder
from weight_head import HeadConfig, WeightHead, loss_fn, mse

logger = logging.getLogger(__name__)


@dataclass
class ForwardResult:
    raw: Tensor
    h_v: Tensor
    h_m: Tensor


@dataclass
class ModelConfig:
    vit: ViTConfig = field(default_factory=ViTConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    head: HeadConfig = field(default_factory=HeadConfig)


class MultimodalWeightPredictor:
    """
    Args:
        cfg (ModelConfig): component configurations
        seed (int): initialisation seed

    The standardizer and output scale are fitted on the training split and
    travel with the parameters in checkpoints.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ModelParams()
        rng = np.random.default_rng(seed)
        self.visual = VisualEncoder(cfg.vit, self.params, rng)
        self.meta = MetadataEncoder(cfg.meta, self.params, rng)
        self.fusion = MutualFusion(cfg.fusion, cfg.vit.embed_dim, cfg.meta.out_dim, self.params, rng)
        self.head = WeightHead(cfg.head, cfg.fusion.fused_dim, self.params, rng)
        self.standardizer: Standardizer | None = None
        self.output_scale = 1.0

    @property
    def log_target(self) -> bool:
        return self.cfg.head.log_target

    def fit_output_scale(self, train_weights: np.ndarray) -> float:
        """
        Scale the head so the untrained model predicts the constant with the
        lowest MSLE on the training weights: the mean of ln(1 + y), mapped back
        to kg unless the head regresses the log target.
        """
        log_mean = float(np.mean(target_log(np.asarray(train_weights, dtype=np.float64))))
        self.output_scale = log_mean if self.log_target else float(target_log_inverse(log_mean))
        if self.output_scale <= 0:
            self.output_scale = 1.0
        return self.output_scale

    def standardize(self, raw_features: np.ndarray) -> np.ndarray:
        if self.standardizer is None:
            raise ContractError("The model has no fitted standardizer")
        return transform_matrix(self.standardizer, raw_features)

    def encode_visual(self, images: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Returns (h_v, final-LN token sequence)."""
        tokens = self.visual.encode_tokens(normalize_pixels(images), training, rng)
        return tc.take(tokens, 0, axis=1), tokens

    def predict_from_visual(self, h_v: Tensor, tokens: Tensor | None, features, categories: np.ndarray,
                            training: bool = False, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Head output for already-encoded images; returns (raw, h_m)."""
        h_m = self.meta.encode_meta(features, categories)
        z = self.fusion.fuse(h_v, h_m, training, rng, visual_tokens=tokens)
        return self.head.predict_head(z, self.output_scale, training, rng), h_m

    def forward(self, images: np.ndarray, features, categories: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> ForwardResult:
        """
        Args:
            images (np.ndarray): (B, S, S, 3) pixels in [0, 1]
            features: (B, 9) standardized features
            categories (np.ndarray): (B,) 0-based indices

        Returns:
            ForwardResult: raw head output (kg, or ln(1 + kg) in log-target mode), h_v, h_m
        """
        h_v, tokens = self.encode_visual(images, training, rng)
        raw, h_m = self.predict_from_visual(h_v, tokens, features, categories, training, rng)
        return ForwardResult(raw, h_v, h_m)

    def to_weight(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        return np.expm1(raw) if self.log_target else raw

    def loss(self, raw: Tensor, weights: np.ndarray, name: str) -> Tensor:
        """Training loss; in log-target mode it compares ln(1 + y) targets directly."""
        if self.log_target:
            target = target_log(weights)
            return mse(raw, target) if name == "msle" else loss_fn(name)(raw, target)
        return loss_fn(name)(raw, weights)

    def predict(self, images: np.ndarray, features: np.ndarray, categories: np.ndarray,
                batch_size: int = 64) -> np.ndarray:
        """Evaluation-mode weights in kg for standardized features, without a tape."""
        out = []
        for start in range(0, len(images), batch_size):
            stop = start + batch_size
            result = self.forward(images[start:stop], features[start:stop], categories[start:stop])
            out.append(self.to_weight(result.raw.data))
        return np.concatenate(out) if out else np.zeros(0)
