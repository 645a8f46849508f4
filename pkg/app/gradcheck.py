"""
Central finite-difference checks of every differentiable operation and
model component against the tape's analytic gradients.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

import tensor_core as tc
from metadata_encoder import MetaConfig, MetadataEncoder
from mutual_fusion import FusionConfig, MutualFusion
from parameters import ModelParams
from tensor_core import Tape, Tensor
from visual_encoder import AttentionWeights, ViTConfig, VisualEncoder, multi_head_attention
from weight_head import HeadConfig, WeightHead, mae_loss, mse, msle

logger = logging.getLogger(__name__)

REL_TOL = 1e-4
ABS_FLOOR = 1e-9
SKIP_BELOW = 1e-8
# one-sided slopes disagreeing by more than this fraction mark a ReLU/abs kink
KINK_TOL = 1e-2

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


@dataclass
class GradcheckRow:
    op: str
    seeds: int
    max_rel_error: float
    passed: bool
    checked: int = 0
    skipped: int = 0


def numeric_gradient(fn: Callable[[], float], tensor: Tensor, index: tuple, h: float = 1e-5) -> tuple[float, bool]:
    """
    Central difference of fn along one coordinate of `tensor`.

    Returns:
        (derivative, at_kink)
    """
    original = tensor.data[index]
    base = fn()
    tensor.data[index] = original + h
    plus = fn()
    tensor.data[index] = original - h
    minus = fn()
    tensor.data[index] = original
    left, right = (base - minus) / h, (plus - base) / h
    kink = abs(left - right) > KINK_TOL * max(abs(left), abs(right)) + 1e-6
    return (plus - minus) / (2.0 * h), kink


def _relative_error(a: float, n: float) -> float | None:
    if abs(a) + abs(n) <= SKIP_BELOW:
        return None
    diff = abs(a - n)
    if diff <= ABS_FLOOR:
        return 0.0
    return diff / max(abs(a), abs(n))


def check_case(name: str, build: Case, seeds: int = 20, h: float = 1e-5) -> GradcheckRow:
    """
    Compare analytic and numeric gradients of sum(R * forward()) for a fixed random R,
    at every coordinate of every input tensor.
    """
    worst, checked, skipped = 0.0, 0, 0
    for seed in range(seeds):
        rng = np.random.default_rng([seed, 97])
        forward, tensors = build(rng)
        for t in tensors:
            t.requires_grad = True
            t.grad = None
        weights = rng.normal(size=forward().shape)

        with Tape() as tape:
            loss = tc.sum_(tc.mul(forward(), weights))
        tape.backward(loss)

        def value() -> float:
            return float(np.sum(forward().data * weights))

        for t in tensors:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            for index in np.ndindex(t.shape):
                numeric, kink = numeric_gradient(value, t, index, h)
                if kink:
                    skipped += 1
                    continue
                err = _relative_error(float(analytic[index]), numeric)
                if err is None:
                    skipped += 1
                    continue
                checked += 1
                worst = max(worst, err)
    return GradcheckRow(name, seeds, worst, worst < REL_TOL, checked, skipped)


def _away_from_zero(rng: np.random.Generator, shape: tuple, margin: float = 0.1) -> np.ndarray:
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _binary(op):
    def build(rng):
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4,)))
        return (lambda: op(a, b)), [a, b]
    return build


def _unary(op, sampler=None):
    def build(rng):
        x = Tensor(sampler(rng) if sampler else rng.normal(size=(3, 5)))
        return (lambda: op(x)), [x]
    return build


def _matmul(rng):
    a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 5)))
    return (lambda: tc.matmul(a, b)), [a, b]


def _matmul_batched(rng):
    a, b = Tensor(rng.normal(size=(2, 3, 4))), Tensor(rng.normal(size=(2, 4, 5)))
    return (lambda: tc.matmul(a, b)), [a, b]


def _layer_norm(rng):
    x, g, b = Tensor(rng.normal(size=(3, 6))), Tensor(rng.normal(size=(6,))), Tensor(rng.normal(size=(6,)))
    return (lambda: tc.layer_norm(x, g, b)), [x, g, b]


def _params_list(params: ModelParams) -> list[Tensor]:
    return [t for _, t in params.items()]


def _attention(rng):
    params = ModelParams()
    w = AttentionWeights.register(params, "attn", 8, 6, 8, 8, "fusion", rng)
    q, kv = Tensor(rng.normal(size=(2, 3, 8))), Tensor(rng.normal(size=(2, 4, 6)))
    return (lambda: multi_head_attention(q, kv, w, 2)), [q, kv] + _params_list(params)


def _vit_block(rng):
    params = ModelParams()
    encoder = VisualEncoder(ViTConfig(image_side=8, patch_side=4, embed_dim=8, layers=1, heads=2, mlp_ratio=2),
                            params, rng)
    images = rng.uniform(-1.0, 1.0, size=(2, 8, 8, 3))
    return (lambda: encoder.encode_tokens(images)), _params_list(params)


def _metadata_mlp(rng):
    params = ModelParams()
    encoder = MetadataEncoder(MetaConfig(num_categories=4), params, rng)
    features = Tensor(rng.normal(size=(3, 9)))
    categories = np.array([0, 2, 2])
    return (lambda: encoder.encode_meta(features, categories)), [features] + _params_list(params)


def _fusion(mode: str):
    def build(rng):
        params = ModelParams()
        fusion = MutualFusion(FusionConfig(mode=mode, heads=2, stages=2, fused_dim=8, dropout_p=0.1),
                              6, 5, params, rng)
        h_v, h_m = Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(2, 5)))
        return (lambda: fusion.fuse(h_v, h_m)), [h_v, h_m] + _params_list(params)
    return build


def _head(rng):
    params = ModelParams()
    head = WeightHead(HeadConfig(hidden=(8, 6)), 10, params, rng)
    z = Tensor(rng.normal(size=(4, 10)))
    return (lambda: head.predict_head(z, output_scale=2.0)), [z] + _params_list(params)


def _loss(fn, positive: bool = False):
    def build(rng):
        y = rng.uniform(1.0, 50.0, size=6)
        offset = _away_from_zero(rng, (6,), 0.5)
        y_hat = Tensor(np.abs(y + offset) if positive else y + offset)
        return (lambda: fn(y_hat, y)), [y_hat]
    return build


CASES: dict[str, Case] = {
    "matmul": _matmul,
    "matmul_batched": _matmul_batched,
    "add_broadcast": _binary(tc.add),
    "sub_broadcast": _binary(tc.sub),
    "mul_broadcast": _binary(tc.mul),
    "relu": _unary(tc.relu, lambda rng: _away_from_zero(rng, (3, 5))),
    "gelu": _unary(tc.gelu),
    "exp": _unary(tc.exp),
    "ln1p": _unary(tc.ln1p, lambda rng: rng.uniform(-0.5, 3.0, size=(3, 5))),
    "abs": _unary(tc.absolute, lambda rng: _away_from_zero(rng, (3, 5))),
    "softmax": _unary(tc.softmax_lastdim),
    "layer_norm": _layer_norm,
    "attention_block": _attention,
    "vit_block": _vit_block,
    "metadata_mlp": _metadata_mlp,
    "fusion_mutual": _fusion("mutual"),
    "fusion_v2m": _fusion("v2m"),
    "fusion_m2v": _fusion("m2v"),
    "fusion_concat": _fusion("concat"),
    "head": _head,
    "msle": _loss(msle, positive=True),
    "mse": _loss(mse),
    "l1": _loss(mae_loss),
}


def run_suite(seeds: int = 20, cases: list[str] | None = None) -> list[GradcheckRow]:
    rows = []
    start = time.perf_counter()
    for name in cases or list(CASES):
        row = check_case(name, CASES[name], seeds)
        logger.debug("gradcheck %s: max rel error %.3e over %d coordinates", name, row.max_rel_error, row.checked)
        rows.append(row)
    logger.info("Gradient check finished in %.1fs", time.perf_counter() - start)
    return rows
