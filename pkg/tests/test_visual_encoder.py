import numpy as np
import pytest

from errors import ConfigError, DimensionError
from parameters import ModelParams
from tensor_core import LN_EPS, Tape, Tensor
import tensor_core as tc
from visual_encoder import AttentionWeights, ViTConfig, VisualEncoder, multi_head_attention

TINY = ViTConfig(image_side=16, patch_side=8, embed_dim=8, layers=2, heads=2, mlp_ratio=2)


def _encoder(cfg=TINY, seed=0):
    params = ModelParams()
    return VisualEncoder(cfg, params, np.random.default_rng(seed)), params


def test_config_geometry():
    assert TINY.num_patches == 4
    assert TINY.patch_dim == 192


@pytest.mark.parametrize("kwargs", [
    {"image_side": 32, "patch_side": 5},
    {"embed_dim": 10, "heads": 4},
    {"dropout_p": 1.0},
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        ViTConfig(**kwargs).validate()


def test_token_sequence_shape():
    encoder, _ = _encoder()
    images = np.random.default_rng(1).random((3, 16, 16, 3))
    assert encoder.patch_embed(images).shape == (3, 5, 8)
    assert encoder.encode_tokens(images).shape == (3, 5, 8)
    assert encoder.encode(images).shape == (3, 8)


def test_class_row_is_layer_normed():
    encoder, _ = _encoder()
    h_v = encoder.encode(np.random.default_rng(2).random((2, 16, 16, 3)))
    np.testing.assert_allclose(h_v.data.mean(axis=-1), 0.0, atol=1e-8)


def test_wrong_image_shape():
    encoder, _ = _encoder()
    with pytest.raises(DimensionError):
        encoder.encode(np.zeros((1, 32, 32, 3)))


def test_same_seed_same_weights():
    _, a = _encoder(seed=4)
    _, b = _encoder(seed=4)
    assert a.digest() == b.digest()


def test_attention_probabilities_are_distributions():
    params = ModelParams()
    rng = np.random.default_rng(0)
    w = AttentionWeights.register(params, "attn", 6, 6, 8, 6, "visual", rng)
    probs = []
    out = multi_head_attention(Tensor(rng.normal(size=(2, 3, 6))), Tensor(rng.normal(size=(2, 5, 6))),
                               w, heads=2, probs_out=probs)
    assert out.shape == (2, 3, 6)
    assert probs[0].shape == (2, 2, 3, 5)
    np.testing.assert_allclose(probs[0].sum(axis=-1), 1.0)


def test_attention_heads_must_divide_width():
    params = ModelParams()
    w = AttentionWeights.register(params, "attn", 6, 6, 8, 6, "visual", np.random.default_rng(0))
    with pytest.raises(ConfigError):
        multi_head_attention(Tensor(np.ones((1, 1, 6))), Tensor(np.ones((1, 1, 6))), w, heads=3)


def test_every_parameter_receives_gradient():
    encoder, params = _encoder()
    images = np.random.default_rng(3).random((2, 16, 16, 3))
    with Tape() as tape:
        loss = tc.sum_(tc.mul(encoder.encode(images), np.random.default_rng(4).normal(size=(2, 8))))
    tape.backward(loss)
    missing = [name for name, t in params.items() if t.grad is None]
    assert missing == []


def _swap_patches(images):
    out = images.copy()
    out[:, :8, :8], out[:, 8:, 8:] = images[:, 8:, 8:], images[:, :8, :8]
    out[:, :8, 8:], out[:, 8:, :8] = images[:, 8:, :8], images[:, :8, 8:]
    return out


def test_without_positions_patch_order_does_not_matter():
    encoder, _ = _encoder()
    encoder.pos_embed.data[:] = 0.0
    images = np.random.default_rng(5).random((2, 16, 16, 3))
    permuted = _swap_patches(images)
    assert not np.array_equal(encoder.patch_embed(images).data, encoder.patch_embed(permuted).data)
    np.testing.assert_allclose(encoder.encode(permuted).data, encoder.encode(images).data, atol=1e-10)


def test_positions_make_patch_order_matter():
    encoder, _ = _encoder()
    images = np.random.default_rng(5).random((2, 16, 16, 3))
    assert not np.allclose(encoder.encode(_swap_patches(images)).data, encoder.encode(images).data)


def test_zero_output_maps_make_blocks_identity():
    encoder, _ = _encoder()
    for layer in encoder.layers:
        for t in (*layer.attn.o, *layer.fc2):
            t.data[:] = 0.0
    z = encoder.patch_embed(np.random.default_rng(6).random((2, 16, 16, 3)))
    for layer in encoder.layers:
        np.testing.assert_array_equal(encoder.encoder_block(z, layer).data, z.data)


def test_no_layers_reduces_to_normed_class_token():
    cfg = ViTConfig(image_side=16, patch_side=8, embed_dim=8, layers=0, heads=2, mlp_ratio=2)
    encoder, _ = _encoder(cfg)
    h_v = encoder.encode(np.random.default_rng(7).random((3, 16, 16, 3)))
    row = encoder.cls_token.data + encoder.pos_embed.data[0]
    expected = (row - row.mean()) / np.sqrt(row.var() + LN_EPS)
    for b in range(3):
        np.testing.assert_allclose(h_v.data[b], expected, atol=1e-12)


def test_zero_image_and_embeddings_leave_positions():
    encoder, _ = _encoder()
    encoder.patch_proj.data[:] = 0.0
    encoder.cls_token.data[:] = 0.0
    tokens = encoder.patch_embed(np.zeros((2, 16, 16, 3)))
    for b in range(2):
        np.testing.assert_array_equal(tokens.data[b], encoder.pos_embed.data)
