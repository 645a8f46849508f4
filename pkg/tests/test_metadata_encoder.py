import numpy as np
import pytest

import tensor_core as tc
from errors import DimensionError, VocabularyError
from metadata_encoder import MetaConfig, MetadataEncoder
from parameters import ModelParams
from tensor_core import Tape, Tensor


@pytest.fixture
def encoder():
    params = ModelParams()
    return MetadataEncoder(MetaConfig(num_categories=4), params, np.random.default_rng(0)), params


def test_output_shape_and_sign(encoder):
    enc, _ = encoder
    h_m = enc.encode_meta(np.random.default_rng(1).normal(size=(5, 9)), np.array([0, 1, 2, 3, 0]))
    assert h_m.shape == (5, 256)
    assert np.all(h_m.data >= 0)


def test_embedding_init_scale(encoder):
    _, params = encoder
    table = params["meta.embedding"].data
    assert table.shape == (4, 32)
    assert abs(table.std() - 0.02) < 0.01


def test_category_out_of_range(encoder):
    enc, _ = encoder
    with pytest.raises(VocabularyError):
        enc.encode_meta(np.zeros((1, 9)), np.array([4]))


def test_wrong_feature_width(encoder):
    enc, _ = encoder
    with pytest.raises(DimensionError):
        enc.encode_meta(np.zeros((2, 8)), np.array([0, 1]))


def test_only_used_embedding_rows_get_gradient(encoder):
    enc, params = encoder
    features = Tensor(np.random.default_rng(2).normal(size=(2, 9)))
    with Tape() as tape:
        loss = tc.sum_(enc.encode_meta(features, np.array([1, 1])))
    tape.backward(loss)
    grad = params["meta.embedding"].grad
    assert np.all(grad[[0, 2, 3]] == 0)
    assert np.any(grad[1] != 0)


def test_branches_are_isolated(encoder):
    enc, params = encoder
    rng = np.random.default_rng(8)
    features = rng.normal(size=(4, 9))
    other_features = rng.normal(size=(4, 9))
    categories, other_categories = np.array([0, 1, 2, 3]), np.array([3, 3, 0, 1])

    np.testing.assert_array_equal(enc.numeric_branch(features).data, enc.numeric_branch(features.copy()).data)
    np.testing.assert_array_equal(enc.category_branch(categories).data, enc.category_branch(categories.copy()).data)
    h_a = enc.encode_meta(features, categories).data
    h_b = enc.encode_meta(features, other_categories).data
    h_c = enc.encode_meta(other_features, categories).data
    assert not np.array_equal(h_a, h_b)
    assert not np.array_equal(h_a, h_c)

    with Tape() as tape:
        loss = tc.sum_(tc.mul(enc.category_branch(categories), rng.normal(size=(4, 32))))
    tape.backward(loss)
    touched = {name for name, t in params.items() if t.grad is not None and np.any(t.grad != 0)}
    assert touched == {"meta.embedding"}

    params.zero_grad()
    with Tape() as tape:
        e_n = enc.numeric_branch(features)
        loss = tc.sum_(tc.mul(e_n, rng.normal(size=e_n.shape)))
    tape.backward(loss)
    touched = {name for name, t in params.items() if t.grad is not None and np.any(t.grad != 0)}
    assert touched and all(name.startswith("meta.mlp") for name in touched)
