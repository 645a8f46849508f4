import numpy as np
import pytest

from errors import ContractError
from parameters import ModelParams


@pytest.fixture
def params():
    p = ModelParams()
    rng = np.random.default_rng(0)
    p.linear("visual.proj", 4, 3, "visual", rng)
    p.linear("head.fc", 3, 1, "head", rng)
    return p


def test_linear_registers_weight_and_zero_bias(params):
    assert params["visual.proj.weight"].shape == (4, 3)
    np.testing.assert_array_equal(params["visual.proj.bias"].data, np.zeros(3))
    assert np.all(np.abs(params["visual.proj.weight"].data) <= 0.5)


def test_duplicate_and_unknown_names(params):
    with pytest.raises(ContractError):
        params.add("head.fc.bias", np.zeros(1), "head")
    with pytest.raises(ContractError):
        params["missing"]
    with pytest.raises(ContractError):
        params.add("x", np.zeros(1), "decoder")


def test_freezing_a_group(params):
    params.set_trainable("visual", False)
    assert not params.is_trainable("visual")
    names = [n for n, _ in params.trainable()]
    assert names == ["head.fc.weight", "head.fc.bias"]
    params.set_trainable("visual", True)
    assert params["visual.proj.weight"].requires_grad


def test_digest_tracks_group_contents(params):
    before = params.digest("visual")
    params["head.fc.weight"].data += 1.0
    assert params.digest("visual") == before
    params["visual.proj.weight"].data[0, 0] += 1e-12
    assert params.digest("visual") != before


def test_load_checks_shapes(params):
    arrays = params.arrays()
    arrays["head.fc.weight"] = np.zeros((2, 2))
    with pytest.raises(ContractError, match="head.fc.weight"):
        params.load(arrays)
    with pytest.raises(ContractError, match="missing"):
        params.load({})


def test_swapped_restores_weights(params):
    original = params.arrays()
    shadow = {k: np.zeros_like(v) for k, v in original.items()}
    with params.swapped(shadow):
        assert np.all(params["visual.proj.weight"].data == 0)
    np.testing.assert_array_equal(params["visual.proj.weight"].data, original["visual.proj.weight"])


def test_count(params):
    assert params.count() == 4 * 3 + 3 + 3 + 1
    assert params.count("head") == 4
