import math

import numpy as np
import pytest

from errors import ConfigError, DomainError
from parameters import ModelParams
from tensor_core import Tape, Tensor
from weight_head import HeadConfig, WeightHead, loss_fn, mae_loss, mse, msle


def test_msle_identity():
    assert msle([math.e - 1.0], [0.0]).item() == pytest.approx(1.0)
    assert msle([5.0, 7.0], [5.0, 7.0]).item() == 0.0


def test_msle_rejects_negative_inputs():
    with pytest.raises(DomainError):
        msle([-0.5], [1.0])
    with pytest.raises(DomainError):
        msle([1.0], [-2.0])


def test_mse_and_l1():
    assert mse([3.0, -3.0], [0.0, 0.0]).item() == pytest.approx(9.0)
    assert mae_loss([3.0, -3.0], [0.0, 0.0]).item() == pytest.approx(3.0)


def test_loss_lookup():
    assert loss_fn("l1") is mae_loss
    with pytest.raises(ConfigError):
        loss_fn("huber")


def test_msle_gradient():
    y_hat = Tensor([math.e - 1.0], requires_grad=True)
    with Tape() as tape:
        loss = msle(y_hat, [0.0])
    tape.backward(loss)
    # d/dx (ln(1+x))^2 = 2 ln(1+x) / (1+x)
    assert y_hat.grad[0] == pytest.approx(2.0 / math.e)


def test_head_starts_near_output_scale():
    params = ModelParams()
    head = WeightHead(HeadConfig(hidden=(8, 4)), 6, params, np.random.default_rng(0))
    assert np.all(params["head.fc3.bias"].data == 1.0)
    out = head.predict_head(Tensor(np.zeros((5, 6))), output_scale=250.0)
    assert out.shape == (5,)
    assert np.all(out.data >= 0)
    # zero input: every gelu output is 0, only b3 survives
    np.testing.assert_allclose(out.data, 250.0)


def test_head_config_validation():
    with pytest.raises(ConfigError):
        HeadConfig(hidden=(8,)).validate()
    with pytest.raises(ConfigError):
        HeadConfig(dropout_p=-0.1).validate()


def test_msle_equals_mse_of_log1p():
    rng = np.random.default_rng(0)
    y_hat, y = rng.uniform(0.0, 3000.0, size=64), rng.uniform(0.0, 3000.0, size=64)
    assert msle(y_hat, y).item() == pytest.approx(mse(np.log1p(y_hat), np.log1p(y)).item(), rel=1e-12)


def test_msle_is_nearly_scale_invariant():
    values = [msle([1.1 * y], [y]).item() for y in (100.0, 1000.0, 3000.0)]
    assert (max(values) - min(values)) / max(values) < 0.05
