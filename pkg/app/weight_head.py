"""
Regression head and training losses.
"""

from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from errors import ConfigError, DomainError
from parameters import ModelParams
from tensor_core import Tensor

LOSSES = ("msle", "mse", "l1")


@dataclass
class HeadConfig:
    hidden: tuple = (128, 64)
    dropout_p: float = 0.1
    # regress ln(1 + y) and invert with expm1 instead of predicting kg directly
    log_target: bool = False

    def validate(self) -> "HeadConfig":
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError(f"head.hidden must hold two positive widths, got {self.hidden}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"head.dropout_p must be in [0, 1), got {self.dropout_p}")
        return self


class WeightHead:
    """
    y_hat = ReLU(scale * (W3 gelu(W2 Dropout(gelu(W1 z))) + b3)).

    b3 starts at 1, so with `scale` set to the mean training target the
    first predictions sit near that mean.
    """

    group = "head"

    def __init__(self, cfg: HeadConfig, in_dim: int, params: ModelParams, rng: np.random.Generator,
                 prefix: str = "head"):
        self.cfg = cfg.validate()
        h1, h2 = cfg.hidden
        self.fc1 = params.linear(f"{prefix}.fc1", in_dim, h1, self.group, rng)
        self.fc2 = params.linear(f"{prefix}.fc2", h1, h2, self.group, rng)
        self.fc3 = params.linear(f"{prefix}.fc3", h2, 1, self.group, rng)
        self.fc3[1].data[:] = 1.0

    def predict_head(self, z: Tensor, output_scale: float = 1.0, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        """(B, in_dim) -> (B,) non-negative outputs."""
        x = tc.gelu(tc.linear(z, *self.fc1))
        x = tc.dropout(x, self.cfg.dropout_p, rng, training)
        x = tc.gelu(tc.linear(x, *self.fc2))
        out = tc.scale(tc.linear(x, *self.fc3), output_scale)
        return tc.relu(tc.reshape(out, (z.shape[0],)))


def _check_non_negative(name: str, values: np.ndarray) -> None:
    if np.any(values < 0):
        raise DomainError(f"msle needs non-negative {name}, got min {values.min():.6g}")


def msle(y_hat, y) -> Tensor:
    """mean((ln(1 + y_hat) - ln(1 + y))^2)"""
    y_hat, y = tc.as_tensor(y_hat), tc.as_tensor(y)
    _check_non_negative("predictions", y_hat.data)
    _check_non_negative("targets", y.data)
    return tc.mean(tc.square(tc.sub(tc.ln1p(y_hat), tc.ln1p(y))))


def mse(y_hat, y) -> Tensor:
    return tc.mean(tc.square(tc.sub(tc.as_tensor(y_hat), tc.as_tensor(y))))


def mae_loss(y_hat, y) -> Tensor:
    return tc.mean(tc.absolute(tc.sub(tc.as_tensor(y_hat), tc.as_tensor(y))))


def loss_fn(name: str):
    try:
        return {"msle": msle, "mse": mse, "l1": mae_loss}[name]
    except KeyError:
        raise ConfigError(f"Unknown loss '{name}' (expected one of {', '.join(LOSSES)})") from None
