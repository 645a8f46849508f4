"""
AdamW with decoupled weight decay, global-norm gradient clipping, cosine
annealing with warm restarts and EMA shadow parameters.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from errors import ContractError, NumericError
from parameters import GROUPS, ModelParams

logger = logging.getLogger(__name__)

BACKBONE_GROUP = "visual"


def adamw_step(theta: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, lr: float,
               weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One AdamW update of a single array; t is the 1-based step count.

    The decay term lr * wd * theta is applied to the parameter directly,
    never folded into the gradient moments.

    Returns:
        (theta, m, v) after the step
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    theta = theta - lr * weight_decay * theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta, m, v


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scales the grads in place when their joint L2 norm exceeds max_norm; returns the norm before clipping."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for name in grads:
            grads[name] = grads[name] * factor
    return total


class AdamW:
    def __init__(self, params: ModelParams, weight_decay: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = 1.0):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        # per-parameter step counts: the backbone joins late and keeps its own bias correction
        self.steps: dict[str, int] = {}
        self.step_count = 0
        self.last_grad_norm = 0.0

    def step(self, lrs: dict[str, float]) -> None:
        """
        Update every trainable parameter that received a gradient.

        Args:
            lrs (dict): learning rate per parameter group

        Raises:
            NumericError: a gradient holds NaN or Inf (names the parameter)
        """
        grads = {}
        for name, tensor in self.params.trainable():
            if tensor.grad is None:
                continue
            if not np.all(np.isfinite(tensor.grad)):
                raise NumericError(f"Non-finite gradient in parameter '{name}'")
            grads[name] = tensor.grad
        self.last_grad_norm = clip_by_global_norm(grads, self.clip_norm or 0.0)

        for name, grad in grads.items():
            tensor = self.params[name]
            lr = lrs.get(self.params.group_of(name), 0.0)
            t = self.steps.get(name, 0) + 1
            m = self.m.get(name, np.zeros_like(tensor.data))
            v = self.v.get(name, np.zeros_like(tensor.data))
            if m.shape != tensor.shape:
                raise ContractError(f"Optimizer moments for '{name}' have shape {m.shape}, parameter {tensor.shape}")
            tensor.data, self.m[name], self.v[name] = adamw_step(
                tensor.data, grad, m, v, t, lr, self.weight_decay, self.beta1, self.beta2, self.eps)
            self.steps[name] = t
        self.step_count += 1

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def state_meta(self) -> dict:
        return {"step_count": self.step_count, "steps": dict(self.steps)}

    def load_state(self, meta: dict, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(meta.get("step_count", 0))
        self.steps = {k: int(v) for k, v in meta.get("steps", {}).items()}
        self.m, self.v = {}, {}
        for key, value in arrays.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m."):]] = value.copy()
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v."):]] = value.copy()
        for name in self.m:
            if name not in self.params or self.m[name].shape != self.params[name].shape:
                raise ContractError(f"Optimizer state for '{name}' does not match the model")


def cosine_annealing(t: float, period: float, lr_max: float, lr_min: float = 0.0) -> float:
    """lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2"""
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / period))


def restart_position(epoch: int, period: int, mult: float = 1.0) -> tuple[int, float]:
    """(epoch within the current restart cycle, current cycle length)."""
    t, length = epoch, float(period)
    while t >= length:
        t -= length
        length *= mult
    return t, length


@dataclass
class ScheduleSettings:
    lr_head: float = 1e-3
    lr_backbone: float = 1e-4
    lr_min: float = 0.0
    restart_period: int = 40
    restart_mult: float = 1.0
    warmup_epochs: int = 10


def schedule_lr(epoch: int, s: ScheduleSettings) -> dict[str, float]:
    """
    Per-group learning rates for a 0-based global epoch.

    The backbone group receives 0 during the warm-up phase.
    """
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    t, length = restart_position(epoch, s.restart_period, s.restart_mult)
    head = cosine_annealing(t, length, s.lr_head, s.lr_min)
    backbone = 0.0 if epoch < s.warmup_epochs else cosine_annealing(t, length, s.lr_backbone, s.lr_min)
    return {group: (backbone if group == BACKBONE_GROUP else head) for group in GROUPS}


def ema_update(shadow: dict[str, np.ndarray], params: dict[str, np.ndarray], decay: float) -> dict[str, np.ndarray]:
    """shadow <- decay * shadow + (1 - decay) * param, for every entry."""
    if set(shadow) != set(params):
        raise ContractError("EMA shadow and parameters hold different names")
    out = {}
    for name, value in params.items():
        if shadow[name].shape != value.shape:
            raise ContractError(f"EMA shape drift for '{name}': {shadow[name].shape} vs {value.shape}")
        out[name] = decay * shadow[name] + (1.0 - decay) * value
    return out


@dataclass
class ExponentialMovingAverage:
    decay: float = 0.999
    warmup: bool = False
    shadow: dict = field(default_factory=dict)
    updates: int = 0

    @classmethod
    def track(cls, params: ModelParams, decay: float, warmup: bool = False) -> "ExponentialMovingAverage":
        return cls(decay=decay, warmup=warmup, shadow=params.arrays())

    def effective_decay(self) -> float:
        if not self.warmup:
            return self.decay
        return min(self.decay, (1.0 + self.updates) / (10.0 + self.updates))

    def update(self, params: ModelParams) -> None:
        self.shadow = ema_update(self.shadow, params.arrays(), self.effective_decay())
        self.updates += 1
