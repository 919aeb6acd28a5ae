"""Projected gradient descent attacks under l-inf and l2 budgets"""

import logging
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ValidationError
from ..utils.config import ATTACK_PRESETS
from .model import Objective, ToyModel, as_batch, input_grad

logger = logging.getLogger(__name__)


class Norm(str, Enum):
    LINF = "linf"
    L2 = "l2"


class AttackConfig(BaseModel):
    """Budget epsilon, step size alpha and T iterations"""
    model_config = ConfigDict(frozen=True)

    norm: Norm = Norm.LINF
    epsilon: float = Field(default=8 / 255, ge=0.0, allow_inf_nan=False)
    step_size: float = Field(default=2 / 255, gt=0.0, allow_inf_nan=False)
    iterations: int = Field(default=10, ge=1, le=1000)
    random_start: bool = False

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "AttackConfig":
        if name not in ATTACK_PRESETS:
            raise ValidationError(f"unknown attack preset '{name}', expected one of {sorted(ATTACK_PRESETS)}")
        return cls(**{**ATTACK_PRESETS[name], **overrides})


def project(x_adv: np.ndarray, x: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Onto the epsilon-ball around x, then onto [0, 1]^d"""
    if Norm(cfg.norm) == Norm.LINF:
        x_adv = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
    else:
        delta = x_adv - x
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        scale = np.minimum(1.0, cfg.epsilon / np.maximum(norms, np.finfo(np.float64).tiny))
        x_adv = x + delta * scale
    return np.clip(x_adv, 0.0, 1.0)


def random_start_point(x: np.ndarray, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the epsilon-ball around each row"""
    if Norm(cfg.norm) == Norm.LINF:
        return x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    direction = rng.standard_normal(x.shape)
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), np.finfo(np.float64).tiny)
    radius = cfg.epsilon * rng.uniform(0.0, 1.0, size=(x.shape[0], 1)) ** (1.0 / x.shape[1])
    return x + direction * radius


def pgd_attack(
    model: ToyModel,
    x,
    y,
    cfg: AttackConfig,
    rng: Optional[np.random.Generator] = None,
    objective: Objective = Objective.CE,
    reference: Optional[np.ndarray] = None,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Adversarial inputs within the budget around x.

    Each step moves by alpha * sign(grad) (l-inf) or alpha * grad / ||grad||
    (l2; rows with a zero gradient stay put) and is projected back. `init`
    overrides the starting point; it is projected before the first step.
    """
    single = np.ndim(x) == 1
    batch = as_batch(model, x)
    if batch.size and (batch.min() < 0.0 or batch.max() > 1.0):
        raise ValidationError("attack inputs must lie in [0, 1]")
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if labels.shape[0] != batch.shape[0]:
        raise ValidationError(f"{labels.shape[0]} labels for {batch.shape[0]} inputs")
    if cfg.epsilon == 0.0:
        return batch[0].copy() if single else batch.copy()

    if init is not None:
        x_adv = np.array(np.atleast_2d(init), dtype=np.float64)
    elif cfg.random_start:
        x_adv = random_start_point(batch, cfg, rng if rng is not None else np.random.default_rng(0))
    else:
        x_adv = batch.copy()
    x_adv = project(x_adv, batch, cfg)

    for _ in range(cfg.iterations):
        grad = input_grad(model, x_adv, labels, objective, reference)
        if Norm(cfg.norm) == Norm.LINF:
            step = np.sign(grad)
        else:
            norms = np.linalg.norm(grad, axis=1, keepdims=True)
            step = np.divide(grad, norms, out=np.zeros_like(grad), where=norms > 0.0)
        x_adv = project(x_adv + cfg.step_size * step, batch, cfg)
    return x_adv[0] if single else x_adv
