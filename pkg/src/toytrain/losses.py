"""Training objectives and their exact parameter gradients"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import log_softmax, softmax

from ..errors import NonFiniteError, ValidationError
from .attack import AttackConfig, pgd_attack, project
from .model import Objective, ToyModel, activations, as_batch, backward, one_hot


class LossKind(str, Enum):
    STANDARD_CE = "standard_ce"
    ADVERSARIAL_CE = "adversarial_ce"
    TRADES = "trades"


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: LossKind = LossKind.STANDARD_CE
    trades_beta: float = Field(default=5.0, ge=0.0, allow_inf_nan=False)
    label_smoothing: float = Field(default=0.0, ge=0.0, lt=1.0)

    @property
    def adversarial(self) -> bool:
        return self.kind != LossKind.STANDARD_CE


@dataclass
class LossResult:
    """Batch-mean loss, its gradients [dW0, db0, ...] and the inputs attacked"""
    loss: float
    grads: List[np.ndarray]
    x_adv: Optional[np.ndarray] = None


def soft_targets(y: np.ndarray, n_classes: int, smoothing: float = 0.0) -> np.ndarray:
    targets = one_hot(y, n_classes)
    if smoothing:
        targets = (1.0 - smoothing) * targets + smoothing / n_classes
    return targets


def _check_finite(per_sample: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise NonFiniteError(f"non-finite {what}", f"sample {int(bad[0])}")


def trades_start(x: np.ndarray, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Small Gaussian jitter so the KL objective has a non-zero gradient"""
    return project(x + 0.001 * rng.standard_normal(x.shape), x, cfg)


def loss_and_grads(
    model: ToyModel,
    x,
    y,
    cfg: LossConfig,
    attack: Optional[AttackConfig] = None,
    rng: Optional[np.random.Generator] = None,
    x_adv: Optional[np.ndarray] = None,
) -> LossResult:
    """Loss of one batch and its exact gradient w.r.t. every parameter.

    standard_ce: CE on x. adversarial_ce: CE on PGD(x) with the CE objective.
    trades: CE on x plus beta * mean KL(f(x) || f(x_adv)), with x_adv from PGD
    on the KL term. A given x_adv is used as is instead of attacking.
    """
    batch = as_batch(model, x)
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = batch.shape[0]
    if n == 0:
        raise ValidationError("empty batch")
    targets = soft_targets(labels, model.n_classes, cfg.label_smoothing)
    if cfg.adversarial and x_adv is None and attack is None:
        raise ValidationError(f"{cfg.kind.value} loss needs an attack config")
    if rng is None:
        rng = np.random.default_rng(0)

    if cfg.kind == LossKind.STANDARD_CE:
        x_adv = None
        inputs = batch
    elif cfg.kind == LossKind.ADVERSARIAL_CE:
        if x_adv is None:
            x_adv = pgd_attack(model, batch, labels, attack, rng, Objective.CE)
        inputs = as_batch(model, x_adv)
    else:
        inputs = batch

    acts, z = activations(model, inputs)
    logp = log_softmax(z, axis=1)
    per_sample = -(targets * logp).sum(axis=1)
    _check_finite(per_sample, "cross-entropy")
    dz = (np.exp(logp) - targets) / n

    if cfg.kind != LossKind.TRADES:
        grads, _ = backward(model, acts, dz)
        return LossResult(float(per_sample.mean()), grads, x_adv)

    clean_probs = np.exp(logp)
    if x_adv is None:
        init = None if attack.random_start else trades_start(batch, attack, rng)
        x_adv = pgd_attack(
            model, batch, labels, attack, rng, Objective.KL, reference=softmax(z, axis=1), init=init,
        )
    adv_acts, adv_z = activations(model, as_batch(model, x_adv))
    adv_logq = log_softmax(adv_z, axis=1)
    log_ratio = logp - adv_logq
    kl = (clean_probs * log_ratio).sum(axis=1)
    _check_finite(kl, "KL divergence")

    beta = cfg.trades_beta
    dz = dz + beta / n * clean_probs * (log_ratio - kl[:, None])
    adv_dz = beta / n * (np.exp(adv_logq) - clean_probs)
    grads, _ = backward(model, acts, dz)
    adv_grads, _ = backward(model, adv_acts, adv_dz)
    loss = float(per_sample.mean() + beta * kl.mean())
    return LossResult(loss, [g + h for g, h in zip(grads, adv_grads)], x_adv)
