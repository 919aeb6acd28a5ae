"""Mini-batch training that records per-epoch certainty traces"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import NonFiniteError, PrunekitIOError, ValidationError
from ..models.records import CertaintyTrace, Variant
from .attack import AttackConfig, pgd_attack
from .data import Dataset
from .losses import LossConfig, LossKind, loss_and_grads
from .model import Objective, ToyModel, forward, predict

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Optimisation, objective and trace recording settings"""
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=60, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=0.1, gt=0.0)
    momentum: float = Field(default=0.0, ge=0.0, lt=1.0)
    loss: LossKind = LossKind.STANDARD_CE
    trades_beta: float = Field(default=5.0, ge=0.0)
    label_smoothing: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: int = 0
    record_variants: Tuple[Variant, ...] = (Variant.CLEAN,)
    # Record adversarial certainty on the last training-step perturbation
    reuse_train_perturbation: bool = False

    @model_validator(mode="after")
    def _check_reuse(self) -> "TrainConfig":
        if self.reuse_train_perturbation and self.loss == LossKind.STANDARD_CE:
            raise ValueError("reuse_train_perturbation needs an adversarial loss")
        return self

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(kind=self.loss, trades_beta=self.trades_beta, label_smoothing=self.label_smoothing)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    clean_accuracy: float


@dataclass
class TrainResult:
    """Trained model, traces per recorded variant and the epoch history"""
    model: ToyModel
    traces: Dict[Variant, List[CertaintyTrace]]
    history: List[EpochLog] = field(default_factory=list)

    def write_log(self, path: Path) -> None:
        """Per-epoch loss and accuracy as JSON"""
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                json.dump({"epochs": [asdict(h) for h in self.history]}, f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            raise PrunekitIOError(f"cannot write {path}: {e}") from e


def true_class_certainty(model: ToyModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    probs = forward(model, x)
    return np.clip(probs[np.arange(len(y)), y], 0.0, 1.0)


def train(
    model: ToyModel,
    dataset: Dataset,
    cfg: TrainConfig,
    attack: Optional[AttackConfig] = None,
    keep_ids: Optional[Iterable[str]] = None,
) -> TrainResult:
    """Train with seeded shuffling and record certainty traces after every epoch.

    With keep_ids only those samples are trained on and traced.
    """
    if dataset.dim != model.input_dim or dataset.n_classes != model.n_classes:
        raise ValidationError(
            f"dataset ({dataset.dim} dims, {dataset.n_classes} classes) does not fit model sizes {model.sizes}"
        )
    variants = tuple(dict.fromkeys(Variant(v) for v in cfg.record_variants))
    needs_attack = cfg.loss != LossKind.STANDARD_CE or Variant.ADVERSARIAL in variants
    if needs_attack and attack is None:
        raise ValidationError("adversarial loss or adversarial traces need an attack config")
    data = dataset.subset(keep_ids) if keep_ids is not None else dataset
    n = len(data)
    if n == 0:
        raise ValidationError("nothing to train on")

    shuffle_seq, attack_seq, record_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    attack_rng = np.random.default_rng(attack_seq)
    record_rng = np.random.default_rng(record_seq)
    loss_cfg = cfg.loss_config

    params = [p.copy() for p in model.parameters()]
    velocity = [np.zeros_like(p) for p in params]
    last_perturbed = data.inputs.copy()
    records = {v: np.empty((n, cfg.epochs)) for v in variants}
    history: List[EpochLog] = []

    logger.info(
        f"Training {model.sizes} on {n} samples for {cfg.epochs} epochs "
        f"({cfg.loss.value}, batch {cfg.batch_size}, lr {cfg.learning_rate})"
    )
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            current = model.with_parameters(params)
            try:
                result = loss_and_grads(
                    current, data.inputs[rows], data.labels[rows], loss_cfg, attack, attack_rng,
                )
            except NonFiniteError as e:
                raise NonFiniteError(f"training diverged: {e}", f"epoch {epoch}") from e
            if not np.isfinite(result.loss):
                raise NonFiniteError("training diverged: non-finite loss", f"epoch {epoch}")
            total += result.loss * len(rows)
            if result.x_adv is not None:
                last_perturbed[rows] = result.x_adv
            for p, v, g in zip(params, velocity, result.grads):
                v *= cfg.momentum
                v += g
                p -= cfg.learning_rate * v

        model = model.with_parameters(params)
        if Variant.CLEAN in records:
            records[Variant.CLEAN][:, epoch] = true_class_certainty(model, data.inputs, data.labels)
        if Variant.ADVERSARIAL in records:
            if cfg.reuse_train_perturbation:
                x_adv = last_perturbed
            else:
                x_adv = pgd_attack(model, data.inputs, data.labels, attack, record_rng, Objective.CE)
            records[Variant.ADVERSARIAL][:, epoch] = true_class_certainty(model, x_adv, data.labels)

        accuracy = float(np.mean(predict(model, data.inputs) == data.labels))
        history.append(EpochLog(epoch=epoch, loss=total / n, clean_accuracy=accuracy))
        logger.debug(f"epoch {epoch}: loss {total / n:.6f}, clean accuracy {accuracy:.4f}")

    traces = {
        variant: [
            CertaintyTrace(
                sample_id=sample_id,
                label=int(label),
                variant=variant,
                certainties=tuple(matrix[row].tolist()),
            )
            for row, (sample_id, label) in enumerate(zip(data.ids, data.labels))
        ]
        for variant, matrix in records.items()
    }
    logger.info(f"Finished training: loss {history[-1].loss:.6f}, clean accuracy {history[-1].clean_accuracy:.4f}")
    return TrainResult(model, traces, history)


def evaluate(
    model: ToyModel,
    dataset: Dataset,
    attack: Optional[AttackConfig] = None,
    seed: int = 0,
) -> Tuple[float, float]:
    """(clean accuracy, robust accuracy under PGD); robust equals clean without an attack"""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    correct = predict(model, dataset.inputs) == dataset.labels
    clean = float(np.mean(correct))
    if attack is None:
        return clean, clean
    x_adv = pgd_attack(model, dataset.inputs, dataset.labels, attack, np.random.default_rng(seed))
    robust = float(np.mean(predict(model, x_adv) == dataset.labels))
    return clean, robust


def robust_accuracy_curve(
    model: ToyModel,
    dataset: Dataset,
    attack: AttackConfig,
    epsilons: Sequence[float],
    seed: int = 0,
) -> List[Tuple[float, float]]:
    """Robust accuracy at increasing budgets, each attack chained from the previous one.

    A sample broken at one budget stays broken at every larger one, so the
    curve never increases.
    """
    eps = [float(e) for e in epsilons]
    if any(b < a for a, b in zip(eps, eps[1:])):
        raise ValidationError("epsilons must be non-decreasing")
    rng = np.random.default_rng(seed)
    x, y = dataset.inputs, dataset.labels
    robust = predict(model, x) == y
    point = x.copy()
    curve = []
    for epsilon in eps:
        cfg = attack.model_copy(update={"epsilon": epsilon})
        candidate = pgd_attack(model, x, y, cfg, rng, init=point)
        still = robust & (predict(model, candidate) == y)
        point = np.where(robust[:, None], candidate, point)
        robust = still
        curve.append((epsilon, float(np.mean(robust))))
    return curve
