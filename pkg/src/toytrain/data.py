"""Synthetic Gaussian-blob datasets in the unit cube"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from ..errors import ValidationError
from ..models.records import EmbeddingSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs in [0, 1]^d with integer labels and unique sample ids"""
    ids: Tuple[str, ...]
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != len(self.ids):
            raise ValidationError(f"inputs of shape {self.inputs.shape} do not match {len(self.ids)} ids")
        if self.labels.shape != (len(self.ids),):
            raise ValidationError(f"{self.labels.shape[0]} labels for {len(self.ids)} ids")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("dataset ids are not unique")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValidationError("inputs must lie in [0, 1]")
        if self.labels.size and not (0 <= self.labels.min() and self.labels.max() < self.n_classes):
            raise ValidationError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, keep_ids: Iterable[str]) -> "Dataset":
        """Rows whose id is in keep_ids, in dataset order"""
        keep = set(keep_ids)
        unknown = keep - set(self.ids)
        if unknown:
            raise ValidationError(f"{len(unknown)} ids are not in the dataset, e.g. '{sorted(unknown)[0]}'")
        rows = [r for r, i in enumerate(self.ids) if i in keep]
        return Dataset(
            ids=tuple(self.ids[r] for r in rows),
            inputs=self.inputs[rows],
            labels=self.labels[rows],
            n_classes=self.n_classes,
        )

    def to_embeddings(self, vectors: Optional[np.ndarray] = None) -> EmbeddingSet:
        """The raw inputs, or the given row-aligned vectors, as a labeled EmbeddingSet"""
        return EmbeddingSet(
            ids=self.ids,
            vectors=self.inputs if vectors is None else vectors,
            labels=self.labels,
        )


def make_blobs(
    n_per_class: int,
    n_classes: int,
    dim: int,
    separation: float,
    seed: int = 0,
    spread: float = 0.1,
) -> Dataset:
    """Isotropic Gaussian clusters clipped to [0, 1]^d.

    Classes come in pairs on opposite sides of the cube centre along one axis:
    class c sits on axis c // 2, on the positive side when c is even. The
    distance between a pair of centres is separation * spread, so separation
    counts standard deviations.
    """
    if n_per_class < 1 or n_classes < 1 or dim < 1:
        raise ValidationError("n_per_class, n_classes and dim must be positive")
    if spread <= 0.0 or separation < 0.0:
        raise ValidationError("spread must be positive and separation non-negative")
    if n_classes > 2 * dim:
        raise ValidationError(f"{n_classes} classes need dim >= {(n_classes + 1) // 2}, got {dim}")

    rng = np.random.default_rng(seed)
    half = separation * spread / 2.0
    centers = np.full((n_classes, dim), 0.5)
    for c in range(n_classes):
        centers[c, c // 2] += half if c % 2 == 0 else -half

    n = n_per_class * n_classes
    labels = np.arange(n, dtype=np.int64) % n_classes
    noise = rng.normal(0.0, spread, size=(n, dim))
    inputs = np.clip(centers[labels] + noise, 0.0, 1.0)
    ids = tuple(f"blob-{i:06d}" for i in range(n))

    logger.debug(f"Generated {n} blob samples in {dim} dims over {n_classes} classes (seed {seed})")
    return Dataset(ids=ids, inputs=inputs, labels=labels, n_classes=n_classes)
