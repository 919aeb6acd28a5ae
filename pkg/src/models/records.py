"""Domain records shared by the scoring, extrapolation and pruning modules"""

import math
import numbers
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Variant(str, Enum):
    """Which input the certainty was measured on"""
    CLEAN = "clean"
    ADVERSARIAL = "adversarial"


class Metric(str, Enum):
    """Data importance metrics"""
    DU = "DU"
    FP = "FP"


class Provenance(str, Enum):
    """How a score table came to be"""
    COMPUTED = "computed"
    EXTRAPOLATED = "extrapolated"
    RANDOM = "random"


class DistanceMetric(str, Enum):
    """k-NN distance functions"""
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


class Direction(str, Enum):
    """Which end of the score ranking survives pruning"""
    KEEP_HIGH = "keep-high"
    KEEP_LOW = "keep-low"


def du_upper_bound(window: int, epochs: Optional[int] = None, short_denominator: bool = False) -> float:
    """Largest DU value a trace with certainties in [0, 1] can reach.

    The sample standard deviation of values in [0, 1] over J points is at most
    0.5 * sqrt(J / (J - 1)). Dividing the window sum by K - J instead of the
    window count inflates the mean by (K - J + 1) / (K - J).
    """
    bound = 0.5 * math.sqrt(window / (window - 1))
    if short_denominator and epochs is not None and epochs > window:
        bound *= (epochs - window + 1) / (epochs - window)
    return bound


class CertaintyTrace(BaseModel):
    """Per-epoch certainty of one sample's true class"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    sample_id: str = Field(alias="id", min_length=1)
    label: int = Field(ge=0)
    variant: Variant = Variant.CLEAN
    certainties: Tuple[float, ...] = Field(min_length=1)

    @field_validator("label", mode="before")
    @classmethod
    def _integer_label(cls, value: Any) -> Any:
        if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
            raise ValueError(f"label must be an integer, got {value!r}")
        return value

    @field_validator("certainties", mode="before")
    @classmethod
    def _numeric_certainties(cls, value: Any) -> Any:
        if isinstance(value, (str, bytes)) or not isinstance(value, (list, tuple)):
            raise ValueError(f"certainties must be a list of numbers, got {type(value).__name__}")
        for index, item in enumerate(value):
            if isinstance(item, (bool, np.bool_)) or not isinstance(item, numbers.Real):
                raise ValueError(f"certainty at index {index} is not a number: {item!r}")
        return value

    @model_validator(mode="after")
    def _check_certainties(self) -> "CertaintyTrace":
        for index, value in enumerate(self.certainties):
            if not 0.0 <= value <= 1.0:
                raise ValueError(
                    f"certainty {value!r} out of [0, 1] for sample '{self.sample_id}' at index {index}"
                )
        return self

    @property
    def epochs(self) -> int:
        return len(self.certainties)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.certainties, dtype=np.float64)


class ScoreTable(BaseModel):
    """Importance score per sample id"""
    model_config = ConfigDict(frozen=True)

    entries: Dict[str, float]
    metric: Metric
    params: Dict[str, Any] = Field(default_factory=dict)
    provenance: Provenance = Provenance.COMPUTED

    @model_validator(mode="after")
    def _check_scores(self) -> "ScoreTable":
        bound = None
        if self.metric == Metric.DU and "window" in self.params:
            bound = du_upper_bound(
                int(self.params["window"]),
                self.params.get("epochs"),
                bool(self.params.get("short_denominator", False)),
            )
        for sample_id, score in self.entries.items():
            if not math.isfinite(score) or score < 0.0:
                raise ValueError(f"score {score!r} for sample '{sample_id}' is not a finite value >= 0")
            if bound is not None and score > bound * (1 + 1e-12):
                raise ValueError(f"DU score {score!r} for sample '{sample_id}' exceeds bound {bound!r}")
        return self

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> List[str]:
        return list(self.entries)

    def values(self, ids: Optional[List[str]] = None) -> np.ndarray:
        """Scores as float64 array, in entry order or in the order of `ids`"""
        if ids is None:
            return np.fromiter(self.entries.values(), dtype=np.float64, count=len(self.entries))
        return np.array([self.entries[i] for i in ids], dtype=np.float64)

    def mean(self) -> float:
        return math.fsum(self.entries.values()) / len(self.entries)


class EmbeddingSet(BaseModel):
    """Row-aligned embedding vectors; label -1 marks an unlabeled row"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    ids: Tuple[str, ...]
    vectors: np.ndarray
    labels: Optional[np.ndarray] = None

    @field_validator("vectors", mode="before")
    @classmethod
    def _as_matrix(cls, value: Any) -> np.ndarray:
        matrix = np.array(value, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise ValueError(f"vectors must be an n x d matrix with d >= 1, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            row = int(np.argwhere(~np.isfinite(matrix))[0][0])
            raise ValueError(f"non-finite embedding value in row {row}")
        matrix.setflags(write=False)
        return matrix

    @field_validator("labels", mode="before")
    @classmethod
    def _as_labels(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        labels = np.array(value, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        labels.setflags(write=False)
        return labels

    @model_validator(mode="after")
    def _check_alignment(self) -> "EmbeddingSet":
        if self.vectors.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids but {self.vectors.shape[0]} embedding rows")
        if len(set(self.ids)) != len(self.ids):
            seen = set()
            for row, sample_id in enumerate(self.ids):
                if sample_id in seen:
                    raise ValueError(f"duplicate id '{sample_id}' in row {row}")
                seen.add(sample_id)
        if self.labels is not None and self.labels.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids but {self.labels.shape[0]} labels")
        return self

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def label_map(self) -> Dict[str, int]:
        """id -> label for labeled rows"""
        if self.labels is None:
            return {}
        return {i: int(lab) for i, lab in zip(self.ids, self.labels) if lab >= 0}

    def take(self, rows: List[int]) -> "EmbeddingSet":
        rows = list(rows)
        return EmbeddingSet(
            ids=tuple(self.ids[r] for r in rows),
            vectors=self.vectors[rows],
            labels=None if self.labels is None else self.labels[rows],
        )


class KnnConfig(BaseModel):
    """Neighbour count and distance for score extrapolation"""
    model_config = ConfigDict(frozen=True)

    k: int = Field(default=35, ge=1)
    metric: DistanceMetric = DistanceMetric.COSINE


class PrunePolicy(BaseModel):
    """How a manifest was produced"""
    model_config = ConfigDict(frozen=True)

    fraction: Optional[float] = None
    count: Optional[int] = None
    direction: Direction = Direction.KEEP_HIGH
    balanced: bool = False
    metric: Optional[str] = None
    seed: Optional[int] = None
    random: bool = False


class PruneManifest(BaseModel):
    """Kept/removed partition of a dataset"""
    model_config = ConfigDict(frozen=True)

    kept: List[str]
    removed: List[str]
    policy: PrunePolicy

    @model_validator(mode="after")
    def _check_partition(self) -> "PruneManifest":
        kept, removed = set(self.kept), set(self.removed)
        if len(kept) != len(self.kept) or len(removed) != len(self.removed):
            raise ValueError("manifest lists contain duplicate ids")
        both = kept & removed
        if both:
            raise ValueError(f"{len(both)} ids are both kept and removed, e.g. '{sorted(both)[0]}'")
        return self

    @property
    def universe(self) -> set:
        return set(self.kept) | set(self.removed)


class SpectralSummary(BaseModel):
    """Band magnitudes of one sample's training dynamics"""
    model_config = ConfigDict(frozen=True)

    sample_id: str
    band_low: float = Field(ge=0.0, allow_inf_nan=False)
    band_high: float = Field(ge=0.0, allow_inf_nan=False)
    du_score: float
