"""Score distributions and how extrapolated scores compare with computed ones"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import PrunekitIOError, ValidationError
from ..extrapolation.knn import mae
from ..models.records import Direction, ScoreTable
from ..pruning.pruner import overlap, prune_by_score
from .spectral import pearson

logger = logging.getLogger(__name__)


def score_histogram(
    table: ScoreTable,
    bins: int = 20,
    value_range: Optional[Tuple[float, float]] = None,
) -> pd.DataFrame:
    """Equal-width histogram with columns bin_lo, bin_hi, count"""
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    if len(table) == 0:
        raise ValidationError("histogram of an empty score table")
    values = table.values()
    if value_range is not None and not value_range[0] < value_range[1]:
        raise ValidationError(f"invalid histogram range {value_range}")
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts.astype(np.int64)})


def write_histogram(frame: pd.DataFrame, path: Path) -> None:
    try:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise PrunekitIOError(f"cannot write {path}: {e}") from e
    logger.info(f"Wrote {len(frame)} histogram bins to {path}")


@dataclass
class TruthComparison:
    """Agreement between predicted and ground-truth scores on the same ids"""
    n: int
    mae: float
    pearson_r: float
    predicted_mean: float
    predicted_std: float
    truth_mean: float
    truth_std: float
    # Below 1 when predictions shrink toward the mean
    std_ratio: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _mean_std(values: np.ndarray) -> Tuple[float, float]:
    mean = math.fsum(values.tolist()) / len(values)
    var = math.fsum(((values - mean) ** 2).tolist()) / len(values)
    return mean, math.sqrt(var)


def compare_to_truth(predicted: ScoreTable, truth: ScoreTable) -> TruthComparison:
    """MAE, correlation and spread of predicted scores against the truth"""
    error = mae(predicted, truth)
    ids = sorted(truth.entries)
    if len(ids) < 2:
        raise ValidationError("comparison needs at least two samples")
    pred = predicted.values(ids)
    true = truth.values(ids)
    pred_mean, pred_std = _mean_std(pred)
    true_mean, true_std = _mean_std(true)
    if true_std == 0.0:
        raise ValidationError("ground-truth scores are constant")
    r = pearson(pred, true) if pred_std > 0.0 else 0.0

    result = TruthComparison(
        n=len(ids),
        mae=error,
        pearson_r=r,
        predicted_mean=pred_mean,
        predicted_std=pred_std,
        truth_mean=true_mean,
        truth_std=true_std,
        std_ratio=pred_std / true_std,
    )
    logger.info(f"Predicted vs truth on {len(ids)} samples: MAE {error:.6f}, r {r:.4f}")
    return result


def pruned_set_agreement(
    predicted: ScoreTable,
    truth: ScoreTable,
    fractions: Sequence[float] = (0.25, 0.5),
    direction: Direction = Direction.KEEP_HIGH,
) -> List[Tuple[float, float]]:
    """(fraction, overlap of removed sets) when pruning by predicted vs true scores"""
    if set(predicted.entries) != set(truth.entries):
        raise ValidationError("predicted and truth tables cover different ids")
    rows = []
    for fraction in fractions:
        a = prune_by_score(predicted, fraction=fraction, direction=direction)
        b = prune_by_score(truth, fraction=fraction, direction=direction)
        rows.append((float(fraction), overlap(a, b)))
        logger.debug(f"fraction {fraction}: removed-set overlap {rows[-1][1]:.4f}")
    return rows
