"""Dynamic Uncertainty: mean sliding-window std of a sample's certainty trace"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ValidationError
from ..models.records import CertaintyTrace, Metric, Provenance, ScoreTable

logger = logging.getLogger(__name__)


class DuConfig(BaseModel):
    """Window size J and the denominator convention"""
    model_config = ConfigDict(frozen=True)

    window: int = Field(default=10, ge=2)
    # Divide by K - J instead of the number of windows K - J + 1
    short_denominator: bool = False


def trace_matrix(traces: Sequence[CertaintyTrace]) -> Tuple[List[str], np.ndarray]:
    """Stack traces into an n x K float64 matrix; all traces must share K"""
    if not traces:
        return [], np.zeros((0, 0), dtype=np.float64)
    epochs = traces[0].epochs
    for trace in traces:
        if trace.epochs != epochs:
            raise ValidationError(
                f"mixed epoch counts: '{traces[0].sample_id}' has {epochs}, "
                f"'{trace.sample_id}' has {trace.epochs}"
            )
    ids = [t.sample_id for t in traces]
    matrix = np.array([t.certainties for t in traces], dtype=np.float64).reshape(len(traces), epochs)
    return ids, matrix


_CHUNK_ROWS = 4096


def _sequential_sum(values: np.ndarray) -> np.ndarray:
    """Left-to-right sum along the last axis"""
    if values.shape[-1] == 0:
        return np.zeros(values.shape[:-1])
    return np.cumsum(values, axis=-1)[..., -1]


def _window_stds(windows: np.ndarray) -> np.ndarray:
    """Sample std (ddof=1) along the last axis.

    Window values are sorted first so the result depends only on the multiset
    of values, which makes DU exactly invariant under time reversal. Values are
    taken relative to each window's smallest one, so a constant window is
    exactly zero.
    """
    ordered = np.sort(windows, axis=-1)
    ordered = ordered - ordered[..., :1]
    size = ordered.shape[-1]
    mean = _sequential_sum(ordered) / size
    squared = (ordered - mean[..., None]) ** 2
    return np.sqrt(_sequential_sum(squared) / (size - 1))


def prediction_uncertainty(trace: CertaintyTrace, k: int, window: int) -> float:
    """Sample std (ddof=1) of the certainties at epochs k-J+1..k, 1-indexed"""
    if window < 2:
        raise ValidationError(f"window must be >= 2, got {window}")
    if not window <= k <= trace.epochs:
        raise ValidationError(
            f"epoch {k} outside [{window}, {trace.epochs}]", f"sample '{trace.sample_id}'"
        )
    values = trace.as_array()[k - window:k]
    return float(_window_stds(values))


def _du_rows(matrix: np.ndarray, cfg: DuConfig) -> np.ndarray:
    n, epochs = matrix.shape
    if epochs < cfg.window:
        raise ValidationError(f"traces have {epochs} epochs, fewer than window {cfg.window}")
    if cfg.short_denominator and epochs == cfg.window:
        raise ValidationError("short denominator K - J is zero when K == J")

    denominator = epochs - cfg.window if cfg.short_denominator else epochs - cfg.window + 1
    scores = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK_ROWS):
        block = matrix[start:start + _CHUNK_ROWS]
        stds = _window_stds(sliding_window_view(block, cfg.window, axis=1))
        # Summing the sorted stds makes the total depend only on the multiset of windows
        scores[start:start + len(block)] = _sequential_sum(np.sort(stds, axis=-1)) / denominator
    return scores


def dynamic_uncertainty(trace: CertaintyTrace, cfg: DuConfig = DuConfig()) -> float:
    """Mean of prediction_uncertainty over window ends k = J..K"""
    if trace.epochs < cfg.window:
        raise ValidationError(
            f"trace has {trace.epochs} epochs, fewer than window {cfg.window}",
            f"sample '{trace.sample_id}'",
        )
    return float(_du_rows(trace.as_array()[None, :], cfg)[0])


def score_traces_du(traces: Sequence[CertaintyTrace], cfg: DuConfig = DuConfig()) -> ScoreTable:
    """DU score for every trace, entries sorted by sample id"""
    ids, matrix = trace_matrix(traces)
    epochs = matrix.shape[1]
    scores = _du_rows(matrix, cfg) if ids else np.zeros(0)

    order = sorted(range(len(ids)), key=ids.__getitem__)
    variants = sorted({t.variant.value for t in traces})
    logger.info(f"Scored {len(ids)} traces with DU (J={cfg.window}, K={epochs})")
    return ScoreTable(
        entries={ids[i]: float(scores[i]) for i in order},
        metric=Metric.DU,
        params={
            "window": cfg.window,
            "epochs": epochs,
            "short_denominator": cfg.short_denominator,
            "variants": variants,
        },
        provenance=Provenance.COMPUTED,
    )
