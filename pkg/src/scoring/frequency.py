"""Frequency Pruning: DFT magnitude of a sample's training dynamics"""

import logging
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ValidationError
from ..models.records import CertaintyTrace, Metric, Provenance, ScoreTable
from .dynamic_uncertainty import trace_matrix

logger = logging.getLogger(__name__)

TraceOrSignal = Union[CertaintyTrace, Sequence[float], np.ndarray]


class Aggregation(str, Enum):
    SUM = "sum"
    MEAN = "mean"


class FpConfig(BaseModel):
    """Bin range over the one-sided spectrum; hi=None means floor(K/2)"""
    model_config = ConfigDict(frozen=True)

    lo: int = Field(default=1, ge=1)
    hi: Optional[int] = Field(default=None, ge=1)
    aggregation: Aggregation = Aggregation.SUM


def dft_magnitudes_direct(signal: Sequence[float]) -> np.ndarray:
    """|F_m| for m = 0..floor(K/2), evaluated straight from the definition (O(K^2))"""
    values = np.asarray(signal, dtype=np.float64)
    _check_signal(values)
    size = values.shape[0]
    bins = np.arange(size // 2 + 1)
    t = np.arange(size)
    # Reduce m*t mod K before scaling so the phase stays exact for long signals
    phase = -2.0 * np.pi * (np.outer(bins, t) % size) / size
    real = np.cos(phase) @ values
    imag = np.sin(phase) @ values
    return np.hypot(real, imag)


def dft_magnitudes(signal: Sequence[float]) -> np.ndarray:
    """One-sided magnitude spectrum |F_m|, m = 0..floor(K/2)"""
    values = np.asarray(signal, dtype=np.float64)
    _check_signal(values)
    return np.abs(np.fft.rfft(values))


def _check_signal(values: np.ndarray) -> None:
    if values.ndim != 1 or values.shape[0] == 0:
        raise ValidationError("signal must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(values)):
        raise ValidationError("signal contains non-finite values")


def _aggregate(values: np.ndarray, aggregation: Aggregation) -> float:
    total = float(np.cumsum(values)[-1])
    if Aggregation(aggregation) == Aggregation.MEAN:
        return total / values.shape[0]
    return total


def _signal_of(trace: TraceOrSignal):
    """(values, description) for a trace or a raw real sequence"""
    if isinstance(trace, CertaintyTrace):
        return trace.as_array(), f"sample '{trace.sample_id}'"
    values = np.asarray(trace, dtype=np.float64)
    _check_signal(values)
    return values, "signal"


def band_magnitude(
    trace: TraceOrSignal,
    lo: int,
    hi: int,
    aggregation: Aggregation = Aggregation.SUM,
) -> float:
    """Aggregate of |F_m| / K over bins lo..hi, hi clamped to floor(K/2)"""
    values, where = _signal_of(trace)
    if lo < 1 or hi < lo:
        raise ValidationError(f"invalid band [{lo}, {hi}]", where)
    size = values.shape[0]
    top = size // 2
    if lo > top:
        raise ValidationError(
            f"band starts at bin {lo} but a length-{size} signal has bins up to {top}", where
        )
    spectrum = dft_magnitudes(values) / size
    return _aggregate(spectrum[lo:min(hi, top) + 1], aggregation)


def frequency_pruning_score(trace: TraceOrSignal, cfg: FpConfig = FpConfig()) -> float:
    """FP score: aggregated normalized magnitudes of the configured non-DC bins"""
    values, where = _signal_of(trace)
    size = values.shape[0]
    if size < 2 * cfg.lo:
        raise ValidationError(f"length {size} needs at least {2 * cfg.lo} epochs for bin {cfg.lo}", where)
    hi = size // 2 if cfg.hi is None else min(cfg.hi, size // 2)
    if hi < cfg.lo:
        raise ValidationError(f"empty bin range [{cfg.lo}, {hi}]", where)
    return band_magnitude(values, cfg.lo, hi, cfg.aggregation)


def score_traces_fp(traces: Sequence[CertaintyTrace], cfg: FpConfig = FpConfig()) -> ScoreTable:
    """FP score for every trace, entries sorted by sample id"""
    ids, matrix = trace_matrix(traces)
    epochs = matrix.shape[1]
    scores = {t.sample_id: frequency_pruning_score(t, cfg) for t in traces}

    logger.info(f"Scored {len(ids)} traces with FP (bins {cfg.lo}..{cfg.hi or epochs // 2}, K={epochs})")
    return ScoreTable(
        entries={i: scores[i] for i in sorted(ids)},
        metric=Metric.FP,
        params={
            "lo": cfg.lo,
            "hi": cfg.hi if cfg.hi is not None else epochs // 2,
            "aggregation": Aggregation(cfg.aggregation).value,
            "normalization": "K",
            "spectrum": "one-sided",
            "epochs": epochs,
            "variants": sorted({t.variant.value for t in traces}),
        },
        provenance=Provenance.COMPUTED,
    )
