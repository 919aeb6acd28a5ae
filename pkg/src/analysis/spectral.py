"""Relationship between DU scores and the frequency content of training dynamics"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from scipy.stats import pearsonr

from ..errors import PrunekitIOError, ValidationError
from ..models.records import CertaintyTrace, ScoreTable, SpectralSummary
from ..scoring.frequency import Aggregation, band_magnitude

logger = logging.getLogger(__name__)
console = Console(stderr=True)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation coefficient"""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise ValidationError("correlation needs at least two samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError("correlation undefined for a constant input")
    return float(np.clip(pearsonr(x, y)[0], -1.0, 1.0))


@dataclass
class SpectralReport:
    """Per-sample band magnitudes and their correlation with DU"""
    summaries: List[SpectralSummary]
    r_low: float
    r_high: float
    band_low: Tuple[int, int]
    band_high: Tuple[int, int]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(s.sample_id, s.du_score, s.band_low, s.band_high) for s in self.summaries],
            columns=["id", "du", "band_low", "band_high"],
        )

    def write(self, csv_path: Path, footer_path: Path) -> None:
        """CSV rows plus a one-line JSON footer with the correlations"""
        try:
            self.to_frame().to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
            with open(footer_path, "w", encoding="utf-8", newline="\n") as f:
                f.write(json.dumps({"r_low": self.r_low, "r_high": self.r_high}, sort_keys=True))
                f.write("\n")
        except OSError as e:
            raise PrunekitIOError(f"cannot write spectral report: {e}") from e
        logger.info(f"Wrote spectral report for {len(self.summaries)} samples to {csv_path}")


def spectral_report(
    traces: Sequence[CertaintyTrace],
    du_scores: ScoreTable,
    band_low: Tuple[int, int] = (1, 10),
    band_high: Tuple[int, int] = (11, 150),
    aggregation: Aggregation = Aggregation.MEAN,
) -> SpectralReport:
    """Low/high band magnitude per sample and the Pearson r of each band against DU"""
    missing = [t.sample_id for t in traces if t.sample_id not in du_scores.entries]
    if missing:
        raise ValidationError(f"{len(missing)} traces have no DU score, e.g. '{missing[0]}'")
    if len(traces) < 2:
        raise ValidationError("spectral report needs at least two traces to correlate")

    summaries = [
        SpectralSummary(
            sample_id=t.sample_id,
            band_low=band_magnitude(t, band_low[0], band_low[1], aggregation),
            band_high=band_magnitude(t, band_high[0], band_high[1], aggregation),
            du_score=du_scores.entries[t.sample_id],
        )
        for t in traces
    ]
    du = [s.du_score for s in summaries]
    r_low = pearson([s.band_low for s in summaries], du)
    r_high = pearson([s.band_high for s in summaries], du)
    logger.info(f"Band correlation with DU: r_low={r_low:.4f}, r_high={r_high:.4f}")
    return SpectralReport(summaries, r_low, r_high, tuple(band_low), tuple(band_high))


def print_report(report: SpectralReport, top: int = 10) -> None:
    """Print correlations and the highest-DU samples"""
    summary = f"""
[bold]Training-dynamics spectrum vs DU[/bold]
Samples: {len(report.summaries)}
Low band {report.band_low[0]}-{report.band_low[1]}: r = {report.r_low:.4f}
High band {report.band_high[0]}-{report.band_high[1]}: r = {report.r_high:.4f}
    """
    console.print(Panel(summary.strip(), title="Spectral Analysis"))

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Sample", style="dim")
    table.add_column("DU", justify="right")
    table.add_column("Low", justify="right")
    table.add_column("High", justify="right")
    for s in sorted(report.summaries, key=lambda s: s.du_score, reverse=True)[:top]:
        table.add_row(s.sample_id, f"{s.du_score:.4f}", f"{s.band_low:.4f}", f"{s.band_high:.4f}")
    console.print(table)
