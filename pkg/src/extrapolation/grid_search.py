"""Grid search over extrapolation settings, scored by MAE on a holdout set"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveInt
from tabulate import tabulate

from ..errors import FormatError, PrunekitIOError, ValidationError
from ..models.formats import read_embeddings, read_scores
from ..models.records import DistanceMetric, EmbeddingSet, KnnConfig, ScoreTable
from .knn import bounded_mean, knn_indices_batch, mae, mean_baseline, merge_sources, split_holdout

logger = logging.getLogger(__name__)


class GridSpec(BaseModel):
    """Cells to evaluate: every (source variant, metric, k) combination"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    k_values: List[PositiveInt] = Field(min_length=1)
    metrics: List[DistanceMetric] = Field(min_length=1)
    source_variants: Dict[str, Tuple[EmbeddingSet, ScoreTable]] = Field(min_length=1)


@dataclass
class GridResult:
    """MAE per grid cell, ascending, plus the mean baseline per source variant"""
    cells: pd.DataFrame
    baselines: pd.DataFrame

    def best(self) -> Dict[str, object]:
        return self.cells.iloc[0].to_dict()

    def write_csv(self, path: Path) -> None:
        """Cell table, a blank line, then the baseline table"""
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                self.cells.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
                f.write("\n")
                self.baselines.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
        except OSError as e:
            raise PrunekitIOError(f"cannot write {path}: {e}") from e
        logger.info(f"Wrote {len(self.cells)} grid cells to {path}")

    def print(self, top: int = 10) -> None:
        print(tabulate(self.cells.head(top), headers="keys", tablefmt="grid", showindex=False, floatfmt=".6f"))
        print(tabulate(self.baselines, headers="keys", tablefmt="grid", showindex=False, floatfmt=".6f"))


def grid_search(
    spec: GridSpec,
    holdout_emb: EmbeddingSet,
    holdout_truth: ScoreTable,
    threads: int = 1,
    batch_size: int = 1024,
) -> GridResult:
    """MAE of every extrapolation cell against the holdout truth"""
    if set(holdout_emb.ids) != set(holdout_truth.entries):
        raise ValidationError("holdout embeddings and holdout truth cover different ids")
    holdout_ids = set(holdout_emb.ids)
    for name, (emb, _) in spec.source_variants.items():
        shared = holdout_ids & set(emb.ids)
        if shared:
            raise ValidationError(
                f"holdout shares {len(shared)} ids with source variant '{name}', e.g. '{sorted(shared)[0]}'"
            )

    k_values = sorted(set(spec.k_values))
    k_max = k_values[-1]
    cells = []
    baselines = []
    for name, (emb, scores) in spec.source_variants.items():
        baselines.append((name, mae(mean_baseline(scores, list(holdout_emb.ids)), holdout_truth)))
        if k_max > len(emb):
            raise ValidationError(f"k={k_max} exceeds the {len(emb)} rows of source variant '{name}'")
        missing = [i for i in emb.ids if i not in scores.entries]
        if missing:
            raise ValidationError(f"variant '{name}': {len(missing)} source ids have no score")
        source_values = scores.values(list(emb.ids))

        for metric in dict.fromkeys(spec.metrics):
            # Top-k under (distance, index) order is a prefix of top-k_max
            neighbours = knn_indices_batch(
                emb, holdout_emb.vectors, KnnConfig(k=k_max, metric=metric), threads, batch_size
            )
            picked = source_values[neighbours]
            for k in k_values:
                errors = []
                for row, sample_id in enumerate(holdout_emb.ids):
                    values = picked[row, :k]
                    estimate = bounded_mean(values.tolist(), float(values.min()), float(values.max()))
                    errors.append(abs(estimate - holdout_truth.entries[sample_id]))
                cell_mae = math.fsum(errors) / len(errors)
                cells.append((name, DistanceMetric(metric).value, k, cell_mae))
                logger.debug(f"grid cell {name}/{DistanceMetric(metric).value}/k={k}: MAE {cell_mae:.6f}")

    cell_frame = pd.DataFrame(cells, columns=["source_variant", "metric", "k", "mae"])
    cell_frame = cell_frame.sort_values(
        ["mae", "source_variant", "metric", "k"], kind="mergesort"
    ).reset_index(drop=True)
    baseline_frame = pd.DataFrame(baselines, columns=["source_variant", "baseline_mae"])
    logger.info(f"Grid search over {len(cell_frame)} cells; best MAE {cell_frame['mae'].iloc[0]:.6f}")
    return GridResult(cell_frame, baseline_frame)


def _load_pair(entry: Dict[str, str], base: Path, spec_path: Path) -> Tuple[EmbeddingSet, ScoreTable]:
    if "embeddings" not in entry or "scores" not in entry:
        raise FormatError(spec_path, "each source part needs 'embeddings' and 'scores' paths")
    return read_embeddings(base / entry["embeddings"]), read_scores(base / entry["scores"])


def _drop_ids(emb: EmbeddingSet, scores: ScoreTable, ids: set) -> Tuple[EmbeddingSet, ScoreTable]:
    rows = [r for r, i in enumerate(emb.ids) if i not in ids]
    if len(rows) == len(emb):
        return emb, scores
    kept = emb.take(rows)
    table = ScoreTable(
        entries={i: scores.entries[i] for i in kept.ids},
        metric=scores.metric,
        params=scores.params,
        provenance=scores.provenance,
    )
    return kept, table


def load_grid_spec(
    path: Path,
    k_values: Optional[List[int]] = None,
    metrics: Optional[List[str]] = None,
    holdout_fraction: Optional[float] = None,
    holdout_seed: int = 0,
    mismatch_ratio: float = 2.0,
    default_holdout_fraction: Optional[float] = None,
) -> Tuple[GridSpec, EmbeddingSet, ScoreTable]:
    """Read a grid spec JSON file; relative paths resolve against the file's directory.

    The holdout is either given as files or split from one variant with a
    seeded fraction; split-off ids are removed from every variant. A file
    without a holdout section falls back to `default_holdout_fraction`.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise PrunekitIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(path, f"malformed JSON: {e.msg}", f"line {e.lineno}") from e
    base = path.parent

    variants: Dict[str, Tuple[EmbeddingSet, ScoreTable]] = {}
    for name, parts in data.get("source_variants", {}).items():
        if isinstance(parts, dict):
            parts = [parts]
        loaded = [_load_pair(entry, base, path) for entry in parts]
        variants[name] = merge_sources(loaded, mismatch_ratio)

    holdout = data.get("holdout", {})
    if holdout_fraction is None and not holdout:
        holdout_fraction = default_holdout_fraction
    if holdout_fraction is not None:
        holdout = {**holdout, "fraction": holdout_fraction, "seed": holdout_seed}
        holdout.pop("embeddings", None)
        holdout.setdefault("from_variant", next(iter(variants), None))

    if "embeddings" in holdout:
        holdout_emb, holdout_truth = _load_pair(holdout, base, path)
    elif "from_variant" in holdout:
        name = holdout["from_variant"]
        if name not in variants:
            raise FormatError(path, f"holdout variant '{name}' is not a source variant")
        emb, scores = variants[name]
        fraction = holdout.get("fraction", 0.1 if default_holdout_fraction is None else default_holdout_fraction)
        _, _, holdout_emb, holdout_truth = split_holdout(emb, scores, float(fraction), int(holdout.get("seed", 0)))
        held = set(holdout_emb.ids)
        variants = {n: _drop_ids(e, s, held) for n, (e, s) in variants.items()}
        logger.info(f"Split {len(held)} holdout samples from variant '{name}'")
    else:
        raise FormatError(path, "grid spec needs a 'holdout' section or --holdout-fraction")

    spec = GridSpec(
        k_values=k_values or data.get("k_values", [1, 5, 10, 25, 50]),
        metrics=metrics or data.get("metrics", ["euclidean", "cosine"]),
        source_variants=variants,
    )
    return spec, holdout_emb, holdout_truth
