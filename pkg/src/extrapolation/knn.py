"""Exact k-nearest-neighbour search and score extrapolation over embeddings"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from ..errors import ValidationError
from ..models.records import (
    DistanceMetric, EmbeddingSet, KnnConfig, Provenance, ScoreTable,
)

logger = logging.getLogger(__name__)

# Cap on query-block x source-row elements held at once
_BLOCK_ELEMENTS = 1 << 25


class _PreparedSource:
    """Source rows in the form the distance kernels need, computed once per search"""

    def __init__(self, source: EmbeddingSet, metric: DistanceMetric):
        self.metric = DistanceMetric(metric)
        self.rows = source.vectors
        norms = np.sqrt(np.einsum("ij,ij->i", self.rows, self.rows))
        if self.metric == DistanceMetric.COSINE:
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise ValidationError(
                    "all-zero source embedding under cosine distance",
                    f"row {int(zero[0])} ('{source.ids[zero[0]]}')",
                )
            self.rows = self.rows / norms[:, None]
            norms = np.ones_like(norms)
        self.sq_norms = norms ** 2
        self.max_norm = float(norms.max()) if norms.size else 0.0

    def prepare_queries(self, queries: np.ndarray) -> np.ndarray:
        if self.metric == DistanceMetric.EUCLIDEAN:
            return queries
        norms = np.sqrt(np.einsum("ij,ij->i", queries, queries))
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValidationError("all-zero query embedding under cosine distance", f"query {int(zero[0])}")
        return queries / norms[:, None]

    def exact(self, rows: np.ndarray, query: np.ndarray) -> np.ndarray:
        """Reference distances for the given source rows"""
        if self.metric == DistanceMetric.EUCLIDEAN:
            diff = self.rows[rows] - query
            return np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return 1.0 - np.einsum("ij,j->i", self.rows[rows], query)


def _check_search(source: EmbeddingSet, dim: int, cfg: KnnConfig) -> None:
    if dim != source.dim:
        raise ValidationError(f"query dim {dim} does not match source dim {source.dim}")
    if cfg.k > len(source):
        raise ValidationError(f"k={cfg.k} exceeds the {len(source)} source rows")


def _search_block(prepared: _PreparedSource, queries: np.ndarray, k: int) -> np.ndarray:
    """Exact top-k for a block of prepared queries.

    A matrix-product pass yields approximate distances; every row within the
    rounding margin of the k-th approximate value is re-ranked with the exact
    kernel, so the result equals a full sort of exact distances.
    """
    dim = queries.shape[1]
    products = queries @ prepared.rows.T
    if prepared.metric == DistanceMetric.EUCLIDEAN:
        q_sq = np.einsum("ij,ij->i", queries, queries)
        approx = q_sq[:, None] + prepared.sq_norms[None, :] - 2.0 * products
        scale = (np.sqrt(q_sq) + prepared.max_norm) ** 2
    else:
        approx = 1.0 - products
        scale = np.full(queries.shape[0], 4.0)
    margin = 16.0 * (dim + 2) * np.finfo(np.float64).eps * scale

    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for i in range(queries.shape[0]):
        row = approx[i]
        kth = np.partition(row, k - 1)[k - 1]
        candidates = np.flatnonzero(row <= kth + margin[i])
        exact = prepared.exact(candidates, queries[i])
        # Candidates ascend by index, so a stable sort breaks ties by lowest index
        order = np.argsort(exact, kind="stable")[:k]
        out[i] = candidates[order]
    return out


def knn_indices_batch(
    source: EmbeddingSet,
    queries: np.ndarray,
    cfg: KnnConfig,
    threads: int = 1,
    batch_size: int = 1024,
) -> np.ndarray:
    """m x k source row indices, ascending by distance then by row index.

    Queries are searched in blocks of at most `batch_size` rows, fewer when a
    block would exceed the element cap against a large source.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise ValidationError("queries must be an m x d matrix")
    _check_search(source, queries.shape[1], cfg)
    if not np.all(np.isfinite(queries)):
        raise ValidationError("queries contain non-finite values")

    prepared = _PreparedSource(source, cfg.metric)
    prepared_queries = prepared.prepare_queries(queries)
    block = max(1, min(batch_size, _BLOCK_ELEMENTS // max(1, len(source))))
    starts = list(range(0, queries.shape[0], block))

    def run(start: int) -> np.ndarray:
        return _search_block(prepared, prepared_queries[start:start + block], cfg.k)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, starts))
    else:
        blocks = [run(start) for start in starts]
    if not blocks:
        return np.zeros((0, cfg.k), dtype=np.int64)
    return np.concatenate(blocks, axis=0)


def knn_indices(source: EmbeddingSet, query: Sequence[float], cfg: KnnConfig) -> List[int]:
    """Indices of the k source rows closest to one query"""
    vector = np.asarray(query, dtype=np.float64)
    if vector.ndim != 1:
        raise ValidationError("query must be a vector")
    _check_search(source, vector.shape[0], cfg)
    return knn_indices_batch(source, vector[None, :], cfg)[0].tolist()


def bounded_mean(values: Iterable[float], lo: float, hi: float) -> float:
    values = list(values)
    return min(max(math.fsum(values) / len(values), lo), hi)


def extrapolate_scores(
    source_emb: EmbeddingSet,
    source_scores: ScoreTable,
    dest_emb: EmbeddingSet,
    cfg: KnnConfig,
    threads: int = 1,
    batch_size: int = 1024,
) -> ScoreTable:
    """Each destination sample gets the mean score of its k nearest source samples"""
    missing = [i for i in source_emb.ids if i not in source_scores.entries]
    if missing:
        raise ValidationError(f"{len(missing)} source ids have no score, e.g. '{missing[0]}'")
    if source_emb.dim != dest_emb.dim:
        raise ValidationError(f"source dim {source_emb.dim} does not match destination dim {dest_emb.dim}")
    overlap = set(source_emb.ids) & set(dest_emb.ids)
    if overlap:
        logger.warning(f"{len(overlap)} ids appear in both source and destination sets")

    scores = source_scores.values(list(source_emb.ids))
    neighbours = knn_indices_batch(source_emb, dest_emb.vectors, cfg, threads, batch_size)
    entries = {}
    for sample_id, rows in zip(dest_emb.ids, neighbours):
        picked = scores[rows]
        entries[sample_id] = bounded_mean(picked.tolist(), float(picked.min()), float(picked.max()))

    logger.info(
        f"Extrapolated {len(entries)} scores from {len(source_emb)} sources "
        f"(k={cfg.k}, {DistanceMetric(cfg.metric).value})"
    )
    return ScoreTable(
        entries=entries,
        metric=source_scores.metric,
        params={
            **source_scores.params,
            "knn_k": cfg.k,
            "knn_metric": DistanceMetric(cfg.metric).value,
            "source_size": len(source_emb),
        },
        provenance=Provenance.EXTRAPOLATED,
    )


def mean_baseline(source_scores: ScoreTable, dest_ids: Sequence[str]) -> ScoreTable:
    """Every destination sample gets the mean of all source scores"""
    if len(source_scores) == 0:
        raise ValidationError("mean baseline needs at least one source score")
    values = source_scores.values()
    mean = bounded_mean(values.tolist(), float(values.min()), float(values.max()))
    return ScoreTable(
        entries={i: mean for i in dest_ids},
        metric=source_scores.metric,
        params={**source_scores.params, "baseline": "mean", "source_size": len(source_scores)},
        provenance=Provenance.EXTRAPOLATED,
    )


def mae(predicted: ScoreTable, truth: ScoreTable) -> float:
    """Mean absolute error over identical id sets"""
    if set(predicted.entries) != set(truth.entries):
        only_pred = set(predicted.entries) - set(truth.entries)
        only_truth = set(truth.entries) - set(predicted.entries)
        raise ValidationError(
            f"id sets differ: {len(only_pred)} only predicted, {len(only_truth)} only in truth"
        )
    if not truth.entries:
        raise ValidationError("MAE of empty tables is undefined")
    return math.fsum(abs(predicted.entries[i] - truth.entries[i]) for i in sorted(truth.entries)) / len(truth)


def merge_sources(
    parts: Sequence[Tuple[EmbeddingSet, ScoreTable]],
    mismatch_ratio: float = 2.0,
) -> Tuple[EmbeddingSet, ScoreTable]:
    """Concatenate id-disjoint (embeddings, scores) pairs verbatim"""
    if not parts:
        raise ValidationError("nothing to merge")
    if len(parts) == 1:
        return parts[0]

    dims = {emb.dim for emb, _ in parts}
    if len(dims) != 1:
        raise ValidationError(f"cannot merge embeddings of different dims {sorted(dims)}")
    metrics = {table.metric for _, table in parts}
    if len(metrics) != 1:
        raise ValidationError(f"cannot merge score tables of different metrics {sorted(m.value for m in metrics)}")

    ids: List[str] = []
    seen = set()
    for emb, table in parts:
        for sample_id in emb.ids:
            if sample_id in seen:
                raise ValidationError(f"id '{sample_id}' appears in more than one merged source")
            if sample_id not in table.entries:
                raise ValidationError(f"source id '{sample_id}' has no score")
            seen.add(sample_id)
            ids.append(sample_id)

    means = [table.mean() for _, table in parts if len(table)]
    if means and min(means) > 0 and max(means) / min(means) > mismatch_ratio:
        logger.warning(
            f"merged sources differ in mean score by {max(means) / min(means):.2f}x "
            f"(threshold {mismatch_ratio:.2f}x); scores are concatenated without rescaling"
        )

    labeled = any(emb.labels is not None for emb, _ in parts)
    merged_emb = EmbeddingSet(
        ids=tuple(ids),
        vectors=np.concatenate([emb.vectors for emb, _ in parts], axis=0),
        labels=np.concatenate([
            emb.labels if emb.labels is not None else np.full(len(emb), -1) for emb, _ in parts
        ]) if labeled else None,
    )
    merged_scores = ScoreTable(
        entries={i: table.entries[i] for emb, table in parts for i in emb.ids},
        metric=parts[0][1].metric,
        params={"merged": [table.params for _, table in parts]},
        provenance=parts[0][1].provenance,
    )
    return merged_emb, merged_scores


def split_holdout(
    emb: EmbeddingSet,
    scores: ScoreTable,
    fraction: float,
    seed: int = 0,
) -> Tuple[EmbeddingSet, ScoreTable, EmbeddingSet, ScoreTable]:
    """Seeded split into (train embeddings, train scores, holdout embeddings, holdout truth)"""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"holdout fraction must be in (0, 1), got {fraction}")
    n = len(emb)
    n_holdout = max(1, math.floor(fraction * n))
    if n_holdout >= n:
        raise ValidationError(f"holdout of {n_holdout} leaves no source rows out of {n}")

    perm = np.random.default_rng(seed).permutation(n)
    holdout_rows = np.sort(perm[:n_holdout])
    train_rows = np.sort(perm[n_holdout:])

    def table(rows: np.ndarray) -> ScoreTable:
        return ScoreTable(
            entries={emb.ids[r]: scores.entries[emb.ids[r]] for r in rows},
            metric=scores.metric,
            params=scores.params,
            provenance=scores.provenance,
        )

    return emb.take(train_rows.tolist()), table(train_rows), emb.take(holdout_rows.tolist()), table(holdout_rows)
