"""Grid search over extrapolation settings"""

import json

import numpy as np
import pytest

from src.errors import FormatError, ValidationError
from src.extrapolation.grid_search import GridSpec, grid_search, load_grid_spec
from src.extrapolation.knn import knn_indices_batch
from src.models.formats import write_embeddings, write_scores
from src.models.records import EmbeddingSet, KnnConfig, Metric, ScoreTable

from .conftest import make_scores


def lookup_truth(source: EmbeddingSet, scores: ScoreTable, holdout: EmbeddingSet, metric: str) -> ScoreTable:
    """Holdout truth equal to the score of each point's nearest source sample"""
    nearest = knn_indices_batch(source, holdout.vectors, KnnConfig(k=1, metric=metric))[:, 0]
    return ScoreTable(
        entries={i: scores.entries[source.ids[row]] for i, row in zip(holdout.ids, nearest)},
        metric=Metric.DU,
    )


def random_pair(rng, n, dim, prefix):
    emb = EmbeddingSet(ids=tuple(f"{prefix}{i}" for i in range(n)), vectors=rng.normal(size=(n, dim)))
    return emb, make_scores({i: float(v) for i, v in zip(emb.ids, rng.uniform(0, 0.5, n))})


def clustered(rng, n, centers, prefix):
    labels = rng.integers(0, len(centers), n)
    vectors = centers[labels] + 0.3 * rng.normal(size=(n, centers.shape[1]))
    return EmbeddingSet(ids=tuple(f"{prefix}{i}" for i in range(n)), vectors=vectors)


def lipschitz_scores(emb: EmbeddingSet, direction: np.ndarray) -> ScoreTable:
    values = np.abs(emb.vectors @ direction)
    return make_scores(dict(zip(emb.ids, values.tolist())), metric=Metric.FP)


def test_nearest_lookup_holdout_has_zero_error_at_k1(rng):
    source, scores = random_pair(rng, 200, 6, "s")
    holdout = EmbeddingSet(ids=tuple(f"h{i}" for i in range(40)), vectors=rng.normal(size=(40, 6)))
    truth = lookup_truth(source, scores, holdout, "euclidean")
    spec = GridSpec(k_values=[1, 5, 10], metrics=["euclidean", "cosine"], source_variants={"v": (source, scores)})
    result = grid_search(spec, holdout, truth)
    best = result.best()
    assert best["mae"] == 0.0
    assert best["k"] == 1 and best["metric"] == "euclidean"
    assert list(result.cells["mae"]) == sorted(result.cells["mae"])
    assert len(result.cells) == 6 and len(result.baselines) == 1


def test_single_cell_spec(rng):
    source, scores = random_pair(rng, 30, 3, "s")
    holdout, truth = random_pair(rng, 10, 3, "h")
    spec = GridSpec(k_values=[3], metrics=["cosine"], source_variants={"only": (source, scores)})
    result = grid_search(spec, holdout, truth)
    assert len(result.cells) == 1
    assert list(result.baselines["source_variant"]) == ["only"]


def test_prefix_cells_match_direct_extrapolation(rng):
    from src.extrapolation.knn import extrapolate_scores, mae

    source, scores = random_pair(rng, 80, 4, "s")
    holdout, truth = random_pair(rng, 25, 4, "h")
    spec = GridSpec(k_values=[2, 9], metrics=["euclidean"], source_variants={"v": (source, scores)})
    cells = grid_search(spec, holdout, truth).cells
    for k in (2, 9):
        direct = mae(extrapolate_scores(source, scores, holdout, KnnConfig(k=k, metric="euclidean")), truth)
        assert float(cells.loc[cells["k"] == k, "mae"].iloc[0]) == pytest.approx(direct, rel=1e-15, abs=0)


def test_holdout_must_be_disjoint_from_sources(rng):
    source, scores = random_pair(rng, 30, 3, "s")
    spec = GridSpec(k_values=[1], metrics=["cosine"], source_variants={"v": (source, scores)})
    with pytest.raises(ValidationError, match="shares"):
        grid_search(spec, source, scores)


def test_csv_has_cells_then_baselines(tmp_path, rng):
    source, scores = random_pair(rng, 30, 3, "s")
    holdout, truth = random_pair(rng, 10, 3, "h")
    spec = GridSpec(k_values=[1, 2], metrics=["cosine"], source_variants={"v": (source, scores)})
    path = tmp_path / "grid.csv"
    grid_search(spec, holdout, truth).write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "source_variant,metric,k,mae"
    assert lines[3] == ""
    assert lines[4] == "source_variant,baseline_mae"
    assert lines[5].startswith("v,")


@pytest.mark.slow
def test_extrapolation_beats_mean_baseline_on_lipschitz_scores():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        centers = rng.normal(scale=4.0, size=(5, 16))
        direction = rng.normal(size=16)
        direction /= np.linalg.norm(direction)
        source = clustered(rng, 2000, centers, "s")
        holdout = clustered(rng, 500, centers, "h")
        spec = GridSpec(
            k_values=[1, 5, 10, 25, 50],
            metrics=["euclidean", "cosine"],
            source_variants={"v": (source, lipschitz_scores(source, direction))},
        )
        result = grid_search(spec, holdout, lipschitz_scores(holdout, direction))
        if result.best()["mae"] < float(result.baselines["baseline_mae"].iloc[0]):
            wins += 1
    assert wins >= 19


def write_pair(tmp_path, emb, scores, name):
    write_embeddings(emb, tmp_path / f"{name}.emb")
    write_scores(scores, tmp_path / f"{name}.scores.jsonl")
    return {"embeddings": f"{name}.emb", "scores": f"{name}.scores.jsonl"}


def test_load_spec_with_split_holdout(tmp_path, rng):
    first = random_pair(rng, 40, 3, "a")
    second = random_pair(rng, 20, 3, "b")
    spec_path = tmp_path / "grid.json"
    spec_path.write_text(json.dumps({
        "k_values": [1, 3],
        "metrics": ["euclidean"],
        "source_variants": {
            "merged": [write_pair(tmp_path, *first, "a"), write_pair(tmp_path, *second, "b")],
            "first": write_pair(tmp_path, *first, "a2"),
        },
        "holdout": {"from_variant": "merged", "fraction": 0.25, "seed": 7},
    }))
    spec, holdout_emb, truth = load_grid_spec(spec_path)
    assert len(holdout_emb) == 15
    assert set(truth.entries) == set(holdout_emb.ids)
    for emb, _ in spec.source_variants.values():
        assert not set(emb.ids) & set(holdout_emb.ids)
    assert len(spec.source_variants["merged"][0]) == 45
    grid_search(spec, holdout_emb, truth)


def test_load_spec_needs_a_holdout(tmp_path, rng):
    spec_path = tmp_path / "grid.json"
    spec_path.write_text(json.dumps({"source_variants": {"v": write_pair(tmp_path, *random_pair(rng, 5, 2, "s"), "v")}}))
    with pytest.raises(FormatError, match="holdout"):
        load_grid_spec(spec_path)
    spec, holdout_emb, _ = load_grid_spec(spec_path, holdout_fraction=0.4, k_values=[1])
    assert len(holdout_emb) == 2
    assert spec.k_values == [1]


def test_spec_without_holdout_uses_default_fraction(tmp_path, rng):
    spec_path = tmp_path / "grid.json"
    spec_path.write_text(json.dumps({"source_variants": {"v": write_pair(tmp_path, *random_pair(rng, 20, 2, "s"), "v")}}))
    spec, holdout_emb, _ = load_grid_spec(spec_path, default_holdout_fraction=0.25, holdout_seed=3)
    assert len(holdout_emb) == 5
    assert len(spec.source_variants["v"][0]) == 15
    _, explicit, _ = load_grid_spec(spec_path, holdout_fraction=0.5, default_holdout_fraction=0.25)
    assert len(explicit) == 10
