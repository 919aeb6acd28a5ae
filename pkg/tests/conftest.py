"""Shared fixtures for the prunekit test suite"""

import json
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pytest

from src.models.formats import write_scores, write_traces
from src.models.records import CertaintyTrace, EmbeddingSet, Metric, ScoreTable, Variant


def make_trace(sample_id: str, values: Sequence[float], label: int = 0,
               variant: Variant = Variant.CLEAN) -> CertaintyTrace:
    return CertaintyTrace(sample_id=sample_id, label=label, variant=variant, certainties=tuple(values))


def make_scores(entries: Dict[str, float], metric: Metric = Metric.DU) -> ScoreTable:
    return ScoreTable(entries=entries, metric=metric)


def random_traces(rng: np.random.Generator, n: int, epochs: int) -> List[CertaintyTrace]:
    return [
        make_trace(f"s{i:04d}", rng.uniform(0.0, 1.0, epochs).tolist(), label=int(i % 3))
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_class_scores() -> ScoreTable:
    """4 + 4 samples over two classes"""
    return make_scores({
        "a0": 0.9, "a1": 0.1, "a2": 0.5, "a3": 0.7,
        "b0": 0.3, "b1": 0.8, "b2": 0.2, "b3": 0.6,
    })


@pytest.fixture
def two_class_labels() -> Dict[str, int]:
    return {f"{c}{i}": label for label, c in enumerate("ab") for i in range(4)}


@pytest.fixture
def constant_traces_file(tmp_path: Path) -> Path:
    path = tmp_path / "const.traces.jsonl"
    write_traces([make_trace("c", [0.7] * 20)], path)
    return path


@pytest.fixture
def two_class_files(tmp_path: Path, two_class_scores, two_class_labels):
    """(scores path, labels path) for the 4 + 4 fixture"""
    scores_path = tmp_path / "fixture.scores.jsonl"
    write_scores(two_class_scores, scores_path)
    labels_path = tmp_path / "fixture.emb.jsonl"
    with open(labels_path, "w") as f:
        for sample_id, label in sorted(two_class_labels.items()):
            f.write(json.dumps({"id": sample_id, "label": label, "vector": [1.0, float(label)]}) + "\n")
    return scores_path, labels_path


def line_embeddings(points: Sequence[Sequence[float]], prefix: str = "e") -> EmbeddingSet:
    return EmbeddingSet(ids=tuple(f"{prefix}{i}" for i in range(len(points))), vectors=np.array(points, dtype=float))
