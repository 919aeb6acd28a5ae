"""Records and file formats"""

import json
import struct

import numpy as np
import pytest

from src.errors import FormatError, PrunekitIOError
from src.models.formats import (
    check_output_path, read_embeddings, read_labels, read_manifest, read_scores, read_traces,
    write_embeddings, write_manifest, write_scores, write_traces,
)
from src.models.records import (
    CertaintyTrace, EmbeddingSet, Metric, PruneManifest, PrunePolicy, Provenance, ScoreTable, Variant,
    du_upper_bound,
)

from .conftest import make_trace, random_traces


def test_read_single_trace(tmp_path):
    path = tmp_path / "one.traces.jsonl"
    path.write_text('{"id": "a", "label": 0, "variant": "clean", "certainties": [0.5, 0.5]}\n')
    loaded = read_traces(path)
    assert len(loaded.traces) == 1
    assert loaded.traces[0].epochs == 2
    assert loaded.traces[0].variant == Variant.CLEAN
    assert loaded.warnings == []


def test_out_of_range_certainty_names_id_and_index(tmp_path):
    path = tmp_path / "bad.traces.jsonl"
    path.write_text(
        '{"id": "ok", "label": 0, "variant": "clean", "certainties": [0.5]}\n'
        '{"id": "x7", "label": 1, "variant": "clean", "certainties": [0.2, 1.3]}\n'
    )
    with pytest.raises(FormatError) as excinfo:
        read_traces(path)
    message = str(excinfo.value)
    assert "x7" in message and "index 1" in message and "line 2" in message


@pytest.mark.parametrize("fields, message", [
    ('"label": true, "certainties": [0.5, 0.25]', "label must be an integer"),
    ('"label": "1", "certainties": [0.5, 0.25]', "label must be an integer"),
    ('"label": 1.0, "certainties": [0.5, 0.25]', "label must be an integer"),
    ('"label": 0, "certainties": ["0.5", "0.25"]', "index 0 is not a number"),
    ('"label": 0, "certainties": [0.5, false]', "index 1 is not a number"),
    ('"label": 0, "certainties": "0.5"', "list of numbers"),
])
def test_trace_values_are_not_coerced(tmp_path, fields, message):
    path = tmp_path / "typed.traces.jsonl"
    path.write_text('{"id": "a", "variant": "clean", ' + fields + '}\n')
    with pytest.raises(FormatError, match=message) as excinfo:
        read_traces(path)
    assert "line 1" in str(excinfo.value)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.traces.jsonl"
    path.write_text('{"id": "a", "label": 0, "variant": "clean", "certainties": [0.5]}\n{not json\n')
    with pytest.raises(FormatError, match="line 2"):
        read_traces(path)


def test_duplicate_trace_id_is_an_error(tmp_path):
    path = tmp_path / "dup.traces.jsonl"
    write_traces([make_trace("a", [0.1]), make_trace("a", [0.2])], path)
    with pytest.raises(FormatError, match="duplicate"):
        read_traces(path)


def test_mixed_epoch_counts_warn(tmp_path):
    path = tmp_path / "mixed.traces.jsonl"
    write_traces([make_trace("a", [0.1, 0.2]), make_trace("b", [0.1, 0.2, 0.3])], path)
    loaded = read_traces(path)
    assert len(loaded.traces) == 2
    assert len(loaded.warnings) == 1 and "'b'" in loaded.warnings[0]


def test_trace_round_trip_preserves_order_and_values(tmp_path, rng):
    traces = random_traces(rng, 100, 7)
    path = tmp_path / "rt.traces.jsonl"
    write_traces(traces, path)
    assert read_traces(path).traces == traces


def test_trace_writer_is_deterministic(tmp_path, rng):
    traces = random_traces(rng, 20, 5)
    write_traces(traces, tmp_path / "a.jsonl")
    write_traces(traces, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_scores_round_trip(tmp_path):
    table = ScoreTable(
        entries={"a": 0.1, "b": 1 / 3, "c": 0.0},
        metric=Metric.FP,
        params={"lo": 1, "hi": 16},
        provenance=Provenance.EXTRAPOLATED,
    )
    path = tmp_path / "x.scores.jsonl"
    write_scores(table, path)
    assert read_scores(path) == table


def test_empty_score_table_writes_header_only(tmp_path):
    path = tmp_path / "empty.scores.jsonl"
    write_scores(ScoreTable(entries={}, metric=Metric.DU), path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["metric"] == "DU"
    assert len(read_scores(path)) == 0


def test_score_file_without_header_is_rejected(tmp_path):
    path = tmp_path / "nohead.scores.jsonl"
    path.write_text('{"id": "a", "score": 0.1}\n')
    with pytest.raises(FormatError, match="header"):
        read_scores(path)


def test_score_table_rejects_negative_and_non_finite():
    with pytest.raises(ValueError):
        ScoreTable(entries={"a": -0.1}, metric=Metric.FP)
    with pytest.raises(ValueError):
        ScoreTable(entries={"a": float("nan")}, metric=Metric.FP)


def test_du_score_bound_depends_on_window():
    bound = du_upper_bound(2)
    assert bound == pytest.approx(0.7071067811865476)
    ScoreTable(entries={"a": 0.7071067811865476}, metric=Metric.DU, params={"window": 2})
    with pytest.raises(ValueError, match="exceeds"):
        ScoreTable(entries={"a": 0.8}, metric=Metric.DU, params={"window": 2})


@pytest.mark.parametrize("suffix", [".emb", ".emb.jsonl"])
def test_embedding_round_trip(tmp_path, rng, suffix):
    # float32-representable values survive the binary format bit for bit
    vectors = rng.normal(size=(50, 8)).astype(np.float32).astype(np.float64)
    labels = rng.integers(-1, 3, size=50)
    labels[0] = 1
    emb = EmbeddingSet(ids=tuple(f"id{i}" for i in range(50)), vectors=vectors, labels=labels)
    path = tmp_path / f"e{suffix}"
    write_embeddings(emb, path)
    loaded = read_embeddings(path)
    assert loaded.ids == emb.ids
    assert np.array_equal(loaded.vectors, emb.vectors)
    assert np.array_equal(loaded.labels, emb.labels)


def test_binary_embedding_layout(tmp_path):
    emb = EmbeddingSet(ids=("a", "b"), vectors=[[1.0, 2.0], [3.0, 4.0]], labels=[0, -1])
    path = tmp_path / "x.emb"
    write_embeddings(emb, path)
    payload = path.read_bytes()
    assert payload[:4] == b"EMB1"
    assert struct.unpack_from("<II", payload, 4) == (2, 2)
    assert struct.unpack_from("<4f", payload, 12) == (1.0, 2.0, 3.0, 4.0)
    assert payload[28:32] == b"a\nb\n"
    assert struct.unpack_from("<2i", payload, 32) == (0, -1)


def test_jsonl_embedding_dim_mismatch_reports_row(tmp_path):
    path = tmp_path / "bad.emb.jsonl"
    path.write_text(
        '{"dim": 4, "count": 2}\n'
        '{"id": "a", "label": 0, "vector": [1, 2, 3, 4]}\n'
        '{"id": "b", "label": 0, "vector": [1, 2, 3]}\n'
    )
    with pytest.raises(FormatError, match="row 1"):
        read_embeddings(path)


@pytest.mark.parametrize("row, message", [
    ('{"id": "b", "label": 0, "vector": [1, "x", 3, 4]}', "index 1 is not a number"),
    ('{"id": "b", "label": 0, "vector": [1, 2, null, 4]}', "index 2 is not a number"),
    ('{"id": "b", "label": "zero", "vector": [1, 2, 3, 4]}', "label must be an integer"),
    ('{"id": "b", "label": true, "vector": [1, 2, 3, 4]}', "label must be an integer"),
])
def test_jsonl_embedding_bad_values_report_row(tmp_path, row, message):
    path = tmp_path / "bad.emb.jsonl"
    path.write_text('{"dim": 4, "count": 2}\n{"id": "a", "label": 0, "vector": [1, 2, 3, 4]}\n' + row + "\n")
    with pytest.raises(FormatError, match=message) as excinfo:
        read_embeddings(path)
    assert "row 1, line 3" in str(excinfo.value)


def test_jsonl_embedding_header_dim_must_be_an_integer(tmp_path):
    path = tmp_path / "bad.emb.jsonl"
    path.write_text('{"dim": "four"}\n')
    with pytest.raises(FormatError, match="header dim"):
        read_embeddings(path)


def test_binary_embedding_bad_magic(tmp_path):
    path = tmp_path / "bad.emb"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(FormatError, match="magic"):
        read_embeddings(path)


def test_embedding_set_rejects_duplicates_and_non_finite():
    with pytest.raises(ValueError, match="duplicate"):
        EmbeddingSet(ids=("a", "a"), vectors=[[1.0], [2.0]])
    with pytest.raises(ValueError, match="non-finite"):
        EmbeddingSet(ids=("a",), vectors=[[float("inf")]])


def test_manifest_round_trip(tmp_path):
    manifest = PruneManifest(kept=["a", "c"], removed=["b"], policy=PrunePolicy(fraction=0.34))
    path = tmp_path / "m.json"
    write_manifest(manifest, path)
    assert read_manifest(path) == manifest


def test_manifest_must_be_disjoint():
    with pytest.raises(ValueError, match="both kept and removed"):
        PruneManifest(kept=["a", "b"], removed=["b"], policy=PrunePolicy())


def test_read_labels_from_traces_and_embeddings(tmp_path):
    traces = tmp_path / "t.traces.jsonl"
    write_traces([make_trace("a", [0.1], label=2), make_trace("b", [0.2], label=0)], traces)
    assert read_labels(traces) == {"a": 2, "b": 0}

    emb = tmp_path / "e.emb"
    write_embeddings(EmbeddingSet(ids=("a", "b"), vectors=[[0.0], [1.0]], labels=[1, -1]), emb)
    assert read_labels(emb) == {"a": 1}


def test_check_output_path_refuses_existing(tmp_path):
    path = tmp_path / "exists.txt"
    path.write_text("x")
    with pytest.raises(PrunekitIOError, match="--force"):
        check_output_path(path)
    assert check_output_path(path, force=True) == path


def test_missing_input_is_io_error(tmp_path):
    with pytest.raises(PrunekitIOError):
        read_traces(tmp_path / "absent.traces.jsonl")


def test_trace_alias_and_field_name_agree():
    assert CertaintyTrace(id="a", label=0, certainties=(0.5,)) == make_trace("a", [0.5])
