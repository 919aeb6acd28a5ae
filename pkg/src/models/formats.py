"""Readers and writers for trace, score, embedding and manifest files"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Iterator, List, NamedTuple, Tuple, Union

import numpy as np
import pydantic

from ..errors import FormatError, PrunekitIOError, ValidationError
from .records import (
    CertaintyTrace, EmbeddingSet, PruneManifest, ScoreTable,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EMB_MAGIC = b"EMB1"
_EMB_HEADER = struct.Struct("<4sII")


class TraceFile(NamedTuple):
    """Traces in file order plus non-fatal findings"""
    traces: List[CertaintyTrace]
    warnings: List[str]


def _error_text(exc: pydantic.ValidationError) -> str:
    return "; ".join(err["msg"].removeprefix("Value error, ") for err in exc.errors())


def _json_lines(path: Path) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line number, object) for each non-blank line"""
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise PrunekitIOError(f"cannot read {path}: {e}") from e
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(path, f"malformed JSON: {e.msg}", f"line {line_no}") from e
            if not isinstance(record, dict):
                raise FormatError(path, "expected a JSON object", f"line {line_no}")
            yield line_no, record


def _write_lines(path: Path, lines: Iterator[str]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for line in lines:
                f.write(line)
                f.write("\n")
    except OSError as e:
        raise PrunekitIOError(f"cannot write {path}: {e}") from e


def _dumps(record: Dict[str, Any], sort_keys: bool = False) -> str:
    return json.dumps(record, sort_keys=sort_keys, allow_nan=False)


def check_output_path(path: PathLike, force: bool = False) -> Path:
    """Refuse to clobber an existing file unless forced"""
    path = Path(path)
    if path.exists() and not force:
        raise PrunekitIOError(f"{path} already exists (use --force to overwrite)")
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


# Traces

def read_traces(path: PathLike) -> TraceFile:
    """Read a `.traces.jsonl` file, validating every record"""
    path = Path(path)
    traces: List[CertaintyTrace] = []
    warnings: List[str] = []
    seen: Dict[str, int] = {}
    expected_epochs = None

    for line_no, record in _json_lines(path):
        missing = [key for key in ("id", "label", "variant", "certainties") if key not in record]
        if missing:
            raise FormatError(path, f"missing keys {missing}", f"line {line_no}")
        try:
            trace = CertaintyTrace(**record)
        except pydantic.ValidationError as e:
            raise FormatError(path, _error_text(e), f"line {line_no}") from e

        if trace.sample_id in seen:
            raise FormatError(
                path,
                f"duplicate sample id '{trace.sample_id}' (first on line {seen[trace.sample_id]})",
                f"line {line_no}",
            )
        seen[trace.sample_id] = line_no

        if expected_epochs is None:
            expected_epochs = trace.epochs
        elif trace.epochs != expected_epochs:
            warnings.append(
                f"line {line_no}: sample '{trace.sample_id}' has {trace.epochs} epochs, "
                f"first record has {expected_epochs}"
            )
        traces.append(trace)

    for warning in warnings[:5]:
        logger.warning(f"{path}: {warning}")
    if len(warnings) > 5:
        logger.warning(f"{path}: ... and {len(warnings) - 5} more epoch-count mismatches")
    logger.info(f"Read {len(traces)} traces from {path}")
    return TraceFile(traces, warnings)


def write_traces(traces: List[CertaintyTrace], path: PathLike) -> None:
    path = Path(path)
    _write_lines(path, (
        _dumps({
            "id": t.sample_id,
            "label": t.label,
            "variant": t.variant.value,
            "certainties": list(t.certainties),
        })
        for t in traces
    ))
    logger.info(f"Wrote {len(traces)} traces to {path}")


# Scores

def read_scores(path: PathLike) -> ScoreTable:
    """Read a `.scores.jsonl` file: one header line, then one line per sample"""
    path = Path(path)
    header = None
    entries: Dict[str, float] = {}

    for line_no, record in _json_lines(path):
        if header is None:
            if "metric" not in record:
                raise FormatError(path, "first line must be the score header", f"line {line_no}")
            header = record
            continue
        if set(record) != {"id", "score"}:
            raise FormatError(path, "score lines need exactly the keys 'id' and 'score'", f"line {line_no}")
        sample_id, score = record["id"], record["score"]
        if not isinstance(sample_id, str) or not sample_id:
            raise FormatError(path, "id must be a non-empty string", f"line {line_no}")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise FormatError(path, f"score for '{sample_id}' is not a number", f"line {line_no}")
        if sample_id in entries:
            raise FormatError(path, f"duplicate sample id '{sample_id}'", f"line {line_no}")
        entries[sample_id] = float(score)

    if header is None:
        raise FormatError(path, "empty score file (header line required)", "line 1")
    try:
        table = ScoreTable(
            entries=entries,
            metric=header["metric"],
            params=header.get("params", {}),
            provenance=header.get("provenance", "computed"),
        )
    except pydantic.ValidationError as e:
        raise FormatError(path, _error_text(e)) from e
    logger.info(f"Read {len(table)} {table.metric.value} scores from {path}")
    return table


def write_scores(table: ScoreTable, path: PathLike) -> None:
    path = Path(path)
    header = {
        "metric": table.metric.value,
        "params": table.params,
        "provenance": table.provenance.value,
    }
    lines = [_dumps(header, sort_keys=True)]
    lines.extend(_dumps({"id": i, "score": s}) for i, s in table.entries.items())
    _write_lines(path, iter(lines))
    logger.info(f"Wrote {len(table)} scores to {path}")


# Embeddings

def _is_binary_embedding(path: Path) -> bool:
    return path.suffix == ".emb"


def read_embeddings(path: PathLike) -> EmbeddingSet:
    """Read `.emb` (binary) or `.emb.jsonl` embeddings"""
    path = Path(path)
    if _is_binary_embedding(path):
        emb = _read_embeddings_binary(path)
    else:
        emb = _read_embeddings_jsonl(path)
    logger.info(f"Read {len(emb)} embeddings of dim {emb.dim} from {path}")
    return emb


def write_embeddings(emb: EmbeddingSet, path: PathLike) -> None:
    path = Path(path)
    if _is_binary_embedding(path):
        _write_embeddings_binary(emb, path)
    else:
        _write_embeddings_jsonl(emb, path)
    logger.info(f"Wrote {len(emb)} embeddings to {path}")


def _read_embeddings_binary(path: Path) -> EmbeddingSet:
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise PrunekitIOError(f"cannot read {path}: {e}") from e

    if len(payload) < _EMB_HEADER.size:
        raise FormatError(path, "truncated header", "byte 0")
    magic, count, dim = _EMB_HEADER.unpack_from(payload, 0)
    if magic != EMB_MAGIC:
        raise FormatError(path, f"bad magic {magic!r}, expected {EMB_MAGIC!r}", "byte 0")
    if dim < 1:
        raise FormatError(path, "header dim must be positive", "byte 8")

    vec_start = _EMB_HEADER.size
    vec_end = vec_start + 4 * count * dim
    label_start = len(payload) - 4 * count
    if label_start < vec_end:
        raise FormatError(
            path,
            f"file too short for {count} rows of dim {dim}",
            f"byte {len(payload)}",
        )

    vectors = np.frombuffer(payload, dtype="<f4", count=count * dim, offset=vec_start)
    vectors = vectors.reshape(count, dim).astype(np.float64)
    bad = ~np.isfinite(vectors)
    if bad.any():
        raise FormatError(path, "non-finite embedding value", f"row {int(np.argwhere(bad)[0][0])}")

    try:
        id_block = payload[vec_end:label_start].decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(path, "ids are not valid UTF-8", f"byte {vec_end + e.start}") from e
    if count and not id_block.endswith("\n"):
        raise FormatError(path, "id block must be newline-terminated", f"byte {label_start}")
    ids = id_block.split("\n")[:-1] if count else []
    if len(ids) != count:
        raise FormatError(
            path,
            f"header declares {count} rows but id block holds {len(ids)} ids "
            f"(a row length other than dim {dim} shifts the id block)",
            f"byte {vec_end}",
        )

    labels = np.frombuffer(payload, dtype="<i4", count=count, offset=label_start).astype(np.int64)
    try:
        return EmbeddingSet(
            ids=tuple(ids),
            vectors=vectors,
            labels=None if count == 0 or np.all(labels == -1) else labels,
        )
    except pydantic.ValidationError as e:
        raise FormatError(path, _error_text(e)) from e


def _write_embeddings_binary(emb: EmbeddingSet, path: Path) -> None:
    vectors = emb.vectors.astype("<f4")
    if not np.all(np.isfinite(vectors)):
        raise ValidationError("embedding values overflow float32", str(path))
    for row, sample_id in enumerate(emb.ids):
        if "\n" in sample_id:
            raise ValidationError(f"id '{sample_id!r}' contains a newline", f"row {row}")
    labels = np.full(len(emb), -1, dtype="<i4") if emb.labels is None else emb.labels.astype("<i4")

    try:
        with open(path, "wb") as f:
            f.write(_EMB_HEADER.pack(EMB_MAGIC, len(emb), emb.dim))
            f.write(np.ascontiguousarray(vectors).tobytes())
            f.write("".join(f"{i}\n" for i in emb.ids).encode("utf-8"))
            f.write(labels.tobytes())
    except OSError as e:
        raise PrunekitIOError(f"cannot write {path}: {e}") from e


def _read_embeddings_jsonl(path: Path) -> EmbeddingSet:
    ids: List[str] = []
    rows: List[List[float]] = []
    labels: List[int] = []
    dim = None

    for line_no, record in _json_lines(path):
        if "vector" not in record:
            if "dim" in record and not ids and dim is None:
                dim = record["dim"]
                if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
                    raise FormatError(path, f"header dim must be a positive integer, got {dim!r}",
                                      f"line {line_no}")
                continue
            raise FormatError(path, "missing key 'vector'", f"line {line_no}")
        where = f"row {len(rows)}, line {line_no}"
        vector = record["vector"]
        if not isinstance(vector, list):
            raise FormatError(path, "vector must be an array", where)
        if dim is None:
            dim = len(vector)
        if len(vector) != dim:
            raise FormatError(path, f"expected {dim} values, got {len(vector)}", where)
        for index, value in enumerate(vector):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise FormatError(path, f"vector value at index {index} is not a number: {value!r}", where)
        label = record.get("label")
        if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
            raise FormatError(path, f"label must be an integer, got {label!r}", where)
        ids.append(record.get("id"))
        rows.append(vector)
        labels.append(-1 if label is None else label)

    if dim is None:
        raise FormatError(path, "empty embedding file without a dim header", "line 1")
    try:
        return EmbeddingSet(
            ids=tuple(ids),
            vectors=np.array(rows, dtype=np.float64).reshape(len(rows), dim),
            labels=None if not labels or all(lab == -1 for lab in labels) else labels,
        )
    except (pydantic.ValidationError, TypeError, ValueError) as e:
        message = _error_text(e) if isinstance(e, pydantic.ValidationError) else str(e)
        raise FormatError(path, message) from e


def _write_embeddings_jsonl(emb: EmbeddingSet, path: Path) -> None:
    labels = emb.labels
    lines = [_dumps({"dim": emb.dim, "count": len(emb)})]
    for row, sample_id in enumerate(emb.ids):
        label = None if labels is None or labels[row] < 0 else int(labels[row])
        lines.append(_dumps({
            "id": sample_id,
            "label": label,
            "vector": emb.vectors[row].tolist(),
        }))
    _write_lines(path, iter(lines))


# Manifests

def write_manifest(manifest: PruneManifest, path: PathLike) -> None:
    path = Path(path)
    data = {
        "kept": manifest.kept,
        "removed": manifest.removed,
        "policy": manifest.policy.model_dump(mode="json"),
    }
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise PrunekitIOError(f"cannot write {path}: {e}") from e
    logger.info(f"Wrote manifest ({len(manifest.kept)} kept, {len(manifest.removed)} removed) to {path}")


def read_manifest(path: PathLike) -> PruneManifest:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise PrunekitIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(path, f"malformed JSON: {e.msg}", f"line {e.lineno}") from e
    try:
        return PruneManifest(**data)
    except (pydantic.ValidationError, TypeError) as e:
        message = _error_text(e) if isinstance(e, pydantic.ValidationError) else str(e)
        raise FormatError(path, message) from e


# Labels

def read_labels(path: PathLike) -> Dict[str, int]:
    """id -> class label from an embedding file or a trace file"""
    path = Path(path)
    name = path.name
    if name.endswith(".emb") or name.endswith(".emb.jsonl"):
        return read_embeddings(path).label_map()
    return {t.sample_id: t.label for t in read_traces(path).traces}
