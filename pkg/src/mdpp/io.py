"""On-disk formats: binary feature files, annotation/summary/checkpoint files.

Feature files are binary: magic ``MDV1``, then M, N, D as little-endian
uint32, then M*N*D little-endian float32 values in view-major, time-major,
dim order.

Annotations and summaries are JSON (structured text, diffable, lossless for
non-ASCII ids). Checkpoints carry two text header lines (magic, then a JSON
object) followed by a raw little-endian float64 blob of the weights.

All writers go through an atomic temp-file + rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .data_model import AnnotationSet, MultiViewSequence, Summary
from .errors import DataError, FormatError, ValidationError

FEATURE_MAGIC = b"MDV1"
CHECKPOINT_MAGIC = "MDPP-CKPT 1"
_HEADER = struct.Struct("<4sIII")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- feature files -----------------------------------------------------------


def write_feature_file(sequence: MultiViewSequence, path) -> None:
    m, n, d = sequence.features.shape
    header = _HEADER.pack(FEATURE_MAGIC, m, n, d)
    meta = json.dumps(
        {"sequence_id": sequence.sequence_id, "fps_note": sequence.fps_note},
        ensure_ascii=False,
    ).encode("utf-8")
    payload = sequence.features.astype("<f4", copy=False).tobytes(order="C")
    atomic_write_bytes(path, header + struct.pack("<I", len(meta)) + meta + payload)


def read_feature_file(path) -> MultiViewSequence:
    """Parse a binary feature file; rejects truncated or non-finite payloads."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: file too short for a feature header")
    magic, m, n, d = _HEADER.unpack_from(raw, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if min(m, n, d) < 1:
        raise FormatError(f"{path}: non-positive dimensions ({m}, {n}, {d})")
    (meta_len,) = struct.unpack_from("<I", raw, _HEADER.size)
    body = _HEADER.size + 4
    if len(raw) < body + meta_len:
        raise FormatError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(raw[body : body + meta_len].decode("utf-8"))
        sequence_id = str(meta["sequence_id"])
        fps_note = str(meta.get("fps_note", ""))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: unreadable metadata block: {exc}") from exc
    payload = raw[body + meta_len :]
    expected = m * n * d * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    feats = np.frombuffer(payload, dtype="<f4").reshape(m, n, d)
    if not np.isfinite(feats).all():
        raise DataError(f"{path}: payload contains non-finite values")
    return MultiViewSequence(sequence_id=sequence_id, features=feats, fps_note=fps_note)


# -- annotations -------------------------------------------------------------


def write_annotations(annotations: AnnotationSet, path) -> None:
    doc = {
        "format": "mdpp-annotations-1",
        "sequence_id": annotations.sequence_id,
        "stage": annotations.stage,
        "users": [
            {"user_id": uid, "selections": [[v, t] for v, t in sels]}
            for uid, sels in annotations.users
        ],
    }
    atomic_write_text(path, json.dumps(doc, ensure_ascii=False, indent=2) + "\n")


def read_annotations(path, sequence: MultiViewSequence | None = None) -> AnnotationSet:
    """Parse an annotation file, optionally validating indices against a sequence."""
    doc = _load_json(path, "mdpp-annotations-1")
    try:
        annotations = AnnotationSet(
            sequence_id=str(doc["sequence_id"]),
            stage=int(doc["stage"]),
            users=tuple(
                (u["user_id"], tuple((v, t) for v, t in u["selections"]))
                for u in doc["users"]
            ),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed annotation document: {exc}") from exc
    if sequence is not None:
        annotations.validate_shape(sequence.num_views, sequence.num_steps)
    return annotations


# -- summaries ---------------------------------------------------------------


def write_summary(summary: Summary, path) -> None:
    doc = {
        "format": "mdpp-summary-1",
        "budget_fraction": summary.budget_fraction,
        "selections": [[v, t] for v, t in summary.selections],
    }
    atomic_write_text(path, json.dumps(doc, ensure_ascii=False, indent=2) + "\n")


def read_summary(path, sequence: MultiViewSequence | None = None) -> Summary:
    doc = _load_json(path, "mdpp-summary-1")
    try:
        summary = Summary(
            selections=tuple((v, t) for v, t in doc["selections"]),
            budget_fraction=float(doc["budget_fraction"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed summary document: {exc}") from exc
    if sequence is not None:
        for v, t in summary.selections:
            if v >= sequence.num_views or t >= sequence.num_steps:
                raise ValidationError(
                    f"{path}: selection ({v}, {t}) outside sequence shape"
                )
    return summary


def _load_json(path, expected_format: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise FormatError(f"{path}: expected a {expected_format!r} document")
    return doc


# -- checkpoints -------------------------------------------------------------


def write_checkpoint(path, header: dict, blocks: list[tuple[str, np.ndarray]]) -> None:
    """Write named float64 arrays after a text header.

    ``header`` is caller metadata (dims, seed, training info); the layout of
    ``blocks`` (name + shape per array) is recorded so readers can rebuild
    them without out-of-band knowledge.
    """
    layout = [[name, list(arr.shape)] for name, arr in blocks]
    doc = dict(header)
    doc["layout"] = layout
    doc["dtype"] = "<f8"
    text = CHECKPOINT_MAGIC + "\n" + json.dumps(doc, ensure_ascii=False) + "\n"
    blob = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in blocks)
    atomic_write_bytes(path, text.encode("utf-8") + blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    if first < 0 or raw[:first].decode("utf-8", "replace") != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise FormatError(f"{path}: missing checkpoint header line")
    try:
        doc = json.loads(raw[first + 1 : second].decode("utf-8"))
        layout = [(str(name), tuple(int(s) for s in shape)) for name, shape in doc.pop("layout")]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from exc
    blob = raw[second + 1 :]
    total = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in layout)
    if len(blob) != total * 8:
        raise FormatError(
            f"{path}: weight blob holds {len(blob)} bytes, header declares {total * 8}"
        )
    flat = np.frombuffer(blob, dtype="<f8")
    if not np.isfinite(flat).all():
        raise DataError(f"{path}: checkpoint weights contain non-finite values")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in layout:
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    return doc, arrays
