"""CSV and JSON input/output with reproducibility manifests.

Result documents carry schema_version 1; floats are serialized in their
shortest round-trip form, so reading a document back reproduces the
in-memory values exactly.  File writes are atomic (temp file then rename).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import __version__
from .core import DetectionResult, TimeSeriesMatrix
from .errors import DataFormatError

SCHEMA_VERSION = 1


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path) -> TimeSeriesMatrix:
    """Read a rectangular numeric CSV; a non-numeric first row is a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh)]
    rows = [row for row in rows if row and any(c.strip() for c in row)]
    if not rows:
        raise DataFormatError(f"empty file {path}")
    start = 0
    if any(not _is_number(c.strip()) for c in rows[0]):
        start = 1
        if len(rows) == 1:
            raise DataFormatError(f"no data rows in {path}")
    width = len(rows[start])
    body = np.empty((len(rows) - start, width))
    for i, row in enumerate(rows[start:], start=start):
        if len(row) != width:
            raise DataFormatError(
                f"ragged row: expected {width} columns, found {len(row)}",
                row=i + 1,
            )
        for j, cell in enumerate(row):
            cell = cell.strip()
            if not _is_number(cell):
                raise DataFormatError(
                    f"non-numeric cell {cell!r}", row=i + 1, column=j + 1
                )
            body[i - start, j] = float(cell)
    return TimeSeriesMatrix(body)


def _atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_csv(data, path, header: Optional[list] = None):
    values = data.values if isinstance(data, TimeSeriesMatrix) else np.asarray(data)
    lines = []
    if header:
        lines.append(",".join(header))
    for row in values:
        lines.append(",".join(repr(float(v)) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    input_digest: Optional[str]
    seed: Optional[int]
    started_at: str
    finished_at: str
    version: str = __version__

    def digest(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def make_manifest(command: str, config: dict, input_path=None, seed=None,
                  started_at=None) -> RunManifest:
    now = datetime.now(timezone.utc).isoformat()
    return RunManifest(
        command=command,
        config={k: config[k] for k in sorted(config)},
        input_digest=file_digest(input_path) if input_path else None,
        seed=seed,
        started_at=started_at or now,
        finished_at=now,
    )


def result_document(result: DetectionResult, manifest: Optional[RunManifest]):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "change_points": [int(c) for c in result.change_points],
        "lag": int(result.lag),
        "sparse_mats": [np.asarray(m).tolist() for m in result.sparse_mats],
        "lowrank_mats": (
            None
            if result.lowrank_mats is None
            else [np.asarray(m).tolist() for m in result.lowrank_mats]
        ),
        "elapsed_seconds": float(result.elapsed_seconds),
        "manifest": None if manifest is None else asdict(manifest),
    }
    return doc


def save_result(result: DetectionResult, path,
                manifest: Optional[RunManifest] = None) -> dict:
    doc = result_document(result, manifest)
    _atomic_write(path, json.dumps(doc, indent=2) + "\n")
    return doc


def load_result(path) -> DetectionResult:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(
            f"unsupported schema_version {doc.get('schema_version')!r}"
        )
    low = doc.get("lowrank_mats")
    return DetectionResult(
        change_points=tuple(doc["change_points"]),
        sparse_mats=tuple(np.asarray(m) for m in doc["sparse_mats"]),
        lag=int(doc["lag"]),
        lowrank_mats=None if low is None else tuple(np.asarray(m) for m in low),
        elapsed_seconds=float(doc["elapsed_seconds"]),
    )
