"""File formats: binary matrices, singular-value CSV and run manifests.

Binary matrix layout: 8-byte magic ``ROMIFTM1``, rows and cols as
little-endian uint64, then rows*cols little-endian float64 in column-major
order. Vectors are stored as one-column matrices.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"ROMIFTM1"
_HEADER = np.dtype([("magic", "S8"), ("rows", "<u8"), ("cols", "<u8")])


class FormatError(ValueError):
    pass


def write_matrix(path, A) -> None:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("only vectors and matrices can be stored")
    head = np.array([(MAGIC, A.shape[0], A.shape[1])], dtype=_HEADER)
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(np.asfortranarray(A).astype("<f8").tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.itemsize:
        raise FormatError(f"{path}: truncated header")
    head = np.frombuffer(raw[:_HEADER.itemsize], dtype=_HEADER)[0]
    if head["magic"] != MAGIC:
        raise FormatError(f"{path}: bad magic {head['magic']!r}")
    rows, cols = int(head["rows"]), int(head["cols"])
    body = raw[_HEADER.itemsize:]
    if len(body) != 8 * rows * cols:
        raise FormatError(f"{path}: expected {rows}x{cols} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape((rows, cols), order="F").astype(float)


def write_singular_values(path, sigma) -> None:
    lines = ["index,sigma"] + [f"{i + 1},{float(s)!r}" for i, s in enumerate(np.ravel(sigma))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_singular_values(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1] if data.size else np.zeros(0)


def write_csv(path, header, rows) -> None:
    """Comma-separated table; floats written with full precision."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)
    lines = [",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a nested str-keyed dict."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(path, config: dict, files: dict, extra: dict | None = None) -> None:
    doc = {"config": config, "config_hash": config_hash(config), "files": files}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
