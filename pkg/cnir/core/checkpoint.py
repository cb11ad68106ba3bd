"""Versioned tensor dump shared by policy and ranker checkpoints.

Layout::

    CNIR-TENSORS <version>\n
    <one-line JSON header, sorted keys>\n
    <little-endian float64 payload, tensors in header order>

Identical tensors and metadata give byte-identical files.
"""
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from cnir import FORMAT_VERSION
from cnir.core.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = "CNIR-TENSORS"


def save_tensors(
    path: str | Path,
    kind: str,
    tensors: dict[str, np.ndarray],
    meta: dict | None = None,
) -> Path:
    """Write tensors (sorted by name) plus JSON-serializable metadata."""
    path = Path(path)
    names = sorted(tensors)
    header = {
        "kind": kind,
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(np.shape(tensors[name]))} for name in names
        ],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(f"{MAGIC} {FORMAT_VERSION}\n".encode("ascii"))
            f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
            f.write(b"\n")
            for name in names:
                f.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.debug("Saved %s checkpoint %s (%d tensors)", kind, path, len(names))
    return path


def load_tensors(path: str | Path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (tensors, metadata)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    first_nl = raw.find(b"\n")
    second_nl = raw.find(b"\n", first_nl + 1)
    if first_nl < 0 or second_nl < 0:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic_line = raw[:first_nl].decode("ascii", errors="replace").split()
    if len(magic_line) != 2 or magic_line[0] != MAGIC:
        raise CheckpointError(f"{path}: not a cnir checkpoint")
    if int(magic_line[1]) != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {magic_line[1]}, expected {FORMAT_VERSION}"
        )
    header = json.loads(raw[first_nl + 1:second_nl].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"{path}: holds '{header['kind']}', expected '{kind}'")

    tensors: dict[str, np.ndarray] = {}
    offset = second_nl + 1
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: payload truncated at tensor '{spec['name']}'")
        tensors[spec["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, header["meta"]


def digest(tensors: dict[str, np.ndarray]) -> str:
    """SHA-256 over names and raw bytes; used for freeze assertions."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    return h.hexdigest()
