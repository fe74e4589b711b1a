"""Checkpoint format: flat little-endian float32 blob plus a JSON manifest.

``<stem>.bin`` holds every parameter back to back; ``<stem>.json`` records
name, shape and byte offset per parameter, plus free-form metadata.
"""
import json
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np

from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.utils.io import atomic_write_bytes, atomic_write_text, read_bytes_checked, read_text_checked

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "bda.checkpoint/1"
_BLOB_DTYPE = np.dtype("<f4")


def checkpoint_paths(stem: Path) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_checkpoint(stem: Path, state: dict[str, np.ndarray], metadata: Optional[dict[str, Any]] = None) -> None:
    """Writes ``state`` to ``<stem>.bin`` / ``<stem>.json``.

    Args:
        stem: Output path without suffix.
        state: Parameter name to array, written in insertion order.
        metadata: JSON-serializable extras (model config, training summary).
    """
    blob_path, manifest_path = checkpoint_paths(stem)
    entries = []
    chunks = []
    offset = 0
    for name, value in state.items():
        raw = np.ascontiguousarray(value, dtype=_BLOB_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(value)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "schema": CHECKPOINT_SCHEMA,
        "dtype": "float32-le",
        "total_bytes": offset,
        "parameters": entries,
        "metadata": metadata or {},
    }
    atomic_write_bytes(blob_path, b"".join(chunks))
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Saved checkpoint with {len(entries)} parameters ({offset} bytes) to {blob_path}")


def load_checkpoint(stem: Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Reads a checkpoint written by ``save_checkpoint``.

    Returns:
        tuple: (state as float32 arrays, metadata).

    Raises:
        DataError: On missing files, schema mismatch or a truncated blob.
    """
    blob_path, manifest_path = checkpoint_paths(stem)
    try:
        manifest = json.loads(read_text_checked(manifest_path))
    except json.JSONDecodeError as e:
        raise DataError(f"Checkpoint manifest {manifest_path} is not valid JSON: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("schema") != CHECKPOINT_SCHEMA:
        found = manifest.get("schema") if isinstance(manifest, dict) else type(manifest).__name__
        raise DataError(f"Checkpoint manifest {manifest_path} has schema {found!r}, expected {CHECKPOINT_SCHEMA}")
    blob = read_bytes_checked(blob_path)
    if len(blob) != manifest.get("total_bytes"):
        raise DataError(f"Checkpoint blob {blob_path} has {len(blob)} bytes, manifest says {manifest.get('total_bytes')}")
    state = {}
    try:
        for entry in manifest["parameters"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            values = np.frombuffer(blob, dtype=_BLOB_DTYPE, count=count, offset=entry["offset"])
            state[entry["name"]] = values.reshape(entry["shape"]).astype(np.float32)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Checkpoint manifest {manifest_path} does not describe its blob: {e!r}") from e
    return state, manifest.get("metadata", {})
