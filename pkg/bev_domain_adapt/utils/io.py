"""Write-then-rename artifact IO and size-checked reads."""
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

from bev_domain_adapt.config.base import MAX_INPUT_BYTES
from bev_domain_adapt.exceptions import DataError


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Writes ``payload`` to a temporary sibling, then renames it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_jsonl(path: Path, records: Iterable[str]) -> None:
    """Writes pre-serialized JSON records, one per line."""
    atomic_write_text(path, "".join(f"{record}\n" for record in records))


def check_input_file(path: Path, max_bytes: int = MAX_INPUT_BYTES) -> Path:
    """Validates that ``path`` exists and is not larger than ``max_bytes``.

    Raises:
        DataError: If the file is missing or oversized.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Input file not found: {path}")
    size = path.stat().st_size
    if size > max_bytes:
        raise DataError(f"Input file {path} is {size} bytes, limit is {max_bytes}")
    return path


def read_text_checked(path: Path, max_bytes: int = MAX_INPUT_BYTES) -> str:
    return check_input_file(path, max_bytes).read_text(encoding="utf-8")


def read_bytes_checked(path: Path, max_bytes: int = MAX_INPUT_BYTES) -> bytes:
    return check_input_file(path, max_bytes).read_bytes()


def iter_jsonl(path: Path, max_bytes: int = MAX_INPUT_BYTES) -> Iterator[dict[str, Any]]:
    """Yields one parsed JSON object per non-empty line.

    Raises:
        DataError: On size violations or malformed lines (with the line number).
    """
    text = read_text_checked(path, max_bytes)
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{lineno}: invalid JSON record: {e}") from e
