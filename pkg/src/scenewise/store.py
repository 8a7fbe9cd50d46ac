"""Durable byte stores and atomic file helpers.

The KV store backs the content-addressed provider cache and per-scene
artifacts. Writes are atomic (write-temp-rename) and serialized, so a warm
cache survives crashes and concurrent stage workers.
"""

from __future__ import annotations

import os
import tempfile
import threading
from pathlib import Path
from urllib.parse import quote, unquote

FORMAT_VERSION = "1"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class MemoryKV:
    """In-memory KV store with the same surface as the durable one."""

    def __init__(self) -> None:
        self._data: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> bytes | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, value: bytes) -> None:
        with self._lock:
            self._data[key] = value

    def keys(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(k for k in self._data if k.startswith(prefix))

    def items(self) -> dict[str, bytes]:
        with self._lock:
            return dict(self._data)


class KVStore:
    """Directory-backed string-to-bytes map with durable, serialized writes.

    Keys map to file names through URL quoting, so any printable key is
    valid and the mapping is reversible for enumeration.
    """

    def __init__(self, directory: str | os.PathLike[str]) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / (quote(key, safe="") + ".bin")

    def get(self, key: str) -> bytes | None:
        path = self._path(key)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            return None

    def put(self, key: str, value: bytes) -> None:
        with self._lock:
            atomic_write_bytes(self._path(key), value)

    def keys(self, prefix: str = "") -> list[str]:
        found = []
        for entry in self.directory.iterdir():
            if entry.suffix != ".bin":
                continue
            key = unquote(entry.name[: -len(".bin")])
            if key.startswith(prefix):
                found.append(key)
        return sorted(found)

    def items(self) -> dict[str, bytes]:
        return {key: self.get(key) or b"" for key in self.keys()}
