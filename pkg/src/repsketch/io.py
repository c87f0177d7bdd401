"""Small file helpers: atomic writes and transparent gzip reads."""

from __future__ import annotations

import gzip
import io
import os
import tempfile
from pathlib import Path

from .errors import InputError


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary sibling and rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def open_text(path) -> io.TextIOBase:
    """Open a plain or gzip-compressed text file."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    with open(path, "rb") as fh:
        gz = fh.read(2) == b"\x1f\x8b"
    if gz:
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")
