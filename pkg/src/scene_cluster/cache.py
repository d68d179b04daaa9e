"""Stage caching: content fingerprints, atomic writes, stage stamps.

Every pipeline stage fingerprints its configuration slice plus the content
of its inputs into a 64-bit key.  A stage directory carrying a stamp with
the same key is current and can be skipped; ``--force`` ignores stamps.
Writes go through a temp file and rename so readers never see partial
artifacts.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path


def hash64(parts) -> str:
    """16-hex-char fingerprint of an iterable of byte strings."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            part = part.encode("utf-8")
        h.update(part)
        h.update(b"\x1f")  # keep adjacent parts from merging
    return h.hexdigest()


def file_digest(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_bytes(obj) -> bytes:
    """Canonical bytes of a JSON-representable config slice."""
    return json.dumps(obj, sort_keys=True, default=str).encode("utf-8")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
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


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def stage_current(stamp_file, key: str) -> bool:
    """Whether this stamp file exists and carries the given key."""
    p = Path(stamp_file)
    if not p.is_file():
        return False
    try:
        return read_json(p).get("key") == key
    except (OSError, json.JSONDecodeError):
        return False


def write_stamp(stamp_file, key: str, extra: dict | None = None) -> None:
    obj = {"key": key}
    if extra:
        obj.update(extra)
    write_json(stamp_file, obj)
