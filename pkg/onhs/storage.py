"""On-disk persistence: the append-only update log and the registry snapshot."""

from __future__ import annotations

from collections.abc import Iterable
import hashlib
import json
import logging
import os
from pathlib import Path
from threading import Lock

from pydantic import ValidationError

from .errors import ErrorCode, OnhsError
from .metrics import log_append_seconds, snapshot_writes_total
from .models import HandleRecord

logger = logging.getLogger("onhs.storage")

SNAPSHOT_HEADER = "# onhs registry snapshot v1"
STATE_HASH_PREFIX = "STATE-HASH "


class UpdateLog:
    """Newline-terminated UTF-8 log, one accepted update per line.

    Appends are flushed and fsynced before returning, so an accepted update survives a crash.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = Lock()
        self._fh = None

    def read_lines(self) -> list[str]:
        if not self.path.exists():
            return []
        with self.path.open(encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f if line.strip()]

    def append(self, line: str) -> None:
        if "\n" in line:
            raise OnhsError(ErrorCode.INTERNAL, "log lines cannot contain newlines")
        with self._lock, log_append_seconds.time():
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("a", encoding="utf-8")
            self._fh.write(line + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                self._fh.close()
                self._fh = None


def canonical_record(record: HandleRecord) -> str:
    return json.dumps(record.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def canonical_state(records: Iterable[HandleRecord]) -> str:
    lines = sorted(canonical_record(r) for r in records)
    return "".join(line + "\n" for line in lines)


def state_hash(records: Iterable[HandleRecord]) -> str:
    return hashlib.sha256(canonical_state(records).encode("utf-8")).hexdigest()


def write_snapshot(path: str | os.PathLike, records: Iterable[HandleRecord]) -> str:
    """Write the snapshot atomically and return its state hash."""
    records = list(records)
    body = canonical_state(records)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(target.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as f:
        f.write(SNAPSHOT_HEADER + "\n")
        f.write(body)
        f.write(STATE_HASH_PREFIX + digest + "\n")
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, target)
    snapshot_writes_total.inc()
    logger.info("Wrote snapshot of %d records to %s", len(records), target)
    return digest


def read_snapshot(path: str | os.PathLike) -> list[HandleRecord]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise OnhsError(ErrorCode.CORRUPT_SNAPSHOT, "unreadable snapshot") from exc
    if len(lines) < 2 or lines[0] != SNAPSHOT_HEADER or not lines[-1].startswith(STATE_HASH_PREFIX):
        raise OnhsError(ErrorCode.CORRUPT_SNAPSHOT, "missing header or state hash")
    body = "".join(line + "\n" for line in lines[1:-1])
    expected = lines[-1][len(STATE_HASH_PREFIX) :]
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != expected:
        raise OnhsError(ErrorCode.CORRUPT_SNAPSHOT, "state hash mismatch")
    try:
        return [HandleRecord.model_validate(json.loads(line)) for line in lines[1:-1]]
    except (ValueError, ValidationError, OnhsError) as exc:
        raise OnhsError(ErrorCode.CORRUPT_SNAPSHOT, "undecodable record") from exc
