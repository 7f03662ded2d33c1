"""Append-only per-domain event log and point-in-time snapshots.

Log layout: ``<data_dir>/<domain_id>/events.log`` holds one JSON envelope
per line, ``{"seq": n, "kind": ..., "payload": {...}}``. Appends are flushed
and fsynced before the caller acknowledges anything, so an acked event
survives a hard kill. Snapshots live in ``<data_dir>/<domain_id>/snap-<seq>/``
and record the log position they cover.
"""

from __future__ import annotations

import json
import os
import re
from pathlib import Path
from typing import Iterator

from .errors import CorruptSnapshot, IoFailure

LOG_FILENAME = "events.log"
_SNAP_RE = re.compile(r"^snap-(\d+)$")


class EventLog:
    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.last_seq = self._recover()
        self._fh = open(self.path, "ab")

    def _recover(self) -> int:
        """Scan for the last complete line; truncate a torn tail if present."""
        if not self.path.exists():
            self.path.touch()
            return 0
        last_seq = 0
        good_end = 0
        with open(self.path, "rb") as fh:
            offset = 0
            for line in fh:
                offset += len(line)
                if not line.endswith(b"\n"):
                    break
                try:
                    envelope = json.loads(line)
                    last_seq = int(envelope["seq"])
                except (ValueError, KeyError, TypeError):
                    break
                good_end = offset
        if good_end < self.path.stat().st_size:
            with open(self.path, "ab") as fh:
                fh.truncate(good_end)
        return last_seq

    def append_batch(self, events: list[tuple[str, dict]]) -> list[int]:
        """Append envelopes for (kind, payload) pairs; fsync once per batch."""
        seqs = []
        try:
            for kind, payload in events:
                self.last_seq += 1
                envelope = {"seq": self.last_seq, "kind": kind, "payload": payload}
                self._fh.write(
                    json.dumps(envelope, separators=(",", ":")).encode() + b"\n"
                )
                seqs.append(self.last_seq)
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            raise IoFailure(f"log append failed: {exc}") from exc
        return seqs

    def read_after(self, seq: int = 0) -> Iterator[dict]:
        """Yield complete envelopes with seq greater than the given position."""
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            for line in fh:
                if not line.endswith(b"\n"):
                    return
                try:
                    envelope = json.loads(line)
                except ValueError:
                    return
                if envelope.get("seq", 0) > seq:
                    yield envelope

    def close(self) -> None:
        try:
            self._fh.close()
        except OSError:
            pass


def write_snapshot(domain_dir: Path, seq: int, doc: dict) -> str:
    """Write snap-<seq>/state.json atomically; returns the handle."""
    handle = f"snap-{seq}"
    snap_dir = Path(domain_dir) / handle
    try:
        snap_dir.mkdir(parents=True, exist_ok=True)
        tmp = snap_dir / "state.json.tmp"
        final = snap_dir / "state.json"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, separators=(",", ":"))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, final)
    except OSError as exc:
        raise IoFailure(f"snapshot write failed: {exc}") from exc
    return handle


def read_snapshot(domain_dir: Path, handle: str) -> dict:
    if not _SNAP_RE.match(handle):
        raise CorruptSnapshot(f"invalid snapshot handle: {handle!r}")
    path = Path(domain_dir) / handle / "state.json"
    if not path.exists():
        raise CorruptSnapshot(f"snapshot not found: {handle}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CorruptSnapshot(f"unreadable snapshot {handle}: {exc}") from exc
    for key in ("seq", "config", "items", "interactions", "spaces"):
        if key not in doc:
            raise CorruptSnapshot(f"snapshot {handle} missing field {key!r}")
    return doc


def latest_snapshot(domain_dir: Path) -> str | None:
    best = None
    best_seq = -1
    domain_dir = Path(domain_dir)
    if not domain_dir.exists():
        return None
    for child in domain_dir.iterdir():
        match = _SNAP_RE.match(child.name)
        if match and (child / "state.json").exists():
            seq = int(match.group(1))
            if seq > best_seq:
                best_seq = seq
                best = child.name
    return best


def domain_dirs(data_dir: Path) -> list[Path]:
    """Domain directories are those carrying an event log."""
    data_dir = Path(data_dir)
    if not data_dir.exists():
        return []
    return sorted(
        child for child in data_dir.iterdir()
        if child.is_dir() and (child / LOG_FILENAME).exists()
    )
