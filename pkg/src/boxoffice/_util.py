"""Small I/O and scheduling helpers."""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator


def dumps_json(obj: Any) -> str:
    # repr-based float formatting in json is the shortest round-trip decimal
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, obj: Any) -> None:
    atomic_write(path, dumps_json(obj))


def read_json(path: str | os.PathLike) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class RateLimiter:
    """Caps concurrent calls and spaces call starts by at least ``min_interval`` seconds.

    Slots are reserved under a lock, so two callers can never be handed start
    times closer than the interval even if they wake up out of order.
    """

    def __init__(self, max_concurrent: int = 1, min_interval: float = 0.0,
                 clock=time.monotonic, sleep=time.sleep):
        if max_concurrent < 1:
            raise ValueError("max_concurrent must be positive")
        if min_interval < 0:
            raise ValueError("min_interval must be nonnegative")
        self.max_concurrent = max_concurrent
        self.min_interval = min_interval
        self._sem = threading.BoundedSemaphore(max_concurrent)
        self._lock = threading.Lock()
        self._next_start = float("-inf")
        self._clock = clock
        self._sleep = sleep

    @contextmanager
    def slot(self) -> Iterator[None]:
        with self._sem:
            with self._lock:
                now = self._clock()
                start = max(now, self._next_start)
                self._next_start = start + self.min_interval
            delay = start - now
            if delay > 0:
                self._sleep(delay)
            yield
