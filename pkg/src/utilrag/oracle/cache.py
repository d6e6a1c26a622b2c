from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path

from .base import canonical_json


class DiskCache:
    """One JSON file per request hash: ``{"request": ..., "response": ...}``.

    Writes go through a temp file and ``os.replace`` so readers never see a
    partial record; a lock serializes writers within the process.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def path_for(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self.path_for(key)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        except json.JSONDecodeError:
            # a corrupt entry is treated as absent and rewritten on next put
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return record["response"]

    def put(self, key: str, request: dict, response: dict) -> None:
        payload = canonical_json({"request": request, "response": response}) + "\n"
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=".json")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                os.replace(tmp, self.path_for(key))
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
