"""Redirector: answers every data request with a 307 to the next origin."""

from __future__ import annotations

import itertools
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .. import httpclient
from .server import BaseHandler, ServerApp


@dataclass
class RedirectorConfig:
    origins: tuple[str, ...] = ()
    host: str = "127.0.0.1"
    port: int = 0
    worker_count: int = 64
    log_path: Path | None = None

    def __post_init__(self):
        for o in self.origins:
            httpclient.split_url(o)
        self.origins = tuple(self.origins)


class Redirector(ServerApp):
    role = "redirector"

    @classmethod
    def from_config(cls, config: RedirectorConfig) -> "Redirector":
        return cls(config.origins, config.host, config.port, config.worker_count, config.log_path)

    def __init__(self, origins, host="127.0.0.1", port=0, worker_count=64, log_path=None):
        super().__init__(host, port, worker_count, log_path)
        self.origins = [o.rstrip("/") for o in origins]
        self._cycle = itertools.cycle(self.origins) if self.origins else None
        self._lock = threading.Lock()
        self.redirects_by_origin = Counter()

    def select(self) -> str | None:
        """Next origin in round-robin order, or None when none are configured."""
        if self._cycle is None:
            return None
        with self._lock:
            target = next(self._cycle)
            self.redirects_by_origin[target] += 1
        return target

    def metrics_snapshot(self):
        snap = super().metrics_snapshot()
        with self._lock:
            snap["redirects_by_origin"] = dict(self.redirects_by_origin)
        return snap

    def handle(self, h: BaseHandler, method: str):
        if self.handle_common(h, method):
            return
        h.drain_request_body()
        target = self.select()
        if target is None:
            h.send_text(503, "no origins configured\n")
            return
        h.send_response(307)
        h.send_header("Location", target + h.path)
        h.send_header("Content-Length", "0")
        h.end_headers()
