"""Pull-through cache with whole-object LRU eviction and single-flight fills."""

from __future__ import annotations

import os
import tempfile
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

from .. import httpclient
from ..errors import ValidationError
from ..httpclient import ConnectionPool
from .server import BaseHandler, ServerApp, serve_object


@dataclass
class CacheConfig:
    upstream: str
    capacity_bytes: int
    store_dir: Path | None = None
    host: str = "127.0.0.1"
    port: int = 0
    worker_count: int = 64
    log_path: Path | None = None
    upstream_timeout: float = 300.0

    def __post_init__(self):
        if self.capacity_bytes < 1:
            raise ValidationError("capacity_bytes must be positive", field="capacity_bytes")
        httpclient.split_url(self.upstream)
        self.upstream = self.upstream.rstrip("/")


class _Fill:
    """One in-progress upstream fetch; waiters block on ``done``."""

    def __init__(self):
        self.done = threading.Event()
        self.status = None
        self.message = ""
        self.admitted = False


class LruIndex:
    """Byte-budgeted LRU of whole objects. Callers hold the cache lock."""

    def __init__(self, capacity_bytes):
        self.capacity = capacity_bytes
        self.sizes: OrderedDict[str, int] = OrderedDict()
        self.used = 0

    def __contains__(self, name):
        return name in self.sizes

    def touch(self, name):
        self.sizes.move_to_end(name)

    def admit(self, name, size) -> list[str]:
        """Insert ``name``; return the names evicted to make room."""
        if name in self.sizes:
            self.used -= self.sizes.pop(name)
        evicted = []
        while self.sizes and self.used + size > self.capacity:
            victim, vsize = self.sizes.popitem(last=False)
            self.used -= vsize
            evicted.append(victim)
        self.sizes[name] = size
        self.used += size
        return evicted

    def remove(self, name) -> bool:
        size = self.sizes.pop(name, None)
        if size is None:
            return False
        self.used -= size
        return True


class Cache(ServerApp):
    role = "cache"

    def __init__(self, config: CacheConfig):
        self.config = config
        super().__init__(config.host, config.port, config.worker_count, config.log_path)
        self._tmp = None
        if config.store_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="fedbench-cache-")
            self.store = Path(self._tmp.name)
        else:
            self.store = Path(config.store_dir)
            self.store.mkdir(parents=True, exist_ok=True)
        self.index = LruIndex(config.capacity_bytes)
        self._lock = threading.Lock()
        self._fills: dict[str, _Fill] = {}

    def stop(self):
        super().stop()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def metrics_snapshot(self):
        snap = super().metrics_snapshot()
        with self._lock:
            snap["cached_bytes"] = self.index.used
            snap["cached_objects"] = list(self.index.sizes)
            snap["capacity_bytes"] = self.index.capacity
        return snap

    def _path(self, name):
        return self.store / name

    def _open_cached(self, name):
        """Open a cached object and mark it most recently used (lock held)."""
        if name not in self.index:
            return None
        try:
            f = open(self._path(name), "rb")
        except FileNotFoundError:
            self.index.remove(name)
            return None
        self.index.touch(name)
        return f

    def handle(self, h: BaseHandler, method: str):
        if self.handle_common(h, method):
            return
        if h.url_path == "/admin/evict" and method == "POST":
            h.drain_request_body()
            name = h.query.get("name", "")
            h.send_json(200, {"name": name, "was_present": self.evict(name)})
            return
        if not h.url_path.startswith("/data/"):
            h.drain_request_body()
            h.send_text(404, "not found\n")
            return
        if method not in ("GET", "HEAD"):
            h.drain_request_body()
            h.send_text(405, "method not allowed\n", {"Allow": "GET, HEAD"})
            return
        name = self.data_name(h)
        if name is None:
            h.send_text(404, "not found\n")
            return
        self.metrics.incr("requests_by_name", name)
        f, status, message = self.lookup(name, h.headers.get("Authorization"), h.query.get("authz"))
        if f is None:
            extra = {}
            if status == 403 and message:
                extra["X-Auth-Reject"] = message.split(":")[-1].strip()
            h.send_text(status, f"{message}\n", extra)
            return
        try:
            size = os.fstat(f.fileno()).st_size
            serve_object(h, fileobj=f, size=size, range_header=h.headers.get("Range"),
                         headers={"X-Cache": status})
        finally:
            f.close()

    def lookup(self, name, authorization=None, authz=None):
        """Return ``(file, "HIT"|"MISS", "")`` or ``(None, http_status, message)``."""
        for _ in range(3):
            with self._lock:
                f = self._open_cached(name)
                if f is not None:
                    self.metrics.incr("extra", "hits_total")
                    return f, "HIT", ""
                fill = self._fills.get(name)
                owner = fill is None
                if owner:
                    fill = self._fills[name] = _Fill()
            self.metrics.incr("extra", "misses_total")
            if owner:
                try:
                    passthrough = self._fill(name, fill, authorization, authz)
                finally:
                    with self._lock:
                        self._fills.pop(name, None)
                    fill.done.set()
                if passthrough is not None:
                    return passthrough, "MISS", ""
            else:
                fill.done.wait()
            if fill.status != 200:
                return None, fill.status, fill.message
            with self._lock:
                f = self._open_cached(name)
            if f is not None:
                return f, "MISS", ""
            # Evicted before we could open it, or too large to admit: fetch again.
        return None, 502, "object could not be retained in cache"

    def _fill(self, name, fill: _Fill, authorization, authz):
        headers = {}
        if authorization:
            headers["Authorization"] = authorization
        url = f"{self.config.upstream}/data/{name}"
        if authz:
            url += f"?authz={authz}"
        self.metrics.incr("upstream_fetches_total", name)
        tmp = self.store / f".{name}.{threading.get_ident()}.part"
        with ConnectionPool(timeout=self.config.upstream_timeout) as pool:
            try:
                resp, _hops, _url, key = httpclient.request(pool, "GET", url, headers)
            except (OSError, httpclient.TooManyRedirects) as exc:
                fill.status, fill.message = 502, f"upstream unreachable: {exc}"
                self.log.warning("fill %s: %s", name, fill.message)
                return
            if resp.status != 200:
                reject = resp.getheader("X-Auth-Reject")
                httpclient.finish(pool, key, resp)
                fill.status = resp.status
                fill.message = f"upstream answered {resp.status}" + (f": {reject}" if reject else "")
                return
            n = 0
            buf = bytearray(1024 * 1024)
            view = memoryview(buf)
            try:
                with open(tmp, "wb") as out:
                    while True:
                        got = resp.readinto(buf)
                        if not got:
                            break
                        out.write(view[:got])
                        n += got
            except httpclient.CONNECT_ERRORS + (OSError,) as exc:
                tmp.unlink(missing_ok=True)
                fill.status, fill.message = 502, f"upstream transfer failed: {exc}"
                self.log.warning("fill %s: %s", name, fill.message)
                return
        expected = resp.getheader("Content-Length")
        if expected is not None and int(expected) != n:
            tmp.unlink(missing_ok=True)
            fill.status, fill.message = 502, f"short upstream body ({n} of {expected})"
            return
        fill.status = 200
        if n > self.index.capacity:
            self.log.info("fill %s: %d bytes exceeds capacity, served pass-through", name, n)
            f = open(tmp, "rb")
            tmp.unlink()
            return f
        with self._lock:
            os.replace(tmp, self._path(name))
            for victim in self.index.admit(name, n):
                self._path(victim).unlink(missing_ok=True)
                self.metrics.incr("evictions_total")
                self.log.info("evicted %s (LRU)", victim)
            fill.admitted = True
        self.log.info("admitted %s (%d bytes)", name, n)
        return None

    def evict(self, name: str) -> bool:
        """Drop ``name`` from the store; returns whether it was cached."""
        with self._lock:
            present = self.index.remove(name)
            if present:
                self._path(name).unlink(missing_ok=True)
                self.metrics.incr("evictions_total")
        self.log.info("admin evict %s (was_present=%s)", name, present)
        return present
