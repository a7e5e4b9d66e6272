"""HTTP server plumbing shared by the origin, cache and redirector."""

from __future__ import annotations

import contextlib
import json
import logging
import re
import socket
import sys
import threading
import time
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from ..datagen import iter_chunks

log = logging.getLogger("fedbench.federation")

NAME_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9._-]*$")
_RANGE_RE = re.compile(r"^bytes=(\d*)-(\d*)$")
CHUNK = 1024 * 1024
PACE_CHUNK = 64 * 1024


class RangeError(ValueError):
    pass


def parse_range(header: str | None, size: int):
    """Return ``(start, end_inclusive)`` or ``None`` for a full-body request.

    Raises :class:`RangeError` for malformed or unsatisfiable ranges.
    Only single ranges are supported.
    """
    if header is None:
        return None
    m = _RANGE_RE.match(header.strip())
    if not m or (m.group(1) == "" and m.group(2) == ""):
        raise RangeError(header)
    first, last = m.group(1), m.group(2)
    if first == "":
        suffix = int(last)
        if suffix == 0:
            raise RangeError(header)
        return max(0, size - suffix), size - 1
    start = int(first)
    end = size - 1 if last == "" else min(int(last), size - 1)
    if start >= size or (last != "" and int(last) < start):
        raise RangeError(header)
    return start, end


class WorkerGate:
    """Resizable cap on concurrently handled requests."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("worker_count must be positive")
        self._cond = threading.Condition()
        self._capacity = capacity
        self._busy = 0
        self.peak = 0

    @property
    def capacity(self):
        return self._capacity

    def resize(self, capacity: int):
        if capacity < 1:
            raise ValueError("worker_count must be positive")
        with self._cond:
            self._capacity = capacity
            self._cond.notify_all()

    def __enter__(self):
        with self._cond:
            while self._busy >= self._capacity:
                self._cond.wait()
            self._busy += 1
            self.peak = max(self.peak, self._busy)
        return self

    def __exit__(self, *exc):
        with self._cond:
            self._busy -= 1
            self._cond.notify()


class Metrics:
    """Thread-safe counters exposed at ``GET /metrics``."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        with self._lock:
            self.requests_total = 0
            self.requests_by_name = Counter()
            self.upstream_fetches_total = Counter()
            self.evictions_total = 0
            self.auth_rejects_by_reason = Counter()
            self.responses_by_status = Counter()
            self.extra = Counter()

    def incr(self, attr, key=None, n=1):
        with self._lock:
            if key is None:
                setattr(self, attr, getattr(self, attr) + n)
            else:
                getattr(self, attr)[key] += n

    def snapshot(self) -> dict:
        with self._lock:
            out = {
                "requests_total": self.requests_total,
                "requests_by_name": dict(self.requests_by_name),
                "upstream_fetches_total": dict(self.upstream_fetches_total),
                "evictions_total": self.evictions_total,
                "auth_rejects_by_reason": dict(self.auth_rejects_by_reason),
                "responses_by_status": {str(k): v for k, v in self.responses_by_status.items()},
            }
            out.update(self.extra)
            return out


class FederationHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 512

    def __init__(self, addr, handler_cls, app):
        self.app = app
        self._open = set()
        self._open_lock = threading.Lock()
        super().__init__(addr, handler_cls)

    def process_request(self, request, client_address):
        with self._open_lock:
            self._open.add(request)
        super().process_request(request, client_address)

    def shutdown_request(self, request):
        with self._open_lock:
            self._open.discard(request)
        super().shutdown_request(request)

    def close_open_connections(self):
        with self._open_lock:
            conns = list(self._open)
        for sock in conns:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def handle_error(self, request, client_address):
        exc = sys.exc_info()[1]
        if isinstance(exc, (ConnectionError, TimeoutError)):
            self.app.log.warning("connection from %s dropped: %s", client_address, exc)
        else:
            self.app.log.error("unhandled error serving %s", client_address, exc_info=True)


class BaseHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "fedbench"

    def setup(self):
        super().setup()
        # Headers and body go out as separate writes; Nagle would stall small objects.
        self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @property
    def app(self):
        return self.server.app

    def log_message(self, fmt, *args):
        self.app.log.info("%s %s", self.address_string(), fmt % args)

    def log_error(self, fmt, *args):
        # http.server routes client-side protocol problems here; not server faults.
        self.app.log.warning("%s %s", self.address_string(), fmt % args)

    def _dispatch(self, method):
        self._started_response = False
        url = urlsplit(self.path)
        self.url_path = url.path
        self.query = {k: v[-1] for k, v in parse_qs(url.query).items()}
        # Control-plane requests bypass the worker cap and the counters.
        self._control = url.path == "/metrics" or url.path.startswith("/admin/")
        if not self._control:
            self.app.metrics.incr("requests_total")
        with (contextlib.nullcontext() if self._control else self.app.gate):
            try:
                self.app.handle(self, method)
            except (ConnectionError, TimeoutError) as exc:
                self.close_connection = True
                self.app.log.warning("client went away during %s %s: %s", method, self.path, exc)
            except Exception:
                self.close_connection = True
                self.app.log.error("error handling %s %s", method, self.path, exc_info=True)
                if not self._started_response:
                    try:
                        self.send_text(500, "internal error\n")
                    except OSError:
                        pass

    def do_GET(self):
        self._dispatch("GET")

    def do_HEAD(self):
        self._dispatch("HEAD")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    def do_DELETE(self):
        self._dispatch("DELETE")

    def send_response(self, code, message=None):
        self._started_response = True
        if not getattr(self, "_control", False):
            self.app.metrics.incr("responses_by_status", code)
        super().send_response(code, message)

    def drain_request_body(self):
        length = int(self.headers.get("Content-Length") or 0)
        while length > 0:
            chunk = self.rfile.read(min(length, CHUNK))
            if not chunk:
                break
            length -= len(chunk)

    def send_text(self, code, text, headers=None):
        body = text.encode()
        self.send_response(code)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def send_json(self, code, obj, headers=None):
        body = json.dumps(obj).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)


class ServerApp:
    """Owns an HTTP server thread; subclasses implement :meth:`handle`."""

    role = "server"

    def __init__(self, host="127.0.0.1", port=0, worker_count=64, log_path=None):
        self.metrics = Metrics()
        self.gate = WorkerGate(worker_count)
        self.log = logging.getLogger(f"fedbench.federation.{self.role}.{id(self):x}")
        self.log_path = log_path
        self._log_handler = None
        if log_path is not None:
            self._log_handler = logging.FileHandler(log_path)
            self._log_handler.setFormatter(
                logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
            self.log.addHandler(self._log_handler)
            self.log.setLevel(logging.INFO)
            self.log.propagate = False
        self._httpd = FederationHTTPServer((host, port), BaseHandler, self)
        self._thread = None

    @property
    def address(self):
        return self._httpd.server_address[:2]

    @property
    def url(self):
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        kwargs={"poll_interval": 0.05},
                                        name=f"{self.role}-{self.address[1]}", daemon=True)
        self._thread.start()
        self.log.info("%s listening on %s", self.role, self.url)
        return self

    def serve_forever(self):
        self.log.info("%s listening on %s", self.role, self.url)
        try:
            self._httpd.serve_forever(poll_interval=0.2)
        finally:
            self._httpd.server_close()

    def stop(self):
        if self._thread is not None:
            self._httpd.shutdown()
            self._thread.join(timeout=5)
            self._thread = None
        self._httpd.close_open_connections()
        self._httpd.server_close()
        if self._log_handler is not None:
            self.log.removeHandler(self._log_handler)
            self._log_handler.close()
            self._log_handler = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def handle(self, h: BaseHandler, method: str):
        raise NotImplementedError

    def handle_common(self, h: BaseHandler, method: str) -> bool:
        """Serve ``/metrics``; return True when the request was handled."""
        if h.url_path == "/metrics" and method == "GET":
            h.send_json(200, self.metrics_snapshot())
            return True
        if h.url_path == "/admin/reset-metrics" and method == "POST":
            h.drain_request_body()
            self.metrics.reset()
            h.send_json(200, {"reset": True})
            return True
        return False

    def metrics_snapshot(self) -> dict:
        return self.metrics.snapshot()

    def data_name(self, h: BaseHandler):
        """Object name for ``/data/<name>`` paths, or None."""
        if not h.url_path.startswith("/data/"):
            return None
        name = h.url_path[len("/data/"):]
        return name if NAME_RE.match(name) else None


def serve_object(h: BaseHandler, *, size: int, fileobj=None, seed: int | None = None,
                 range_header: str | None = None, cap_bps: float | None = None,
                 flip_at: int | None = None, headers=None):
    """Write a 200/206/416 response for one object.

    The body comes from ``fileobj`` (sendfile fast path when no pacing or
    fault hook applies) or is generated from ``seed``.
    """
    try:
        rng = parse_range(range_header, size)
    except RangeError:
        h.send_text(416, "invalid or unsatisfiable range\n", {"Content-Range": f"bytes */{size}"})
        return 0
    start, end = (0, size - 1) if rng is None else rng
    count = end - start + 1 if size else 0
    h.send_response(200 if rng is None else 206)
    h.send_header("Content-Type", "application/octet-stream")
    h.send_header("Content-Length", str(count))
    h.send_header("Accept-Ranges", "bytes")
    if rng is not None:
        h.send_header("Content-Range", f"bytes {start}-{end}/{size}")
    for k, v in (headers or {}).items():
        h.send_header(k, v)
    h.end_headers()
    if h.command == "HEAD" or count == 0:
        return 0
    flip_hit = flip_at is not None and start <= flip_at <= end
    if fileobj is not None and not cap_bps and not flip_hit:
        return h.connection.sendfile(fileobj, start, count)

    chunk = PACE_CHUNK if cap_bps else CHUNK
    if fileobj is not None:
        fileobj.seek(start)

        def chunks():
            left = count
            while left > 0:
                buf = fileobj.read(min(chunk, left))
                if not buf:
                    raise OSError("backing file shorter than advertised")
                left -= len(buf)
                yield buf
    else:
        def chunks():
            return iter_chunks(seed, end + 1, offset=start, chunk_bytes=chunk)

    sent = 0
    t0 = time.monotonic()
    for buf in chunks():
        if flip_hit and sent <= flip_at - start < sent + len(buf):
            buf = bytearray(buf)
            buf[flip_at - start - sent] ^= 0xFF
        h.wfile.write(buf)
        sent += len(buf)
        if cap_bps:
            wait = t0 + sent / cap_bps - time.monotonic()
            if wait > 0:
                time.sleep(wait)
    return sent
