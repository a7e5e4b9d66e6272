"""Mock origin: serves the corpus from disk or synthesizes it on the fly."""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..datagen import MANIFEST_NAME, CorpusManifest
from ..errors import ValidationError
from ..model import AuthMode
from . import tokens
from .server import NAME_RE, BaseHandler, ServerApp, serve_object
from .tpc import TRANSFER_AUTH_HEADER, pull_object


@dataclass
class OriginConfig:
    host: str = "127.0.0.1"
    port: int = 0
    storage_root: Path | None = None
    manifest: CorpusManifest | None = None
    auth: AuthMode = AuthMode.NONE
    token_key: bytes | None = None
    injected_latency_ms: float = 0.0
    bandwidth_cap_bytes_per_sec: float | None = None
    flip_byte_at: int | None = None
    force_404: frozenset[str] = field(default_factory=frozenset)
    worker_count: int = 64
    log_path: Path | None = None
    tpc_dir: Path | None = None

    def __post_init__(self):
        self.auth = AuthMode(self.auth)
        self.force_404 = frozenset(self.force_404)
        if self.storage_root is not None:
            self.storage_root = Path(self.storage_root)
            if self.manifest is None and (self.storage_root / MANIFEST_NAME).exists():
                self.manifest = CorpusManifest.load(self.storage_root)
        elif self.manifest is None:
            raise ValidationError("synthetic mode requires a manifest", field="manifest")
        if self.injected_latency_ms < 0:
            raise ValidationError("injected_latency_ms must be >= 0", field="injected_latency_ms")
        if self.bandwidth_cap_bytes_per_sec is not None and self.bandwidth_cap_bytes_per_sec <= 0:
            raise ValidationError("bandwidth cap must be positive", field="bandwidth_cap_bytes_per_sec")
        if self.worker_count < 1:
            raise ValidationError("worker_count must be positive", field="worker_count")
        if self.auth is AuthMode.BEARER:
            if self.token_key is None:
                raise ValidationError("bearer auth requires a token key", field="token_key")
            if len(self.token_key) != tokens.KEY_BYTES:
                raise ValidationError("token key must be 32 bytes", field="token_key")

    @property
    def synthetic(self) -> bool:
        return self.storage_root is None


def bearer_token(h: BaseHandler) -> str | None:
    header = h.headers.get("Authorization", "")
    if header.startswith("Bearer "):
        return header[len("Bearer "):].strip()
    return h.query.get("authz")


class Origin(ServerApp):
    role = "origin"

    def __init__(self, config: OriginConfig):
        self.config = config
        super().__init__(config.host, config.port, config.worker_count, config.log_path)
        self._tmp = None
        if config.tpc_dir is not None:
            self.tpc_dir = Path(config.tpc_dir)
        elif config.storage_root is not None:
            self.tpc_dir = config.storage_root
        else:
            self._tmp = tempfile.TemporaryDirectory(prefix="fedbench-tpc-")
            self.tpc_dir = Path(self._tmp.name)
        self.tpc_dir.mkdir(parents=True, exist_ok=True)

    def stop(self):
        super().stop()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def resolve(self, name: str):
        """``("file", path, size)``, ``("synthetic", seed, size)`` or None."""
        for root in (self.tpc_dir, self.config.storage_root):
            if root is None:
                continue
            path = root / name
            if path.is_file() and name != MANIFEST_NAME:
                return "file", path, path.stat().st_size
        if self.config.synthetic:
            entry = self.config.manifest.get(name)
            if entry is not None:
                return "synthetic", entry.seed, entry.size_bytes
        return None

    def authorize(self, h: BaseHandler, path: str) -> bool:
        if self.config.auth is AuthMode.NONE:
            return True
        token = bearer_token(h)
        if token is None:
            reason = "missing"
        else:
            verdict = tokens.verify_token(token, self.config.token_key, path)
            if verdict.accepted:
                return True
            reason = verdict.reason
        self.metrics.incr("auth_rejects_by_reason", reason)
        h.drain_request_body()
        h.send_text(403, f"forbidden: {reason}\n", {"X-Auth-Reject": reason})
        return False

    def handle(self, h: BaseHandler, method: str):
        if self.handle_common(h, method):
            return
        path = h.url_path
        if path == "/manifest" and method == "GET":
            manifest = self.config.manifest or CorpusManifest()
            h.send_json(200, [e.to_dict() for e in manifest])
        elif path == "/admin/config" and method == "POST":
            h.drain_request_body()
            self.apply_admin_config(h)
        elif path.startswith("/data/"):
            if method not in ("GET", "HEAD"):
                h.drain_request_body()
                h.send_text(405, "method not allowed\n", {"Allow": "GET, HEAD"})
                return
            self.serve_data(h)
        elif path.startswith("/tpc/"):
            if method != "POST":
                h.send_text(405, "method not allowed\n", {"Allow": "POST"})
                return
            h.drain_request_body()
            self.serve_tpc(h)
        else:
            h.drain_request_body()
            h.send_text(404, "not found\n")

    def serve_data(self, h: BaseHandler):
        name = self.data_name(h)
        if name is not None:
            self.metrics.incr("requests_by_name", name)
        if not self.authorize(h, h.url_path):
            return
        found = None if name is None or name in self.config.force_404 else self.resolve(name)
        if self.config.injected_latency_ms:
            time.sleep(self.config.injected_latency_ms / 1000.0)
        if found is None:
            h.send_text(404, f"no such object: {name}\n")
            return
        kind, where, size = found
        opts = dict(size=size, range_header=h.headers.get("Range"),
                    cap_bps=self.config.bandwidth_cap_bytes_per_sec,
                    flip_at=self.config.flip_byte_at)
        if kind == "file":
            with open(where, "rb") as f:
                serve_object(h, fileobj=f, **opts)
        else:
            serve_object(h, seed=where, **opts)

    def serve_tpc(self, h: BaseHandler):
        name = h.url_path[len("/tpc/"):]
        if not NAME_RE.match(name) or name == MANIFEST_NAME:
            h.send_text(400, "bad object name\n")
            return
        if not self.authorize(h, f"/data/{name}"):
            return
        source = h.headers.get("Source")
        if not source:
            h.send_text(400, "missing Source header\n")
            return
        fwd = {}
        if h.headers.get(TRANSFER_AUTH_HEADER):
            fwd["Authorization"] = h.headers[TRANSFER_AUTH_HEADER]
        result = pull_object(source, self.tpc_dir / name, fwd)
        self.metrics.incr("upstream_fetches_total", name)
        if result.http_status == 201:
            self.log.info("tpc %s <- %s: %d bytes sha256=%s", name, source, result.bytes, result.sha256_hex)
            h.send_response(201)
            h.send_header("Content-Length", "0")
            h.send_header("X-TPC-Status", "ok")
            h.send_header("X-TPC-Sha256", result.sha256_hex)
            h.send_header("X-TPC-Bytes", str(result.bytes))
            h.end_headers()
        else:
            self.log.warning("tpc %s <- %s failed: %s", name, source, result.error)
            h.send_text(result.http_status, result.error + "\n", {"X-TPC-Status": "failed"})

    def apply_admin_config(self, h: BaseHandler):
        q = h.query
        try:
            if "worker_count" in q:
                workers = int(q["worker_count"])
                self.gate.resize(workers)
                self.config.worker_count = workers
            if "injected_latency_ms" in q:
                latency = float(q["injected_latency_ms"])
                if latency < 0:
                    raise ValueError("negative latency")
                self.config.injected_latency_ms = latency
            if "bandwidth_cap_bytes_per_sec" in q:
                cap = q["bandwidth_cap_bytes_per_sec"]
                self.config.bandwidth_cap_bytes_per_sec = None if cap in ("", "none") else float(cap)
        except ValueError as exc:
            h.send_text(400, f"bad admin config: {exc}\n")
            return
        h.send_json(200, self.describe())

    def describe(self) -> dict:
        c = self.config
        return {
            "role": self.role,
            "url": self.url,
            "worker_count": self.gate.capacity,
            "injected_latency_ms": c.injected_latency_ms,
            "bandwidth_cap_bytes_per_sec": c.bandwidth_cap_bytes_per_sec,
            "auth": c.auth.value,
            "storage_root": None if c.storage_root is None else str(c.storage_root),
            "synthetic": c.synthetic,
        }
