"""Fixed-duration, closed-loop transfer windows.

Each of S streams downloads the scenario's object back to back until the
window deadline. Requests still in flight at the deadline get a grace
period of ``min(window/10, 60 s)``; those that finish in time count, the
rest are abandoned and attributed to no sample.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import socket
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable
from urllib.parse import urlsplit

from . import httpclient, probes
from .datagen import CorpusManifest, ManifestEntry, file_digest
from .errors import ConfigurationError, EndpointUnreachable, ValidationError
from .federation import tokens
from .federation.tpc import tpc_copy
from .httpclient import ConnectionPool
from .model import (
    CONNECT_ERROR, INTEGRITY_ERROR, OK, TIMEOUT, AuthMode, Client, ScenarioSpec,
    TransferSample, WindowSummary, http_error, summarize_window, validate_scenario,
)

READ_CHUNK = 1024 * 1024
MIN_REQUEST_DEADLINE_S = 30.0
STALL_RATE_BYTES_PER_SEC = 1e6
MAX_GRACE_S = 60.0
CONNECT_ERROR_BACKOFF_S = 0.01


@dataclass(frozen=True)
class ClientAdapter:
    name: Client
    argv_template: tuple[str, ...] = ()

    @property
    def external(self) -> bool:
        return bool(self.argv_template)

    def argv(self, url: str, dest: str) -> list[str]:
        return [a.format(url=url, dest=dest) for a in self.argv_template]


ADAPTERS = {
    Client.NATIVE: ClientAdapter(Client.NATIVE),
    Client.WGET: ClientAdapter(Client.WGET, ("wget", "-q", "-O", "{dest}", "{url}")),
    Client.CURL: ClientAdapter(Client.CURL, ("curl", "--fail", "--silent", "--output", "{dest}", "{url}")),
    Client.PELICAN: ClientAdapter(Client.PELICAN, ("pelican", "object", "get", "{url}", "{dest}")),
}


def get_adapter(name) -> ClientAdapter:
    try:
        return ADAPTERS[Client(name)]
    except ValueError:
        valid = ", ".join(c.value for c in Client)
        raise ConfigurationError(f"unknown client adapter {name!r}; expected one of {valid}") from None


def require_binary(adapter: ClientAdapter) -> str:
    if not adapter.external:
        return ""
    path = shutil.which(adapter.argv_template[0])
    if path is None:
        raise ConfigurationError(f"client {adapter.name.value!r} needs {adapter.argv_template[0]!r} on PATH")
    return path


def request_deadline_s(size_bytes: int) -> float:
    return max(MIN_REQUEST_DEADLINE_S, size_bytes / STALL_RATE_BYTES_PER_SEC)


def grace_period_s(window_seconds: float) -> float:
    return min(window_seconds / 10.0, MAX_GRACE_S)


class _Abandoned(Exception):
    """The window's hard stop passed while a request was in flight."""


class ByteCounter:
    """Counts body bytes read by a client, across threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def add(self, n):
        with self._lock:
            self.value += n


def fetch_once(url: str, expected: ManifestEntry, token: str | None = None, *,
               pool: ConnectionPool | None = None, scenario_id: str = "", stream_index: int = 0,
               timeout: float | None = None, hard_stop: float | None = None,
               counter: ByteCounter | None = None) -> TransferSample:
    """GET ``url`` once, hashing the body as it streams.

    ``ok`` is only ever returned after the digest matched ``expected``.
    Raises :class:`_Abandoned` when ``hard_stop`` (monotonic) passes first.
    """
    own_pool = pool is None
    pool = pool or ConnectionPool()
    timeout = request_deadline_s(expected.size_bytes) if timeout is None else timeout
    started = time.monotonic()
    deadline = started + timeout
    limit = deadline if hard_stop is None else min(deadline, hard_stop)
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    hops = 0
    received = 0
    key = None

    def sample(status, missing=False, detail=""):
        finished = time.monotonic()
        return TransferSample(
            scenario_id=scenario_id, stream_index=stream_index, bytes=received,
            wall_seconds=finished - started, status=status, redirect_hops=hops,
            started_at=started, finished_at=finished, missing_at_origin=missing, detail=detail,
        )

    try:
        try:
            resp, hops, _final, key = httpclient.request(
                pool, "GET", url, headers, timeout=max(limit - started, 0.001))
        except httpclient.TooManyRedirects as exc:
            return sample(http_error("unknown"), detail=str(exc))
        if resp.status != 200:
            reject = resp.getheader("X-Auth-Reject")
            httpclient.finish(pool, key, resp)
            return sample(http_error(resp.status), missing=resp.status == 404,
                          detail=f"auth reject: {reject}" if reject else "")
        h = hashlib.sha256()
        buf = bytearray(READ_CHUNK)
        view = memoryview(buf)
        while True:
            now = time.monotonic()
            if now >= limit:
                raise socket.timeout("deadline passed mid-body")
            httpclient.set_timeout(pool.get(key), limit - now)
            n = resp.readinto(buf)
            if not n:
                break
            h.update(view[:n])
            received += n
            if counter is not None:
                counter.add(n)
        if resp.will_close:
            pool.discard(key)
        if received == expected.size_bytes and h.hexdigest() == expected.sha256_hex:
            return sample(OK)
        return sample(INTEGRITY_ERROR, detail=f"{received} bytes, digest {h.hexdigest()[:16]}")
    except (socket.timeout, TimeoutError):
        if key is not None:
            pool.discard(key)
        else:
            pool.close()
        if hard_stop is not None and time.monotonic() >= hard_stop - 1e-3 \
                and hard_stop < deadline:
            raise _Abandoned() from None
        return sample(TIMEOUT)
    except httpclient.CONNECT_ERRORS + (OSError,) as exc:
        if key is not None:
            pool.discard(key)
        else:
            pool.close()
        return sample(CONNECT_ERROR, detail=f"{type(exc).__name__}: {exc}")
    finally:
        if own_pool:
            pool.close()


def external_client_fetch(adapter: ClientAdapter, url: str, dest: str | os.PathLike | None,
                          expected: ManifestEntry, *, scenario_id: str = "", stream_index: int = 0,
                          timeout: float | None = None, hard_stop: float | None = None) -> TransferSample:
    """Fetch with an external client binary and verify the file it wrote."""
    binary = require_binary(adapter)
    if not adapter.external:
        raise ConfigurationError("native adapter has no external command")
    timeout = request_deadline_s(expected.size_bytes) if timeout is None else timeout
    own_dest = dest is None
    if own_dest:
        fd, dest = tempfile.mkstemp(prefix="fedbench-", suffix=".bin")
        os.close(fd)
    dest = Path(dest)
    argv = adapter.argv(url, str(dest))
    argv[0] = binary
    started = time.monotonic()
    limit = started + timeout if hard_stop is None else min(started + timeout, hard_stop)
    try:
        try:
            proc = subprocess.run(argv, stdin=subprocess.DEVNULL, stdout=subprocess.DEVNULL,
                                  stderr=subprocess.PIPE, close_fds=True,
                                  timeout=max(limit - started, 0.001))
            finished = time.monotonic()
        except subprocess.TimeoutExpired:
            if hard_stop is not None and time.monotonic() >= hard_stop - 1e-3:
                raise _Abandoned() from None
            finished = time.monotonic()
            return TransferSample(scenario_id, stream_index, 0, finished - started, TIMEOUT,
                                  started_at=started, finished_at=finished)
        size = dest.stat().st_size if dest.exists() else 0
        status, detail = OK, ""
        if proc.returncode != 0:
            status = http_error("unknown")
            detail = proc.stderr.decode(errors="replace").strip()[:200] or f"exit code {proc.returncode}"
        elif size != expected.size_bytes or file_digest(dest) != expected.sha256_hex:
            status, detail = INTEGRITY_ERROR, f"{size} bytes written"
        return TransferSample(scenario_id, stream_index, size, finished - started, status,
                              started_at=started, finished_at=finished, detail=detail)
    finally:
        dest.unlink(missing_ok=True)


def _authz_url(url: str, token: str | None) -> str:
    if not token:
        return url
    return url + ("&" if urlsplit(url).query else "?") + f"authz={token}"


class _TokenSource:
    def __init__(self, spec: ScenarioSpec, key: bytes | None):
        self.enabled = spec.endpoint.auth is AuthMode.BEARER
        self.key = key
        if self.enabled and key is None:
            self.key = tokens.key_from_env()
            if self.key is None:
                raise ConfigurationError(f"bearer endpoint needs a token key (set {tokens.KEY_ENV})")

    def __call__(self, path: str) -> str | None:
        # A fresh nonce per request keeps every token unique.
        return tokens.mint(self.key, path) if self.enabled else None


def check_reachable(base_url: str, timeout_ms: int = 2000):
    parts = urlsplit(base_url)
    port = parts.port or (443 if parts.scheme == "https" else 80)
    try:
        probes.measure_rtt(parts.hostname, port, n_probes=1, timeout_ms=timeout_ms)
    except EndpointUnreachable as exc:
        raise EndpointUnreachable(f"endpoint {base_url} unreachable at window start", exc.causes) from None


def run_window(spec: ScenarioSpec, corpus: CorpusManifest, *, token_key: bytes | None = None,
               grace_seconds: float | None = None,
               on_sample: Callable[[TransferSample], None] | None = None
               ) -> tuple[WindowSummary, list[TransferSample]]:
    """Run one timed window; return the summary and the samples ordered by finish time."""
    spec = validate_scenario(spec)
    entry = corpus.for_size(spec.size)
    if entry is None:
        raise ValidationError(f"corpus has no object for size class {spec.size.label}", field="size")
    adapter = get_adapter(spec.client)
    require_binary(adapter)
    token_for = _TokenSource(spec, token_key)
    check_reachable(spec.endpoint.base_url)

    tpc_source = spec.labels.get("tpc_source") if spec.labels.get("transfer") == "tpc" else None
    url = spec.endpoint.object_url(entry.object_name)
    path = urlsplit(url).path
    grace = grace_period_s(spec.window_seconds) if grace_seconds is None else grace_seconds
    req_timeout = request_deadline_s(entry.size_bytes)

    lock = threading.Lock()
    samples: list[TransferSample] = []
    abandoned = [0]
    ready = threading.Barrier(spec.streams + 1)
    clock = {}

    def record(s: TransferSample):
        with lock:
            samples.append(s)
        if on_sample is not None:
            on_sample(s)

    def one_transfer(i, pool, scratch):
        hard_stop = clock["deadline"] + grace
        if tpc_source:
            return _tpc_sample(spec, entry, tpc_source, i, token_for, req_timeout)
        token = token_for(path)
        if adapter.external:
            return external_client_fetch(adapter, _authz_url(url, token), scratch / f"s{i}.bin", entry,
                                         scenario_id=spec.scenario_id, stream_index=i,
                                         timeout=req_timeout, hard_stop=hard_stop)
        return fetch_once(url, entry, token, pool=pool, scenario_id=spec.scenario_id,
                          stream_index=i, timeout=req_timeout, hard_stop=hard_stop)

    def worker(i, scratch):
        with ConnectionPool(timeout=req_timeout) as pool:
            ready.wait()
            deadline = clock["deadline"]
            while time.monotonic() < deadline:
                try:
                    s = one_transfer(i, pool, scratch)
                except _Abandoned:
                    with lock:
                        abandoned[0] += 1
                    break
                record(s)
                if s.status == CONNECT_ERROR:
                    time.sleep(CONNECT_ERROR_BACKOFF_S)

    with tempfile.TemporaryDirectory(prefix="fedbench-window-") as scratch:
        threads = [threading.Thread(target=worker, args=(i, Path(scratch)), daemon=True,
                                    name=f"stream-{i}") for i in range(spec.streams)]
        for t in threads:
            t.start()
        clock["start"] = time.monotonic()
        clock["deadline"] = clock["start"] + spec.window_seconds
        ready.wait()
        for t in threads:
            t.join()

    samples.sort(key=lambda s: s.finished_at)
    summary = summarize_window(spec, samples, clock["start"], abandoned[0])
    return summary, samples


def _tpc_sample(spec, entry, source_base, i, token_for, timeout):
    name = f"tpc-{spec.scenario_id}-{i}-{entry.object_name}"
    source_url = f"{source_base.rstrip('/')}/data/{entry.object_name}"
    started = time.monotonic()
    try:
        r = tpc_copy(spec.endpoint.base_url, source_url, name, token=token_for(f"/data/{name}"),
                     source_token=token_for(f"/data/{entry.object_name}"), timeout=timeout)
    except (OSError, *httpclient.CONNECT_ERRORS) as exc:
        finished = time.monotonic()
        return TransferSample(spec.scenario_id, i, 0, finished - started, CONNECT_ERROR,
                              started_at=started, finished_at=finished, detail=str(exc)[:200])
    finished = time.monotonic()
    if r.status != 201:
        status = http_error(r.status)
    elif r.bytes == entry.size_bytes and r.sha256_hex == entry.sha256_hex:
        status = OK
    else:
        status = INTEGRITY_ERROR
    return TransferSample(spec.scenario_id, i, r.bytes, finished - started, status,
                          started_at=started, finished_at=finished, detail=r.detail)
