"""Pull-mode HTTP third-party copy.

The client POSTs ``/tpc/<name>`` to the destination with a ``Source``
header. The destination pulls the object itself and replies ``201`` with
an empty body; the stored digest travels in ``X-TPC-Sha256``. Object bytes
never pass through the client.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .. import httpclient
from ..httpclient import ConnectionPool

TRANSFER_AUTH_HEADER = "TransferHeaderAuthorization"


@dataclass(frozen=True)
class PullResult:
    http_status: int
    sha256_hex: str | None = None
    bytes: int = 0
    error: str = ""


def pull_object(source_url: str, dest_path: Path, headers=None, timeout: float = 300.0) -> PullResult:
    """Destination side: stream ``source_url`` into ``dest_path``.

    ``http_status`` is what the destination should answer: 201 on success,
    424 when the source answered with an error, 502 when it was unreachable.
    """
    tmp = dest_path.with_name(dest_path.name + ".tpc-part")
    with ConnectionPool(timeout=timeout) as pool:
        try:
            resp, _hops, _url, key = httpclient.request(pool, "GET", source_url, headers)
        except (OSError, ValueError, httpclient.TooManyRedirects) as exc:
            return PullResult(502, error=f"source unreachable: {exc}")
        if resp.status != 200:
            httpclient.finish(pool, key, resp)
            return PullResult(424, error=f"source answered {resp.status}")
        h = hashlib.sha256()
        n = 0
        buf = bytearray(1024 * 1024)
        view = memoryview(buf)
        try:
            with open(tmp, "wb") as f:
                while True:
                    got = resp.readinto(buf)
                    if not got:
                        break
                    h.update(view[:got])
                    f.write(view[:got])
                    n += got
            expected = resp.getheader("Content-Length")
            if expected is not None and int(expected) != n:
                tmp.unlink(missing_ok=True)
                return PullResult(502, error=f"short read from source ({n} of {expected} bytes)")
            os.replace(tmp, dest_path)
        except httpclient.CONNECT_ERRORS as exc:
            tmp.unlink(missing_ok=True)
            return PullResult(502, error=f"source connection lost: {exc}")
    return PullResult(201, h.hexdigest(), n)


@dataclass(frozen=True)
class TpcResult:
    status: int
    sha256_hex: str | None
    bytes: int
    client_body_bytes: int
    wall_seconds: float
    detail: str = ""

    @property
    def ok(self):
        return self.status == 201


def tpc_copy(dest_base: str, source_url: str, name: str, token: str | None = None,
             source_token: str | None = None, timeout: float = 300.0) -> TpcResult:
    """Ask ``dest_base`` to pull ``source_url`` and store it as ``name``.

    ``client_body_bytes`` counts every body byte the client sent or
    received; for a successful copy it is zero.
    """
    headers = {"Source": source_url, "Content-Length": "0"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    if source_token:
        headers[TRANSFER_AUTH_HEADER] = f"Bearer {source_token}"
    t0 = time.perf_counter()
    with ConnectionPool(timeout=timeout) as pool:
        resp, _hops, _url, _key = httpclient.request(
            pool, "POST", f"{dest_base.rstrip('/')}/tpc/{name}", headers, follow_redirects=False)
        body = resp.read()
    wall = time.perf_counter() - t0
    return TpcResult(
        status=resp.status,
        sha256_hex=resp.getheader("X-TPC-Sha256"),
        bytes=int(resp.getheader("X-TPC-Bytes") or 0),
        client_body_bytes=len(body),
        wall_seconds=wall,
        detail=body.decode(errors="replace")[:200] if resp.status != 201 else "",
    )
