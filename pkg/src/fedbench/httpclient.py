"""Minimal keep-alive HTTP/1.1 client plumbing over ``http.client``."""

from __future__ import annotations

import http.client
import socket
from urllib.parse import urljoin, urlsplit

REDIRECT_CODES = frozenset({301, 302, 303, 307, 308})
MAX_REDIRECT_HOPS = 5

# Failures meaning "no usable connection", as opposed to an HTTP status.
CONNECT_ERRORS = (
    ConnectionError,
    http.client.RemoteDisconnected,
    http.client.BadStatusLine,
    http.client.IncompleteRead,
    socket.gaierror,
)


class TooManyRedirects(Exception):
    pass


def split_url(url: str):
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise ValueError(f"unsupported URL {url!r}")
    port = parts.port or (443 if parts.scheme == "https" else 80)
    target = parts.path or "/"
    if parts.query:
        target += "?" + parts.query
    return (parts.scheme, parts.hostname, port), target


class ConnectionPool:
    """One persistent connection per (scheme, host, port).

    A stream owns its pool, so each stream keeps exactly one connection
    per server it talks to.
    """

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout
        self._conns: dict[tuple, http.client.HTTPConnection] = {}
        self.opened = 0

    def get(self, key):
        conn = self._conns.get(key)
        if conn is None:
            scheme, host, port = key
            cls = http.client.HTTPSConnection if scheme == "https" else http.client.HTTPConnection
            conn = cls(host, port, timeout=self.timeout)
            self._conns[key] = conn
            self.opened += 1
        return conn

    def discard(self, key):
        conn = self._conns.pop(key, None)
        if conn is not None:
            conn.close()

    def close(self):
        for conn in self._conns.values():
            conn.close()
        self._conns.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def set_timeout(conn: http.client.HTTPConnection, seconds: float):
    seconds = max(seconds, 0.001)
    conn.timeout = seconds
    if conn.sock is not None:
        conn.sock.settimeout(seconds)


def request(pool: ConnectionPool, method: str, url: str, headers=None, *,
            follow_redirects: bool = True, timeout: float | None = None):
    """Issue ``method url``; return ``(response, hops, final_url, pool_key)``.

    Redirect responses are drained and followed up to five hops. The caller
    must read the final response fully (or discard its connection) before
    reusing the pool.
    """
    hops = 0
    headers = dict(headers or {})
    while True:
        key, target = split_url(url)
        conn = pool.get(key)
        if timeout is not None:
            set_timeout(conn, timeout)
        reused = conn.sock is not None
        try:
            conn.request(method, target, headers=headers)
            resp = conn.getresponse()
        except CONNECT_ERRORS:
            pool.discard(key)
            if not reused:
                raise
            # The server may have closed an idle keep-alive connection.
            conn = pool.get(key)
            if timeout is not None:
                set_timeout(conn, timeout)
            conn.request(method, target, headers=headers)
            resp = conn.getresponse()
        if follow_redirects and resp.status in REDIRECT_CODES:
            location = resp.getheader("Location")
            resp.read()
            if resp.will_close:
                pool.discard(key)
            if not location:
                return resp, hops, url, key
            if hops >= MAX_REDIRECT_HOPS:
                raise TooManyRedirects(f"more than {MAX_REDIRECT_HOPS} redirects from {url}")
            url = urljoin(url, location)
            hops += 1
            if resp.status == 303:
                method = "GET"
            continue
        return resp, hops, url, key


def finish(pool: ConnectionPool, key, resp):
    """Drain what is left of ``resp`` and drop the connection if it will close."""
    try:
        resp.read()
    except CONNECT_ERRORS + (OSError,):
        pool.discard(key)
        return
    if resp.will_close:
        pool.discard(key)
