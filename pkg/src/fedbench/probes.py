"""TCP-connect round-trip probes and min/avg/max/sdev formatting."""

from __future__ import annotations

import math
import re
import socket
import time

from .errors import EndpointUnreachable, ValidationError
from .model import RttStats


def connect_time_ms(host: str, port: int, timeout_ms: int) -> float:
    """Wall time of one TCP connection establishment, closed immediately."""
    infos = socket.getaddrinfo(host, port, type=socket.SOCK_STREAM)
    family, socktype, proto, _, addr = infos[0]
    sock = socket.socket(family, socktype, proto)
    sock.settimeout(timeout_ms / 1000.0)
    try:
        t0 = time.perf_counter()
        sock.connect(addr)
        t1 = time.perf_counter()
    finally:
        sock.close()
    return (t1 - t0) * 1000.0


def rtt_stats(samples_ms, lost: int = 0) -> RttStats:
    """Stats over successful probes; sdev is the population (ping mdev) form."""
    n = len(samples_ms)
    if n == 0:
        raise ValidationError("no successful probes")
    avg = math.fsum(samples_ms) / n
    var = math.fsum(x * x for x in samples_ms) / n - avg * avg
    lo, hi = min(samples_ms), max(samples_ms)
    # Rounding can nudge avg a hair outside [min, max] for near-equal samples.
    avg = min(max(avg, lo), hi)
    return RttStats(min_ms=lo, avg_ms=avg, max_ms=hi,
                    sdev_ms=math.sqrt(var) if n > 1 and var > 0 else 0.0,
                    probes=n, lost=lost)


def measure_rtt(host: str, port: int, n_probes: int = 10, timeout_ms: int = 1000) -> RttStats:
    if n_probes < 1:
        raise ValidationError("n_probes must be >= 1", field="n_probes")
    if timeout_ms < 1:
        raise ValidationError("timeout_ms must be positive", field="timeout_ms")
    ok, causes = [], []
    for _ in range(n_probes):
        try:
            ok.append(connect_time_ms(host, port, timeout_ms))
        except OSError as exc:
            causes.append(f"{type(exc).__name__}: {exc}")
    if not ok:
        raise EndpointUnreachable(f"{host}:{port} unreachable after {n_probes} probes", causes)
    return rtt_stats(ok, lost=len(causes))


def format_rtt(stats: RttStats, distance_km: float | None = None) -> str:
    """``min/avg/max/sdev ms`` with an optional ``<d> km`` suffix.

    >>> format_rtt(RttStats(47.331, 47.350, 47.391, 0.023, 5), 2784.10)
    '47.331/47.350/47.391/0.023 ms 2,784.10 km'
    """
    text = f"{stats.min_ms:.3f}/{stats.avg_ms:.3f}/{stats.max_ms:.3f}/{stats.sdev_ms:.3f} ms"
    if distance_km is None:
        return text
    if distance_km == 0:
        return text + " 0 km"
    return text + f" {distance_km:,.2f} km"


_RTT_RE = re.compile(r"^([\d.]+)/([\d.]+)/([\d.]+)/([\d.]+) ms(?: ([\d,.]+) km)?$")


def parse_rtt(text: str) -> tuple[float, float, float, float, float | None]:
    m = _RTT_RE.match(text.strip())
    if not m:
        raise ValidationError(f"not an RTT line: {text!r}")
    nums = tuple(float(g) for g in m.groups()[:4])
    km = m.group(5)
    return (*nums, None if km is None else float(km.replace(",", "")))
