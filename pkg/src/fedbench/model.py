"""Domain types and the throughput arithmetic behind every reported number.

All types are frozen dataclasses. Each has ``to_dict``/``from_dict`` using
the canonical snake_case JSON field names; those names are the wire schema
for sample logs, manifests and reports.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import os
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping
from urllib.parse import urlparse

from .errors import ValidationError

DEFAULT_WINDOW_SECONDS = 900.0
"""One 15-minute measurement window per configuration."""

DEFAULT_ANNOTATION = 3


class SizeClass(enum.Enum):
    """The six object size classes, in binary multiples."""

    K1 = ("1KB", 2**10)
    M1 = ("1MB", 2**20)
    M100 = ("100MB", 100 * 2**20)
    G1 = ("1GB", 2**30)
    G10 = ("10GB", 10 * 2**30)
    G100 = ("100GB", 100 * 2**30)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def bytes(self) -> int:
        return self.value[1]

    @property
    def object_name(self) -> str:
        return f"obj_{self.label}.bin"

    def __lt__(self, other):
        if not isinstance(other, SizeClass):
            return NotImplemented
        return self.bytes < other.bytes


_SIZE_BY_LABEL = {s.label.lower(): s for s in SizeClass}

DESK_PROFILE = (SizeClass.K1, SizeClass.M1, SizeClass.M100)
PAPER_PROFILE = tuple(SizeClass)


def classify_size(name: str | SizeClass) -> SizeClass:
    """Map a label such as ``"1MB"`` (case-insensitive) to its size class."""
    if isinstance(name, SizeClass):
        return name
    found = _SIZE_BY_LABEL.get(str(name).strip().lower())
    if found is None:
        valid = ", ".join(s.label for s in SizeClass)
        raise ValidationError(f"unknown size class {name!r}; valid labels: {valid}", field="size")
    return found


class Role(str, enum.Enum):
    ORIGIN = "origin"
    CACHE = "cache"
    REDIRECTOR = "redirector"


class AuthMode(str, enum.Enum):
    NONE = "none"
    BEARER = "bearer"


class Client(str, enum.Enum):
    NATIVE = "native"
    WGET = "wget"
    CURL = "curl"
    PELICAN = "pelican"


def _enum_value(enum_cls, value, field_name):
    try:
        return enum_cls(value)
    except ValueError:
        valid = ", ".join(m.value for m in enum_cls)
        raise ValidationError(
            f"{field_name}: unknown value {value!r}; expected one of {valid}", field=field_name
        ) from None


def _frozen_labels(labels: Mapping[str, Any] | None) -> Mapping[str, str]:
    return MappingProxyType({str(k): str(v) for k, v in (labels or {}).items()})


def default_n_max() -> int:
    return 2 * (os.cpu_count() or 1)


@dataclass(frozen=True)
class StreamPlan:
    counts: tuple[int, ...]
    n_max: int = field(default_factory=default_n_max)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if self.n_max < 1:
            raise ValidationError("n_max must be positive", field="n_max")
        if any(c < 1 for c in counts):
            raise ValidationError("stream counts must be positive", field="streams")
        if list(counts) != sorted(set(counts)):
            raise ValidationError("stream counts must be ascending without duplicates", field="streams")
        if counts and counts[-1] > self.n_max:
            raise ValidationError(
                f"stream count {counts[-1]} exceeds n_max={self.n_max}", field="streams"
            )

    def to_dict(self):
        return {"counts": list(self.counts), "n_max": self.n_max}

    @classmethod
    def from_dict(cls, d):
        return cls(counts=tuple(d["counts"]), n_max=d["n_max"])


@dataclass(frozen=True)
class EndpointDescriptor:
    role: Role
    base_url: str
    auth: AuthMode = AuthMode.NONE
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "role", _enum_value(Role, self.role, "role"))
        object.__setattr__(self, "auth", _enum_value(AuthMode, self.auth, "auth"))
        object.__setattr__(self, "labels", _frozen_labels(self.labels))
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.hostname:
            raise ValidationError(f"base_url must be an http(s) URL, got {self.base_url!r}", field="base_url")
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))

    def object_url(self, name: str) -> str:
        return f"{self.base_url}/data/{name}"

    def to_dict(self):
        return {
            "role": self.role.value,
            "base_url": self.base_url,
            "auth": self.auth.value,
            "labels": dict(self.labels),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(role=d["role"], base_url=d["base_url"], auth=d.get("auth", "none"),
                   labels=d.get("labels", {}))


@dataclass(frozen=True)
class ScenarioSpec:
    """One benchmark cell.

    ``window_seconds`` may be ``None`` until :func:`validate_scenario` fills
    in the 900 s default.
    """

    size: SizeClass
    streams: int
    endpoint: EndpointDescriptor
    client: Client = Client.NATIVE
    window_seconds: float | None = None
    impact: int = DEFAULT_ANNOTATION
    complexity: int = DEFAULT_ANNOTATION
    seed: int = 0
    scenario_id: str = ""
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen_labels(self.labels))

    def to_dict(self):
        return {
            "scenario_id": self.scenario_id,
            "size": self.size.label,
            "streams": self.streams,
            "endpoint": self.endpoint.to_dict(),
            "client": self.client.value if isinstance(self.client, Client) else self.client,
            "window_seconds": self.window_seconds,
            "impact": self.impact,
            "complexity": self.complexity,
            "seed": self.seed,
            "labels": dict(self.labels),
        }

    @classmethod
    def from_dict(cls, d):
        return validate_scenario(cls(
            size=classify_size(d["size"]),
            streams=d["streams"],
            endpoint=EndpointDescriptor.from_dict(d["endpoint"]),
            client=d.get("client", "native"),
            window_seconds=d.get("window_seconds"),
            impact=d.get("impact", DEFAULT_ANNOTATION),
            complexity=d.get("complexity", DEFAULT_ANNOTATION),
            seed=d.get("seed", 0),
            scenario_id=d.get("scenario_id", ""),
            labels=d.get("labels", {}),
        ))


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def validate_scenario(spec: ScenarioSpec) -> ScenarioSpec:
    """Check every ScenarioSpec invariant and return a normalized copy."""
    size = classify_size(spec.size)
    client = _enum_value(Client, spec.client, "client")
    if not _is_int(spec.streams) or spec.streams < 1:
        raise ValidationError(f"streams must be a positive integer, got {spec.streams!r}", field="streams")
    for name in ("impact", "complexity"):
        value = getattr(spec, name)
        if not _is_int(value) or not 1 <= value <= 5:
            raise ValidationError(f"{name} must be an integer in 1..5, got {value!r}", field=name)
    window = DEFAULT_WINDOW_SECONDS if spec.window_seconds is None else spec.window_seconds
    if isinstance(window, bool) or not isinstance(window, (int, float)) or not window > 0:
        raise ValidationError(f"window_seconds must be > 0, got {window!r}", field="window_seconds")
    if not _is_int(spec.seed) or not 0 <= spec.seed < 2**64:
        raise ValidationError("seed must be a 64-bit unsigned integer", field="seed")
    if not isinstance(spec.endpoint, EndpointDescriptor):
        raise ValidationError("endpoint must be an EndpointDescriptor", field="endpoint")
    spec = dataclasses.replace(spec, size=size, client=client, window_seconds=float(window))
    if not spec.scenario_id:
        spec = dataclasses.replace(spec, scenario_id=scenario_id_for(spec))
    return spec


def scenario_id_for(spec: ScenarioSpec, extra: Iterable[Any] = ()) -> str:
    """Stable 16-hex id hashed from the cell coordinates."""
    parts = [
        spec.endpoint.role.value, spec.endpoint.base_url, spec.endpoint.auth.value,
        Client(spec.client).value, spec.size.label, str(spec.streams),
        *(f"{k}={v}" for k, v in sorted(spec.labels.items())),
        *(str(e) for e in extra),
    ]
    return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()[:16]


# Transfer status strings. ``http_error(<code>)`` carries the HTTP code.
OK = "ok"
CONNECT_ERROR = "connect_error"
INTEGRITY_ERROR = "integrity_error"
TIMEOUT = "timeout"
_HTTP_ERROR_RE = re.compile(r"^http_error\((\d+|unknown)\)$")


def http_error(code: int | str) -> str:
    return f"http_error({code})"


def is_valid_status(status: str) -> bool:
    return status in (OK, CONNECT_ERROR, INTEGRITY_ERROR, TIMEOUT) or bool(_HTTP_ERROR_RE.match(status))


@dataclass(frozen=True)
class TransferSample:
    scenario_id: str
    stream_index: int
    bytes: int
    wall_seconds: float
    status: str
    redirect_hops: int = 0
    started_at: float = 0.0
    finished_at: float = 0.0
    missing_at_origin: bool = False
    detail: str = ""

    def __post_init__(self):
        if not is_valid_status(self.status):
            raise ValidationError(f"unknown transfer status {self.status!r}", field="status")
        if self.finished_at < self.started_at:
            raise ValidationError("finished_at precedes started_at", field="finished_at")

    @property
    def ok(self) -> bool:
        return self.status == OK

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class WindowSummary:
    scenario: ScenarioSpec
    completed: int
    failed: int
    total_bytes: int
    elapsed_seconds: float
    rate_bytes_per_sec: float
    per_error_counts: Mapping[str, int] = field(default_factory=dict)
    started_at: float = 0.0
    abandoned: int = 0

    def __post_init__(self):
        object.__setattr__(self, "per_error_counts", MappingProxyType(dict(self.per_error_counts)))

    def to_dict(self):
        return {
            "scenario": self.scenario.to_dict(),
            "completed": self.completed,
            "failed": self.failed,
            "total_bytes": self.total_bytes,
            "elapsed_seconds": self.elapsed_seconds,
            "rate_bytes_per_sec": self.rate_bytes_per_sec,
            "per_error_counts": dict(self.per_error_counts),
            "started_at": self.started_at,
            "abandoned": self.abandoned,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scenario=ScenarioSpec.from_dict(d["scenario"]),
            completed=d["completed"],
            failed=d["failed"],
            total_bytes=d["total_bytes"],
            elapsed_seconds=d["elapsed_seconds"],
            rate_bytes_per_sec=d["rate_bytes_per_sec"],
            per_error_counts=d.get("per_error_counts", {}),
            started_at=d.get("started_at", 0.0),
            abandoned=d.get("abandoned", 0),
        )


@dataclass(frozen=True)
class RttStats:
    min_ms: float
    avg_ms: float
    max_ms: float
    sdev_ms: float
    probes: int
    lost: int = 0

    def __post_init__(self):
        if self.probes < 1:
            raise ValidationError("probes must be >= 1", field="probes")
        if not self.min_ms <= self.avg_ms <= self.max_ms:
            raise ValidationError("expected min <= avg <= max", field="avg_ms")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def compute_rate(total_bytes: int, elapsed_seconds: float) -> float:
    """Bytes per second: downloaded size divided by the time used."""
    if not elapsed_seconds > 0:
        raise ValidationError(f"elapsed_seconds must be > 0, got {elapsed_seconds!r}", field="elapsed_seconds")
    if total_bytes < 0:
        raise ValidationError("total_bytes must be non-negative", field="total_bytes")
    return total_bytes / elapsed_seconds


def summarize_window(scenario: ScenarioSpec, samples: Iterable[TransferSample],
                     started_at: float, abandoned: int = 0) -> WindowSummary:
    """Aggregate the samples attributed to one window.

    Elapsed time runs from the window start to the last finished sample;
    with no samples at all the nominal window length is used.
    """
    samples = list(samples)
    completed = failed = total = 0
    errors: dict[str, int] = {}
    last = None
    for s in samples:
        if s.status == OK:
            completed += 1
            total += s.bytes
        else:
            failed += 1
            errors[s.status] = errors.get(s.status, 0) + 1
        if last is None or s.finished_at > last:
            last = s.finished_at
    elapsed = (last - started_at) if last is not None else scenario.window_seconds
    if not elapsed > 0:
        # Below clock resolution; clamp to 1 ns.
        elapsed = 1e-9
    return WindowSummary(
        scenario=scenario,
        completed=completed,
        failed=failed,
        total_bytes=total,
        elapsed_seconds=elapsed,
        rate_bytes_per_sec=compute_rate(total, elapsed),
        per_error_counts=errors,
        started_at=started_at,
        abandoned=abandoned,
    )
