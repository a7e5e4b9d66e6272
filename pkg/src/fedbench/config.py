"""Strict JSON configuration loading.

Unknown fields are rejected so a misspelled dimension can never silently
drop out of a campaign. Every default lives here.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional, Union

import pydantic
from pydantic import BaseModel, ConfigDict, Field

from .datagen import CorpusManifest, synthetic_manifest
from .errors import ValidationError
from .federation import tokens
from .federation.cache import CacheConfig
from .federation.origin import OriginConfig
from .federation.redirector import RedirectorConfig
from .matrix import SOAK_DESK_SECONDS, CampaignSpec, SoakSpec, Sweeps
from .model import (
    DEFAULT_ANNOTATION, DEFAULT_WINDOW_SECONDS, DESK_PROFILE, EndpointDescriptor, StreamPlan,
    classify_size, default_n_max,
)

SizeLabel = str
Role = Literal["origin", "cache", "redirector"]
Auth = Literal["none", "bearer"]
ClientName = Literal["native", "wget", "curl", "pelican"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, populate_by_name=True)


class EndpointModel(_Strict):
    role: Role
    base_url: str
    auth: Auth = "none"
    labels: dict[str, str] = Field(default_factory=dict)


class SweepsModel(_Strict):
    worker_counts: list[int] = Field(default_factory=list)
    auth_modes: list[Auth] = Field(default_factory=list)
    storage_roots: list[str] = Field(default_factory=list)
    via_redirector: bool = False
    tpc: bool = False


class CampaignModel(_Strict):
    kind: Literal["campaign"] = "campaign"
    sizes: list[SizeLabel]
    streams: list[int] = Field(alias="stream_counts")
    n_max: Optional[int] = None
    endpoints: list[EndpointModel]
    clients: list[ClientName] = Field(default_factory=lambda: ["native"])
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    sweeps: SweepsModel = Field(default_factory=SweepsModel)
    output_dir: str = "fedbench-out"
    impact: int = DEFAULT_ANNOTATION
    complexity: int = DEFAULT_ANNOTATION
    seed: int = 0
    repeats: int = 1
    labels: dict[str, str] = Field(default_factory=dict)


class SoakModel(_Strict):
    kind: Literal["soak"]
    duration_seconds: float = SOAK_DESK_SECONDS
    concurrent_load: int = 2
    log_paths: list[str] = Field(default_factory=list)
    sizes: list[SizeLabel] = Field(default_factory=list)
    endpoint: EndpointModel
    output_dir: Optional[str] = None


class OriginModel(_Strict):
    kind: Literal["origin"]
    host: str = "127.0.0.1"
    port: int = 8000
    storage_root: Optional[str] = None
    manifest: Optional[str] = None
    synthetic_sizes: list[SizeLabel] = Field(default_factory=lambda: [s.label for s in DESK_PROFILE])
    seed: int = 0
    auth: Auth = "none"
    injected_latency_ms: float = 0.0
    bandwidth_cap_bytes_per_sec: Optional[float] = None
    flip_byte_at: Optional[int] = None
    force_404: list[str] = Field(default_factory=list)
    worker_count: int = 64
    log_path: Optional[str] = None
    tpc_dir: Optional[str] = None


class CacheModel(_Strict):
    kind: Literal["cache"]
    host: str = "127.0.0.1"
    port: int = 8001
    upstream: str
    capacity_bytes: int
    store_dir: Optional[str] = None
    worker_count: int = 64
    log_path: Optional[str] = None


class RedirectorModel(_Strict):
    kind: Literal["redirector"]
    host: str = "127.0.0.1"
    port: int = 8002
    origins: list[str] = Field(default_factory=list)
    worker_count: int = 64
    log_path: Optional[str] = None


_MODELS = {
    "campaign": CampaignModel, "soak": SoakModel, "origin": OriginModel,
    "cache": CacheModel, "redirector": RedirectorModel,
}

Loaded = Union[CampaignSpec, SoakSpec, OriginConfig, CacheConfig, RedirectorConfig]


def _describe(err: pydantic.ValidationError) -> tuple[str, str]:
    first = err.errors()[0]
    path = ".".join(str(p) for p in first["loc"]) or "<root>"
    if first["type"] == "extra_forbidden":
        return f"unknown field {path!r}", path
    return f"field {path!r}: {first['msg']}", path


def _endpoint(m: EndpointModel) -> EndpointDescriptor:
    return EndpointDescriptor(role=m.role, base_url=m.base_url, auth=m.auth, labels=m.labels)


def parse_config(text: str, env=None) -> Loaded:
    if not text.strip():
        raise ValidationError("config parse error: file is empty")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config parse error: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config parse error: top level must be a JSON object")
    kind = raw.get("kind", "campaign")
    model_cls = _MODELS.get(kind)
    if model_cls is None:
        raise ValidationError(f"unknown config kind {kind!r}; expected one of {', '.join(_MODELS)}",
                              field="kind")
    try:
        m = model_cls.model_validate_json(text)
    except pydantic.ValidationError as exc:
        msg, path = _describe(exc)
        raise ValidationError(msg, field=path) from None
    return _build(m, env)


def load_config(path: str | os.PathLike, env=None) -> Loaded:
    """Parse a JSON config file into a campaign, soak or server configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, env)


def _build(m, env) -> Loaded:
    if isinstance(m, CampaignModel):
        return CampaignSpec(
            sizes=tuple(classify_size(s) for s in m.sizes),
            stream_counts=StreamPlan(tuple(m.streams), m.n_max or default_n_max()),
            endpoints=tuple(_endpoint(e) for e in m.endpoints),
            clients=tuple(m.clients),
            window_seconds=m.window_seconds,
            sweeps=Sweeps(
                worker_counts=tuple(m.sweeps.worker_counts),
                auth_modes=tuple(m.sweeps.auth_modes),
                storage_roots=tuple(m.sweeps.storage_roots),
                via_redirector=m.sweeps.via_redirector,
                tpc=m.sweeps.tpc,
            ),
            output_dir=Path(m.output_dir),
            impact=m.impact,
            complexity=m.complexity,
            seed=m.seed,
            repeats=m.repeats,
            labels=m.labels,
        )
    if isinstance(m, SoakModel):
        return SoakSpec(
            duration_seconds=m.duration_seconds,
            concurrent_load=m.concurrent_load,
            log_paths=tuple(m.log_paths),
            sizes=tuple(classify_size(s) for s in m.sizes),
            output_dir=None if m.output_dir is None else Path(m.output_dir),
            endpoint=_endpoint(m.endpoint),
        )
    if isinstance(m, OriginModel):
        manifest = None
        if m.manifest is not None:
            manifest = CorpusManifest.load(m.manifest)
        elif m.storage_root is None:
            manifest = synthetic_manifest(m.synthetic_sizes, m.seed)
        return OriginConfig(
            host=m.host, port=m.port,
            storage_root=None if m.storage_root is None else Path(m.storage_root),
            manifest=manifest, auth=m.auth,
            token_key=tokens.key_from_env(env) if m.auth == "bearer" else None,
            injected_latency_ms=m.injected_latency_ms,
            bandwidth_cap_bytes_per_sec=m.bandwidth_cap_bytes_per_sec,
            flip_byte_at=m.flip_byte_at, force_404=frozenset(m.force_404),
            worker_count=m.worker_count,
            log_path=None if m.log_path is None else Path(m.log_path),
            tpc_dir=None if m.tpc_dir is None else Path(m.tpc_dir),
        )
    if isinstance(m, CacheModel):
        return CacheConfig(
            upstream=m.upstream, capacity_bytes=m.capacity_bytes,
            store_dir=None if m.store_dir is None else Path(m.store_dir),
            host=m.host, port=m.port, worker_count=m.worker_count,
            log_path=None if m.log_path is None else Path(m.log_path),
        )
    return RedirectorConfig(origins=tuple(m.origins), host=m.host, port=m.port,
                            worker_count=m.worker_count,
                            log_path=None if m.log_path is None else Path(m.log_path))
