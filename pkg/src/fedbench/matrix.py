"""Campaign expansion, sequential execution with resume, soak runs and log scanning."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence
from urllib.parse import urlencode

from . import httpclient
from .datagen import CorpusManifest
from .engine import check_reachable, run_window
from .errors import FedbenchError, ValidationError
from .httpclient import ConnectionPool
from .model import (
    DEFAULT_ANNOTATION, AuthMode, Client, EndpointDescriptor, Role, ScenarioSpec, SizeClass,
    StreamPlan, WindowSummary, classify_size, scenario_id_for, validate_scenario,
)
from .report import REPORT_FIELDS, ReportRow, write_samples

log = logging.getLogger(__name__)

SUMMARY_CSV = "campaign_summary.csv"
SCENARIOS_JSON = "scenarios.json"
SUMMARIES_JSONL = "summaries.jsonl"
SOAK_REPORT = "soak_report.json"
SUMMARY_FIELDS = REPORT_FIELDS + ["total_bytes", "elapsed_seconds", "outcome"]
SEVERITY_TOKENS = ("ERROR", "FATAL", "PANIC")
EXCERPT_CHARS = 200
SOAK_DESK_SECONDS = 60.0
SOAK_PAPER_SECONDS = 86_400.0


@dataclass(frozen=True)
class Sweeps:
    worker_counts: tuple[int, ...] = ()
    auth_modes: tuple[AuthMode, ...] = ()
    storage_roots: tuple[str, ...] = ()
    via_redirector: bool = False
    tpc: bool = False


@dataclass(frozen=True)
class CampaignSpec:
    sizes: tuple[SizeClass, ...]
    stream_counts: StreamPlan
    endpoints: tuple[EndpointDescriptor, ...]
    clients: tuple[Client, ...] = (Client.NATIVE,)
    window_seconds: float | None = None
    sweeps: Sweeps = field(default_factory=Sweeps)
    output_dir: Path = Path("fedbench-out")
    impact: int = DEFAULT_ANNOTATION
    complexity: int = DEFAULT_ANNOTATION
    seed: int = 0
    repeats: int = 1
    labels: dict = field(default_factory=dict)


def _sweep_variants(spec: CampaignSpec, endpoint: EndpointDescriptor):
    """Yield ``(endpoint, labels)`` pairs for every sweep combination."""
    sw = spec.sweeps
    origins = [e for e in spec.endpoints if e.role is Role.ORIGIN]
    redirectors = [e for e in spec.endpoints if e.role is Role.REDIRECTOR]
    workers = sw.worker_counts or (None,)
    auths = sw.auth_modes or (None,)
    roots = sw.storage_roots or (None,)
    is_origin = endpoint.role is Role.ORIGIN
    via = (None, redirectors[0].base_url) if sw.via_redirector and is_origin and redirectors else (None,)
    tpc_ok = sw.tpc and is_origin and origins and endpoint != origins[0]
    tpc = (None, origins[0].base_url) if tpc_ok else (None,)
    for w, a, root, v, src in itertools.product(workers, auths, roots, via, tpc):
        ep = endpoint if a is None else dataclasses.replace(endpoint, auth=a)
        labels = {}
        if w is not None:
            labels["worker_count"] = str(w)
        if a is not None:
            labels["auth"] = AuthMode(a).value
        if root is not None:
            labels["storage_root"] = root
        if v is not None:
            labels["via_redirector"] = v
        if src is not None:
            labels["transfer"] = "tpc"
            labels["tpc_source"] = src
        yield ep, labels


def expand_matrix(spec: CampaignSpec) -> list[ScenarioSpec]:
    """Endpoint-major, then client, size ascending, streams ascending, then sweep variants."""
    if spec.repeats < 1:
        raise ValidationError("repeats must be >= 1", field="repeats")
    if spec.sweeps.via_redirector and not any(e.role is Role.REDIRECTOR for e in spec.endpoints):
        raise ValidationError("via_redirector sweep needs a redirector endpoint", field="sweeps.via_redirector")
    out = []
    for endpoint in spec.endpoints:
        for client in spec.clients:
            for size in sorted(classify_size(s) for s in spec.sizes):
                for streams in spec.stream_counts.counts:
                    for ep, sweep_labels in _sweep_variants(spec, endpoint):
                        for rep in range(spec.repeats):
                            labels = {**spec.labels, **ep.labels, **sweep_labels}
                            if spec.repeats > 1:
                                labels["repeat"] = str(rep)
                            sc = ScenarioSpec(size=size, streams=streams, endpoint=ep, client=client,
                                              window_seconds=spec.window_seconds, impact=spec.impact,
                                              complexity=spec.complexity, seed=spec.seed, labels=labels)
                            sc = dataclasses.replace(sc, scenario_id=scenario_id_for(sc))
                            out.append(validate_scenario(sc))
    if not out:
        raise ValidationError("campaign cross product is empty", field="sizes")
    return out


def _admin_config(base_url: str, **params):
    query = urlencode({k: v for k, v in params.items() if v is not None})
    with ConnectionPool(timeout=10) as pool:
        resp, _, _, key = httpclient.request(pool, "POST", f"{base_url}/admin/config?{query}",
                                             {"Content-Length": "0"})
        body = resp.read()
    if resp.status != 200:
        raise FedbenchError(f"admin config on {base_url} failed: {resp.status} {body[:100]!r}")


def prepare_endpoint(scenario: ScenarioSpec):
    """Apply sweep settings the embedded federation can change at runtime."""
    wc = scenario.labels.get("worker_count")
    if wc is not None:
        _admin_config(scenario.endpoint.base_url, worker_count=wc)


def _route(scenario: ScenarioSpec) -> ScenarioSpec:
    via = scenario.labels.get("via_redirector")
    if not via:
        return scenario
    return dataclasses.replace(scenario, endpoint=dataclasses.replace(scenario.endpoint, base_url=via))


class _SummaryCsv:
    """Append-only summary file; a row's presence marks its scenario complete."""

    def __init__(self, path: Path):
        self.path = path
        self.done: set[str] = set()
        if path.exists():
            with open(path, newline="") as f:
                for row in csv.DictReader(f):
                    self.done.add(row["scenario_id"])
        else:
            with open(path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(SUMMARY_FIELDS)

    def append(self, values: list[str]):
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(values)
            f.flush()
            os.fsync(f.fileno())


def _summary_values(summary: WindowSummary, outcome: str) -> list[str]:
    row = ReportRow.from_summary(summary)
    return row.csv_values() + [str(summary.total_bytes), repr(summary.elapsed_seconds), outcome]


def _failed_summary(scenario: ScenarioSpec) -> WindowSummary:
    return WindowSummary(scenario=scenario, completed=0, failed=0, total_bytes=0,
                         elapsed_seconds=scenario.window_seconds, rate_bytes_per_sec=0.0)


WindowRunner = Callable[..., tuple]


def run_campaign(scenarios: Sequence[ScenarioSpec], corpus: CorpusManifest, output_dir: str | os.PathLike,
                 *, window_runner: WindowRunner = run_window, token_key: bytes | None = None,
                 prepare: Callable[[ScenarioSpec], None] | None = prepare_endpoint,
                 progress: Callable[[ScenarioSpec, WindowSummary, str], None] | None = None) -> Path:
    """Run scenarios one at a time, skipping ids already in the summary CSV.

    Returns the path of ``campaign_summary.csv``.
    """
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise FedbenchError(f"output directory {out} is not writable: {exc}") from exc
    (out / SCENARIOS_JSON).write_text(json.dumps([s.to_dict() for s in scenarios], indent=1))
    (out / "manifest.json").write_text(corpus.to_json())
    table = _SummaryCsv(out / SUMMARY_CSV)
    for scenario in scenarios:
        if scenario.scenario_id in table.done:
            continue
        outcome = "ok"
        try:
            if prepare is not None:
                prepare(scenario)
            summary, samples = window_runner(_route(scenario), corpus, token_key=token_key)
            summary = dataclasses.replace(summary, scenario=scenario)
            write_samples(out / f"samples_{scenario.scenario_id}.jsonl", samples)
            with open(out / SUMMARIES_JSONL, "a") as f:
                f.write(json.dumps(summary.to_dict()) + "\n")
        except (FedbenchError, OSError) as exc:
            log.warning("scenario %s failed: %s", scenario.scenario_id, exc)
            outcome = f"failed: {type(exc).__name__}: {exc}"[:300]
            summary = _failed_summary(scenario)
            write_samples(out / f"samples_{scenario.scenario_id}.jsonl", [])
        table.append(_summary_values(summary, outcome))
        table.done.add(scenario.scenario_id)
        if progress is not None:
            progress(scenario, summary, outcome)
    return table.path


def load_scenarios(output_dir: str | os.PathLike) -> list[ScenarioSpec]:
    raw = json.loads((Path(output_dir) / SCENARIOS_JSON).read_text())
    return [ScenarioSpec.from_dict(d) for d in raw]


def load_summaries(output_dir: str | os.PathLike) -> list[WindowSummary]:
    """Window summaries of a campaign directory in scenario order (last write wins)."""
    out = Path(output_dir)
    by_id = {}
    path = out / SUMMARIES_JSONL
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                s = WindowSummary.from_dict(json.loads(line))
                by_id[s.scenario.scenario_id] = s
    order = [s.scenario_id for s in load_scenarios(out)] if (out / SCENARIOS_JSON).exists() else list(by_id)
    return [by_id[i] for i in order if i in by_id]


def read_summary_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@dataclass(frozen=True)
class SoakSpec:
    duration_seconds: float = SOAK_DESK_SECONDS
    concurrent_load: int = 2
    log_paths: tuple[str, ...] = ()
    sizes: tuple[SizeClass, ...] = ()
    output_dir: Path | None = None
    endpoint: EndpointDescriptor | None = None

    def __post_init__(self):
        d = self.duration_seconds
        if isinstance(d, bool) or not isinstance(d, (int, float)) or not d > 0:
            raise ValidationError("duration_seconds must be > 0", field="duration_seconds")
        if self.concurrent_load < 1:
            raise ValidationError("concurrent_load must be >= 1", field="concurrent_load")


def run_soak(spec: SoakSpec, endpoint: EndpointDescriptor | None, corpus: CorpusManifest,
             *, token_key: bytes | None = None) -> dict:
    """Sustained closed-loop load on every size class at once; counts errors, not rates."""
    endpoint = endpoint or spec.endpoint
    if endpoint is None:
        raise ValidationError("soak needs an endpoint", field="endpoint")
    check_reachable(endpoint.base_url)
    sizes = spec.sizes or tuple(sorted(s for s in SizeClass if corpus.for_size(s) is not None))
    if not sizes:
        raise ValidationError("soak needs at least one size class present in the corpus", field="sizes")
    results: dict[SizeClass, tuple] = {}
    failures: list[BaseException] = []

    def one(size):
        sc = ScenarioSpec(size=size, streams=spec.concurrent_load, endpoint=endpoint,
                          window_seconds=spec.duration_seconds, labels={"soak": "1"})
        try:
            results[size] = run_window(sc, corpus, token_key=token_key)
        except BaseException as exc:  # surfaced below
            failures.append(exc)

    t0 = time.monotonic()
    threads = [threading.Thread(target=one, args=(s,), name=f"soak-{s.label}") for s in sizes]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        raise failures[0]

    errors: dict[str, int] = {}
    per_class = {}
    total = 0
    max_latency = 0.0
    for size in sizes:
        summary, samples = results[size]
        total += summary.completed + summary.failed
        for k, v in summary.per_error_counts.items():
            errors[k] = errors.get(k, 0) + v
        if samples:
            max_latency = max(max_latency, max(s.wall_seconds for s in samples))
        per_class[size.label] = {
            "requests": summary.completed + summary.failed,
            "completed": summary.completed,
            "failed": summary.failed,
            "errors": dict(summary.per_error_counts),
            "rate_bytes_per_sec": summary.rate_bytes_per_sec,
        }
    report = {
        "duration_seconds": spec.duration_seconds,
        "wall_seconds": time.monotonic() - t0,
        "total_requests": total,
        "error_count": sum(errors.values()),
        "errors_by_status": errors,
        "max_latency_seconds": max_latency,
        "per_size_class": per_class,
        "log_scan": scan_logs(spec.log_paths),
    }
    if spec.output_dir is not None:
        out = Path(spec.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / SOAK_REPORT).write_text(json.dumps(report, indent=2))
    return report


def scan_logs(paths: Iterable[str | os.PathLike], patterns: Sequence[str] = SEVERITY_TOKENS) -> dict:
    """Count lines containing each severity token (case-sensitive substring match)."""
    counts = {p: 0 for p in patterns}
    first: dict[str, dict] = {}
    last: dict[str, dict] = {}
    unreadable = {}
    lines_scanned = 0
    for path in paths:
        try:
            with open(path, errors="replace") as f:
                for lineno, line in enumerate(f, 1):
                    lines_scanned += 1
                    for token in patterns:
                        if token in line:
                            counts[token] += 1
                            hit = {"path": str(path), "line": lineno,
                                   "excerpt": line.rstrip("\n")[:EXCERPT_CHARS]}
                            first.setdefault(token, hit)
                            last[token] = hit
        except OSError as exc:
            unreadable[str(path)] = f"{type(exc).__name__}: {exc}"
    return {"counts": counts, "first": first, "last": last,
            "unreadable": unreadable, "lines_scanned": lines_scanned}
