"""Command-line entry point: ``fedbench <verb> [options]``.

Exit codes: 0 success, 1 validation error, 2 runtime or endpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from urllib.parse import urlsplit

from . import __version__, probes
from .config import load_config
from .datagen import CorpusManifest, materialize_corpus, synthetic_manifest
from .errors import FedbenchError, ValidationError
from .federation import tokens
from .federation.cache import Cache, CacheConfig
from .federation.origin import Origin, OriginConfig
from .federation.redirector import Redirector, RedirectorConfig
from .matrix import (
    SUMMARY_CSV, CampaignSpec, SoakSpec, expand_matrix, load_summaries, read_summary_csv, run_campaign,
    run_soak,
)
from .model import (
    DESK_PROFILE, PAPER_PROFILE, EndpointDescriptor, StreamPlan, classify_size,
)
from .report import FORMATS, ReportRow, compare_clients, emit_report, format_comparison

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("fedbench")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; that code is reserved for runtime failures here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _profile(name: str):
    return DESK_PROFILE if name == "desk" else PAPER_PROFILE


def _sizes(args):
    if args.size:
        return tuple(sorted(classify_size(s) for s in args.size))
    return _profile(args.profile)


def _add_size_args(p):
    p.add_argument("--profile", choices=("desk", "paper"), default="desk",
                   help="size classes to use when --size is not given")
    p.add_argument("--size", action="append", help="size class label (repeatable), e.g. 1MB")


def _add_server_args(p, default_port):
    p.add_argument("--config", type=Path, help="JSON server config")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=default_port)
    p.add_argument("--workers", type=int, default=64, help="concurrent request slots")
    p.add_argument("--log-file", type=Path)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fedbench", description="Federated data-delivery benchmark harness.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("corpus", help="write the deterministic payload objects and manifest")
    p.add_argument("--out", type=Path, required=True)
    _add_size_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest-only", action="store_true",
                   help="write manifest.json for synthetic serving without the objects")

    p = sub.add_parser("probe", help="TCP connect RTT statistics")
    p.add_argument("--endpoint", help="URL whose host and port are probed")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--timeout-ms", type=int, default=1000)
    p.add_argument("--distance-km", type=float)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("serve", help="run one mock federation server in the foreground")
    roles = p.add_subparsers(dest="role", required=True, parser_class=_Parser)
    o = roles.add_parser("origin")
    _add_server_args(o, 8000)
    o.add_argument("--storage-root", type=Path, help="serve files from this directory")
    _add_size_args(o)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--auth", choices=("none", "bearer"), default="none")
    o.add_argument("--latency-ms", type=float, default=0.0)
    o.add_argument("--bandwidth-cap", type=float, help="per-request bytes per second")
    o.add_argument("--flip-byte-at", type=int)
    o.add_argument("--force-404", action="append", default=[])
    o.add_argument("--tpc-dir", type=Path)
    c = roles.add_parser("cache")
    _add_server_args(c, 8001)
    c.add_argument("--upstream")
    c.add_argument("--capacity-bytes", type=int)
    c.add_argument("--store-dir", type=Path)
    r = roles.add_parser("redirector")
    _add_server_args(r, 8002)
    r.add_argument("--origin", action="append", default=[])

    p = sub.add_parser("run", help="run a campaign of timed windows")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    _add_size_args(p)
    p.add_argument("--streams", action="append", type=int)
    p.add_argument("--endpoint")
    p.add_argument("--role", choices=("origin", "cache", "redirector"), default="origin")
    p.add_argument("--auth", choices=("none", "bearer"), default="none")
    p.add_argument("--client", action="append")
    p.add_argument("--window-seconds", type=float)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--manifest", type=Path, help="corpus manifest (default: derived from the seed)")

    p = sub.add_parser("soak", help="sustained load with error and log accounting")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--endpoint")
    p.add_argument("--role", choices=("origin", "cache", "redirector"), default="origin")
    p.add_argument("--auth", choices=("none", "bearer"), default="none")
    _add_size_args(p)
    p.add_argument("--streams", type=int, help="concurrent streams per size class")
    p.add_argument("--window-seconds", type=float, help="soak duration")
    p.add_argument("--log", action="append", default=[], help="server log to scan (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", type=Path)

    p = sub.add_parser("report", help="emit csv, jsonl or plot_tsv from a campaign directory")
    p.add_argument("--out", type=Path, required=True, help="campaign output directory")
    p.add_argument("--format", action="append", choices=FORMATS)
    p.add_argument("--report-dir", type=Path, help="where to write (default: --out)")

    p = sub.add_parser("compare", help="Welch t-test between clients per cell")
    p.add_argument("--out", type=Path, required=True, help="campaign output directory")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--json", action="store_true")
    return ap


def _corpus_for(sizes, seed, manifest_path):
    if manifest_path is not None:
        return CorpusManifest.load(manifest_path)
    return synthetic_manifest(sizes, seed)


def cmd_corpus(args):
    sizes = _sizes(args)
    if args.manifest_only:
        manifest = synthetic_manifest(sizes, args.seed)
        path = manifest.write(args.out)
    else:
        manifest = materialize_corpus(sizes, args.out, args.seed)
        path = args.out / "manifest.json"
    for e in manifest.entries:
        print(f"{e.object_name}\t{e.size_bytes}\t{e.sha256_hex}")
    print(f"manifest: {path}")
    return EXIT_OK


def cmd_probe(args):
    host, port = args.host, args.port
    if args.endpoint:
        parts = urlsplit(args.endpoint)
        host = host or parts.hostname
        port = port or parts.port or (443 if parts.scheme == "https" else 80)
    if not host or not port:
        raise ValidationError("probe needs --host and --port, or --endpoint", field="host")
    stats = probes.measure_rtt(host, port, n_probes=args.count, timeout_ms=args.timeout_ms)
    if args.json:
        print(json.dumps(stats.to_dict()))
    else:
        print(probes.format_rtt(stats, args.distance_km))
    return EXIT_OK


def _serve(app):
    print(f"{app.role} listening on {app.url}", flush=True)
    try:
        app.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _server_config(args, expected_type):
    cfg = load_config(args.config)
    if not isinstance(cfg, expected_type):
        raise ValidationError(f"config {args.config} is not a {args.role} config", field="kind")
    return cfg


def cmd_serve(args):
    if args.role == "origin":
        if args.config:
            cfg = _server_config(args, OriginConfig)
        else:
            manifest = None
            if args.storage_root is None:
                manifest = synthetic_manifest(_sizes(args), args.seed)
            key = tokens.key_from_env() if args.auth == "bearer" else None
            if args.auth == "bearer" and key is None:
                raise ValidationError(f"--auth bearer needs {tokens.KEY_ENV}", field=tokens.KEY_ENV)
            cfg = OriginConfig(host=args.host, port=args.port, storage_root=args.storage_root,
                               manifest=manifest, auth=args.auth, token_key=key,
                               injected_latency_ms=args.latency_ms,
                               bandwidth_cap_bytes_per_sec=args.bandwidth_cap,
                               flip_byte_at=args.flip_byte_at, force_404=args.force_404,
                               worker_count=args.workers, log_path=args.log_file, tpc_dir=args.tpc_dir)
        return _serve(Origin(cfg))
    if args.role == "cache":
        if args.config:
            cfg = _server_config(args, CacheConfig)
        else:
            if not args.upstream or args.capacity_bytes is None:
                raise ValidationError("cache needs --upstream and --capacity-bytes", field="upstream")
            cfg = CacheConfig(upstream=args.upstream, capacity_bytes=args.capacity_bytes,
                              store_dir=args.store_dir, host=args.host, port=args.port,
                              worker_count=args.workers, log_path=args.log_file)
        return _serve(Cache(cfg))
    if args.config:
        cfg = _server_config(args, RedirectorConfig)
    else:
        cfg = RedirectorConfig(origins=tuple(args.origin), host=args.host, port=args.port,
                               worker_count=args.workers, log_path=args.log_file)
    return _serve(Redirector.from_config(cfg))


def _campaign_from_args(args) -> CampaignSpec:
    if args.config:
        spec = load_config(args.config)
        if not isinstance(spec, CampaignSpec):
            raise ValidationError(f"config {args.config} is not a campaign config", field="kind")
        return spec
    if not args.endpoint:
        raise ValidationError("run needs --config or --endpoint", field="endpoint")
    return CampaignSpec(
        sizes=_sizes(args),
        stream_counts=StreamPlan(tuple(args.streams or (1,))),
        endpoints=(EndpointDescriptor(role=args.role, base_url=args.endpoint, auth=args.auth),),
        clients=tuple(args.client or ("native",)),
        window_seconds=args.window_seconds,
        seed=args.seed or 0,
        repeats=args.repeats,
    )


def cmd_run(args):
    spec = _campaign_from_args(args)
    if args.window_seconds is not None and args.config:
        spec = CampaignSpec(**{**spec.__dict__, "window_seconds": args.window_seconds})
    out = args.out or spec.output_dir
    scenarios = expand_matrix(spec)
    corpus = _corpus_for(spec.sizes, spec.seed if args.seed is None else args.seed, args.manifest)
    failed = []

    def progress(sc, summary, outcome):
        print(f"{sc.scenario_id} {sc.endpoint.role.value} {sc.client.value} {sc.size.label} "
              f"x{sc.streams}: {summary.rate_bytes_per_sec / 1e6:.3f} MB/s "
              f"({summary.completed} ok, {summary.failed} failed) {outcome}", flush=True)
        if outcome != "ok":
            failed.append(sc.scenario_id)

    path = run_campaign(scenarios, corpus, out, progress=progress)
    print(f"summary: {path}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_soak(args):
    if args.config:
        spec = load_config(args.config)
        if not isinstance(spec, SoakSpec):
            raise ValidationError(f"config {args.config} is not a soak config", field="kind")
        overrides = {}
        if args.out is not None:
            overrides["output_dir"] = args.out
        if args.window_seconds is not None:
            overrides["duration_seconds"] = args.window_seconds
        if overrides:
            spec = SoakSpec(**{**spec.__dict__, **overrides})
    else:
        if not args.endpoint:
            raise ValidationError("soak needs --config or --endpoint", field="endpoint")
        kwargs = {"log_paths": tuple(args.log), "sizes": _sizes(args), "output_dir": args.out,
                  "endpoint": EndpointDescriptor(role=args.role, base_url=args.endpoint, auth=args.auth)}
        if args.window_seconds is not None:
            kwargs["duration_seconds"] = args.window_seconds
        if args.streams is not None:
            kwargs["concurrent_load"] = args.streams
        spec = SoakSpec(**kwargs)
    corpus = _corpus_for(spec.sizes or DESK_PROFILE, args.seed, args.manifest)
    report = run_soak(spec, None, corpus)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_report(args):
    summaries = load_summaries(args.out)
    for fmt in args.format or ["csv"]:
        print(emit_report(summaries, fmt, args.report_dir or args.out))
    return EXIT_OK


def cmd_compare(args):
    if not 0 < args.alpha < 1:
        raise ValidationError("--alpha must be in (0, 1)", field="alpha")
    rows = [ReportRow.from_strings(d) for d in read_summary_csv(args.out / SUMMARY_CSV)
            if d.get("outcome", "ok") == "ok"]
    table = compare_clients(rows, args.alpha)
    if args.json:
        print(json.dumps(table, indent=2))
    elif table:
        print(format_comparison(table))
    else:
        print("no cells with more than one client")
    return EXIT_OK


COMMANDS = {"corpus": cmd_corpus, "probe": cmd_probe, "serve": cmd_serve, "run": cmd_run,
            "soak": cmd_soak, "report": cmd_report, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ValueError as exc:
        # ValidationError is a ValueError; so are URL and enum parse failures.
        print(f"fedbench: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FedbenchError, OSError) as exc:
        print(f"fedbench: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
