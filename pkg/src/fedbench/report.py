"""Report rows, CSV/JSONL/plot-TSV emission and client comparisons."""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

from .errors import ValidationError
from .model import TransferSample, WindowSummary, classify_size
from .stats import welch_t

FORMATS = ("csv", "jsonl", "plot_tsv")
OUTPUT_NAMES = {"csv": "report.csv", "jsonl": "report.jsonl", "plot_tsv": "report_plot.tsv"}
NO_DIFFERENCE = "no significant difference"
DIFFERENCE = "significant difference"
INSUFFICIENT = "insufficient samples"


def flatten_labels(labels) -> str:
    return ";".join(f"{k}={v}" for k, v in sorted(labels.items()))


def parse_labels(text: str) -> dict:
    if not text:
        return {}
    return dict(item.split("=", 1) for item in text.split(";"))


@dataclass(frozen=True)
class ReportRow:
    scenario_id: str
    endpoint_role: str
    client: str
    size_label: str
    streams: int
    rate_bytes_per_sec: float
    completed: int
    failed: int
    window_seconds: float
    labels: str

    @classmethod
    def from_summary(cls, s: WindowSummary) -> "ReportRow":
        sc = s.scenario
        return cls(
            scenario_id=sc.scenario_id,
            endpoint_role=sc.endpoint.role.value,
            client=sc.client.value,
            size_label=sc.size.label,
            streams=sc.streams,
            rate_bytes_per_sec=s.rate_bytes_per_sec,
            completed=s.completed,
            failed=s.failed,
            window_seconds=sc.window_seconds,
            labels=flatten_labels(sc.labels),
        )

    @classmethod
    def from_strings(cls, d: dict) -> "ReportRow":
        return cls(
            scenario_id=d["scenario_id"],
            endpoint_role=d["endpoint_role"],
            client=d["client"],
            size_label=d["size_label"],
            streams=int(d["streams"]),
            rate_bytes_per_sec=float(d["rate_bytes_per_sec"]),
            completed=int(d["completed"]),
            failed=int(d["failed"]),
            window_seconds=float(d["window_seconds"]),
            labels=d.get("labels") or "",
        )

    def csv_values(self) -> list[str]:
        # repr() keeps floats exact through a CSV round trip.
        return [repr(v) if isinstance(v, float) else str(v) for v in asdict(self).values()]


REPORT_FIELDS = [f.name for f in fields(ReportRow)]


def rows_to_csv(rows: Iterable[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in rows:
        w.writerow(r.csv_values())
    return buf.getvalue()


def rows_to_jsonl(rows: Iterable[ReportRow]) -> str:
    return "".join(json.dumps(asdict(r)) + "\n" for r in rows)


def rows_to_plot_tsv(rows: Iterable[ReportRow]) -> str:
    """One block per size class: ``streams<TAB>rate_MB_per_sec`` lines."""
    rows = sorted(rows, key=lambda r: classify_size(r.size_label).bytes)
    blocks = []
    for label, group in itertools.groupby(rows, key=lambda r: r.size_label):
        lines = [f"# size_label={label}", "# streams\trate_MB_per_sec"]
        for r in sorted(group, key=lambda r: r.streams):
            lines.append(f"{r.streams}\t{r.rate_bytes_per_sec / 1e6!r}")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def parse_plot_tsv(text: str) -> list[tuple[str, int, float]]:
    """Inverse of the plot TSV layout: ``(size_label, streams, rate_B_per_s)`` triples."""
    out, label = [], None
    for line in text.splitlines():
        if line.startswith("# size_label="):
            label = line.split("=", 1)[1]
        elif line and not line.startswith("#"):
            streams, rate = line.split("\t")
            out.append((label, int(streams), float(rate) * 1e6))
    return out


def parse_csv_rows(text: str) -> list[ReportRow]:
    return [ReportRow.from_strings(d) for d in csv.DictReader(io.StringIO(text))]


def read_csv_rows(path: str | os.PathLike) -> list[ReportRow]:
    return parse_csv_rows(Path(path).read_text())


def read_jsonl_rows(text: str) -> list[ReportRow]:
    return [ReportRow(**json.loads(line)) for line in text.splitlines() if line.strip()]


def emit_report(summaries: Iterable[WindowSummary], fmt: str, out_dir: str | os.PathLike) -> Path:
    """Write the report in ``fmt`` under ``out_dir`` and return its path."""
    if fmt not in FORMATS:
        raise ValidationError(f"unknown report format {fmt!r}; expected one of {', '.join(FORMATS)}",
                              field="format")
    rows = [ReportRow.from_summary(s) for s in summaries]
    if not rows:
        raise ValidationError("no summaries to report", field="summaries")
    render = {"csv": rows_to_csv, "jsonl": rows_to_jsonl, "plot_tsv": rows_to_plot_tsv}[fmt]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / OUTPUT_NAMES[fmt]
    path.write_text(render(rows))
    return path


def write_samples(path: str | os.PathLike, samples: Iterable[TransferSample]) -> Path:
    """JSON Lines sample log, written atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w") as f:
        for s in samples:
            f.write(json.dumps(s.to_dict()) + "\n")
    os.replace(tmp, path)
    return path


def read_samples(path: str | os.PathLike) -> list[TransferSample]:
    with open(path) as f:
        return [TransferSample.from_dict(json.loads(line)) for line in f if line.strip()]


def compare_clients(rows: Iterable[ReportRow], alpha: float = 0.05) -> list[dict]:
    """Pairwise Welch tests between clients within each (endpoint, size, streams) cell."""
    cells: dict[tuple, dict[str, list[float]]] = {}
    for r in rows:
        key = (r.endpoint_role, r.size_label, r.streams)
        cells.setdefault(key, {}).setdefault(r.client, []).append(r.rate_bytes_per_sec)
    table = []
    for (role, size, streams), by_client in cells.items():
        for a, b in itertools.combinations(sorted(by_client), 2):
            va, vb = by_client[a], by_client[b]
            entry = {
                "endpoint_role": role, "size_label": size, "streams": streams,
                "client_a": a, "client_b": b, "n_a": len(va), "n_b": len(vb),
                "mean_a": sum(va) / len(va), "mean_b": sum(vb) / len(vb),
                "t": None, "dof": None, "p_two_sided": None, "alpha": alpha,
            }
            if len(va) < 2 or len(vb) < 2:
                entry["verdict"] = INSUFFICIENT
            else:
                res = welch_t(va, vb, alpha)
                entry.update(t=res.t, dof=res.dof, p_two_sided=res.p_two_sided,
                             verdict=NO_DIFFERENCE if res.p_two_sided >= alpha else DIFFERENCE)
            table.append(entry)
    return table


def format_comparison(table: list[dict]) -> str:
    lines = []
    for e in table:
        head = (f"{e['endpoint_role']} {e['size_label']} x{e['streams']}: "
                f"{e['client_a']} ({e['mean_a'] / 1e6:.3f} MB/s, n={e['n_a']}) vs "
                f"{e['client_b']} ({e['mean_b'] / 1e6:.3f} MB/s, n={e['n_b']})")
        if e["p_two_sided"] is None:
            lines.append(f"{head}: {e['verdict']}")
        else:
            lines.append(f"{head}: t={e['t']:.3f} dof={e['dof']:.2f} p={e['p_two_sided']:.4g} -> {e['verdict']}")
    return "\n".join(lines)
