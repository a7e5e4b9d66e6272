import json
import random

import pytest

from fedbench.datagen import synthetic_manifest
from fedbench.errors import FedbenchError, ValidationError
from fedbench.matrix import (
    SUMMARY_CSV, CampaignSpec, SoakSpec, Sweeps, expand_matrix, load_scenarios, load_summaries,
    read_summary_csv, run_campaign, run_soak, scan_logs,
)
from fedbench.model import (
    OK, PAPER_PROFILE, Client, EndpointDescriptor, SizeClass, StreamPlan, TransferSample, http_error,
    summarize_window,
)
from fedbench.report import read_samples

ORIGIN = EndpointDescriptor(role="origin", base_url="http://127.0.0.1:9")


def campaign(**kw):
    base = dict(sizes=(SizeClass.K1,), stream_counts=StreamPlan((1,), n_max=4), endpoints=(ORIGIN,),
                window_seconds=1.0)
    base.update(kw)
    return CampaignSpec(**base)


def fake_runner(calls=None, interrupt_after=None):
    """Deterministic stand-in for run_window: results depend only on the scenario id."""
    def run(scenario, corpus, token_key=None):
        if calls is not None:
            if interrupt_after is not None and len(calls) >= interrupt_after:
                raise KeyboardInterrupt
            calls.append(scenario.scenario_id)
        rng = random.Random(int(scenario.scenario_id, 16))
        t, samples = 100.0, []
        for _ in range(rng.randint(1, 20)):
            d = rng.uniform(0.01, 0.1)
            ok = rng.random() > 0.1
            samples.append(TransferSample(scenario.scenario_id, 0, scenario.size.bytes if ok else 0, d,
                                          OK if ok else http_error(503), started_at=t, finished_at=t + d))
            t += d
        return summarize_window(scenario, samples, 100.0), samples
    return run


def test_table_one_dimensions():
    spec = campaign(sizes=PAPER_PROFILE, stream_counts=StreamPlan((1, 8, 32, 64, 128), n_max=128))
    assert len(expand_matrix(spec)) == 30


def test_single_cell_and_determinism():
    a, b = expand_matrix(campaign()), expand_matrix(campaign())
    assert len(a) == 1 and a == b
    assert a[0].scenario_id == b[0].scenario_id and len(a[0].scenario_id) == 16


def test_ordering():
    cache = EndpointDescriptor(role="cache", base_url="http://127.0.0.1:8")
    spec = campaign(sizes=(SizeClass.M1, SizeClass.K1), stream_counts=StreamPlan((1, 2), n_max=4),
                    endpoints=(ORIGIN, cache), clients=(Client.NATIVE, Client.CURL))
    cells = [(s.endpoint.role.value, s.client.value, s.size.label, s.streams) for s in expand_matrix(spec)]
    assert cells == [(r, c, z, n) for r in ("origin", "cache") for c in ("native", "curl")
                     for z in ("1KB", "1MB") for n in (1, 2)]
    assert len({s.scenario_id for s in expand_matrix(spec)}) == len(cells)


def test_sweeps_become_label_variants():
    redir = EndpointDescriptor(role="redirector", base_url="http://127.0.0.1:7")
    o2 = EndpointDescriptor(role="origin", base_url="http://127.0.0.1:6")
    spec = campaign(endpoints=(ORIGIN, o2, redir),
                    sweeps=Sweeps(worker_counts=(1, 8), auth_modes=("none", "bearer"), via_redirector=True,
                                  tpc=True))
    scen = expand_matrix(spec)
    first = [s for s in scen if s.endpoint.base_url == ORIGIN.base_url]
    assert len(first) == 2 * 2 * 2
    assert {s.labels["worker_count"] for s in first} == {"1", "8"}
    assert {s.endpoint.auth.value for s in first} == {"none", "bearer"}
    second = [s for s in scen if s.endpoint.base_url == o2.base_url]
    assert {s.labels.get("transfer") for s in second} == {None, "tpc"}
    assert len(scen) == 8 + 16 + 4


def test_empty_cross_product_rejected():
    with pytest.raises(ValidationError):
        expand_matrix(campaign(sizes=()))
    with pytest.raises(ValidationError):
        expand_matrix(campaign(sweeps=Sweeps(via_redirector=True)))


def test_repeats_get_distinct_ids():
    scen = expand_matrix(campaign(repeats=3))
    assert [s.labels["repeat"] for s in scen] == ["0", "1", "2"]
    assert len({s.scenario_id for s in scen}) == 3


def test_campaign_against_real_origin(servers, small_manifest, tmp_path):
    o = servers.origin(small_manifest)
    ep = EndpointDescriptor(role="origin", base_url=o.url)
    scen = expand_matrix(campaign(sizes=(SizeClass.K1, SizeClass.M1), endpoints=(ep,), window_seconds=0.5))
    path = run_campaign(scen, small_manifest, tmp_path)
    rows = read_summary_csv(path)
    assert len(rows) == 2 and all(r["outcome"] == "ok" for r in rows)
    logs = sorted(p.name for p in tmp_path.glob("samples_*.jsonl"))
    assert logs == sorted(f"samples_{s.scenario_id}.jsonl" for s in scen)
    summaries = {s.scenario.scenario_id: s for s in load_summaries(tmp_path)}
    prev_last = None
    for sc, row in zip(scen, rows):
        samples = read_samples(tmp_path / f"samples_{sc.scenario_id}.jsonl")
        total = sum(s.bytes for s in samples if s.status == OK)
        elapsed = max(s.finished_at for s in samples) - summaries[sc.scenario_id].started_at
        assert float(row["rate_bytes_per_sec"]) == total / elapsed
        assert int(row["total_bytes"]) == total
        if prev_last is not None:
            assert min(s.started_at for s in samples) >= prev_last  # strictly sequential
        prev_last = max(s.finished_at for s in samples)
    assert load_scenarios(tmp_path) == scen


def test_failed_scenario_does_not_stop_campaign(servers, small_manifest, tmp_path):
    o = servers.origin(small_manifest)
    dead = EndpointDescriptor(role="origin", base_url="http://127.0.0.1:9")
    live = EndpointDescriptor(role="origin", base_url=o.url)
    scen = expand_matrix(campaign(endpoints=(dead, live), window_seconds=0.3))
    rows = read_summary_csv(run_campaign(scen, small_manifest, tmp_path))
    assert rows[0]["outcome"].startswith("failed: EndpointUnreachable")
    assert rows[1]["outcome"] == "ok" and int(rows[1]["completed"]) > 0


def test_unwritable_output_aborts_before_first_window(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    calls = []
    with pytest.raises(FedbenchError):
        run_campaign(expand_matrix(campaign()), synthetic_manifest(["1KB"]), blocker / "sub",
                     window_runner=fake_runner(calls), prepare=None)
    assert calls == []


def test_resume_yields_identical_csv(tmp_path):
    spec = campaign(sizes=(SizeClass.K1, SizeClass.M1), stream_counts=StreamPlan((1, 2, 4), n_max=4))
    scen = expand_matrix(spec)
    corpus = synthetic_manifest(["1KB", "1MB"])
    full = tmp_path / "full"
    run_campaign(scen, corpus, full, window_runner=fake_runner(), prepare=None)
    part = tmp_path / "part"
    calls = []
    with pytest.raises(KeyboardInterrupt):
        run_campaign(scen, corpus, part, window_runner=fake_runner(calls, interrupt_after=2), prepare=None)
    assert len(read_summary_csv(part / SUMMARY_CSV)) == 2
    calls2 = []
    run_campaign(scen, corpus, part, window_runner=fake_runner(calls2), prepare=None)
    assert calls2 == [s.scenario_id for s in scen[2:]]
    assert (part / SUMMARY_CSV).read_bytes() == (full / SUMMARY_CSV).read_bytes()
    for s in scen:
        name = f"samples_{s.scenario_id}.jsonl"
        assert (part / name).read_bytes() == (full / name).read_bytes()


def test_soak_spec_validation():
    with pytest.raises(ValidationError):
        SoakSpec(duration_seconds=0)
    assert SoakSpec().duration_seconds == 60


def test_soak_fault_isolation(servers, small_manifest, tmp_path):
    log = tmp_path / "origin.log"
    o = servers.origin(small_manifest, force_404={SizeClass.M1.object_name}, log_path=log)
    ep = EndpointDescriptor(role="origin", base_url=o.url)
    rep = run_soak(SoakSpec(duration_seconds=1.0, concurrent_load=1, log_paths=(str(log),),
                            output_dir=tmp_path), ep, small_manifest)
    per = rep["per_size_class"]
    assert per["1KB"]["failed"] == 0 and per["1KB"]["completed"] > 0
    assert per["1MB"]["completed"] == 0 and per["1MB"]["failed"] == per["1MB"]["requests"] > 0
    assert rep["errors_by_status"] == {http_error(404): per["1MB"]["failed"]}
    assert rep["log_scan"]["counts"] == {"ERROR": 0, "FATAL": 0, "PANIC": 0}
    assert json.loads((tmp_path / "soak_report.json").read_text()) == rep


def test_soak_unreachable_fails_fast():
    from fedbench.errors import EndpointUnreachable
    with pytest.raises(EndpointUnreachable):
        run_soak(SoakSpec(duration_seconds=1), ORIGIN, synthetic_manifest(["1KB"]))


def test_scan_logs_counts_and_excerpts(tmp_path):
    p = tmp_path / "a.log"
    p.write_text("ok\nERROR one\nfine\nERROR two " + "x" * 300 + "\nerror lower\nERROR three\n")
    r = scan_logs([p])
    assert r["counts"] == {"ERROR": 3, "FATAL": 0, "PANIC": 0}
    assert r["first"]["ERROR"]["line"] == 2 and r["last"]["ERROR"]["excerpt"] == "ERROR three"
    assert all(len(v["excerpt"]) <= 200 for v in (*r["first"].values(), *r["last"].values()))
    assert len(scan_logs([p])["last"]["ERROR"]["excerpt"]) <= 200
    e = tmp_path / "empty.log"
    e.write_text("")
    assert scan_logs([e])["counts"] == {"ERROR": 0, "FATAL": 0, "PANIC": 0}


def test_scan_logs_planted_counts(tmp_path):
    rng = random.Random(11)
    truth = {"ERROR": 0, "FATAL": 0, "PANIC": 0}
    lines = []
    for i in range(10_000):
        tok = rng.choice(["ERROR", "FATAL", "PANIC", None, None, None, None])
        if tok:
            truth[tok] += 1
            lines.append(f"{i} {tok} something happened")
        else:
            lines.append(f"{i} INFO all good")
    p = tmp_path / "big.log"
    p.write_text("\n".join(lines) + "\n")
    r = scan_logs([p, tmp_path / "missing.log"])
    assert r["counts"] == truth
    assert r["lines_scanned"] == 10_000
    assert str(tmp_path / "missing.log") in r["unreadable"]


def test_scan_logs_custom_patterns(tmp_path):
    p = tmp_path / "a.log"
    p.write_text("WARN x\nWARN y\n")
    assert scan_logs([p], patterns=("WARN",))["counts"] == {"WARN": 2}
