import math

import pytest
from hypothesis import given, strategies as st

from fedbench.errors import ValidationError
from fedbench.model import (
    DEFAULT_WINDOW_SECONDS, OK, Client, EndpointDescriptor, Role, RttStats, ScenarioSpec, SizeClass,
    StreamPlan, TransferSample, WindowSummary, classify_size, compute_rate, default_n_max, http_error,
    summarize_window, validate_scenario,
)

EP = EndpointDescriptor(role="origin", base_url="http://127.0.0.1:9/")


def spec(**kw):
    base = dict(size=SizeClass.M1, streams=1, endpoint=EP)
    base.update(kw)
    return ScenarioSpec(**base)


def test_size_class_bytes_are_binary_multiples():
    assert [s.bytes for s in SizeClass] == [
        2**10, 2**20, 100 * 2**20, 2**30, 10 * 2**30, 100 * 2**30]
    assert [s.label for s in SizeClass] == ["1KB", "1MB", "100MB", "1GB", "10GB", "100GB"]


def test_size_class_bytes_strictly_increasing_and_bijective():
    b = [s.bytes for s in SizeClass]
    assert b == sorted(set(b))
    assert {classify_size(s.label) for s in SizeClass} == set(SizeClass)


def test_classify_size():
    assert classify_size("1MB").bytes == 1_048_576
    assert classify_size("1kb").bytes == 1_024
    with pytest.raises(ValidationError) as exc:
        classify_size("2MB")
    assert "1KB" in str(exc.value) and "100GB" in str(exc.value)


def test_compute_rate_examples():
    assert compute_rate(1_000_000, 2.0) == 500_000
    assert compute_rate(0, 10.0) == 0
    assert compute_rate(104_857_600, 8.0) == 13_107_200


@pytest.mark.parametrize("elapsed", [0, -1.0, float("nan")])
def test_compute_rate_rejects_non_positive_elapsed(elapsed):
    with pytest.raises(ValidationError):
        compute_rate(10, elapsed)


def test_validate_scenario_defaults_window_to_fifteen_minutes():
    s = validate_scenario(spec())
    assert s.window_seconds == DEFAULT_WINDOW_SECONDS == 900
    assert len(s.scenario_id) == 16


@pytest.mark.parametrize("kw,field", [
    (dict(streams=0), "streams"),
    (dict(impact=7), "impact"),
    (dict(complexity=0), "complexity"),
    (dict(client="rsync"), "client"),
    (dict(window_seconds=0), "window_seconds"),
    (dict(seed=-1), "seed"),
])
def test_validate_scenario_errors_name_the_field(kw, field):
    with pytest.raises(ValidationError) as exc:
        validate_scenario(spec(**kw))
    assert exc.value.field == field


def test_annotations_do_not_change_scenario_id():
    # impact/complexity are annotations only.
    a = validate_scenario(spec(impact=1, complexity=5))
    b = validate_scenario(spec(impact=5, complexity=1))
    assert a.scenario_id == b.scenario_id


def test_stream_plan_invariants():
    assert StreamPlan((1, 8, 32), n_max=32).counts == (1, 8, 32)
    assert default_n_max() >= 2
    for bad in [(8, 1), (1, 1), (0,), (1, 64)]:
        with pytest.raises(ValidationError):
            StreamPlan(bad, n_max=32)


def test_endpoint_descriptor():
    assert EP.role is Role.ORIGIN
    assert EP.object_url("obj_1KB.bin") == "http://127.0.0.1:9/data/obj_1KB.bin"
    with pytest.raises(ValidationError):
        EndpointDescriptor(role="origin", base_url="ftp://host/")
    with pytest.raises(ValidationError):
        EndpointDescriptor(role="mirror", base_url="http://host/")
    with pytest.raises(TypeError):
        EP.labels["x"] = "y"


def test_status_strings():
    assert http_error(404) == "http_error(404)"
    with pytest.raises(ValidationError):
        TransferSample("s", 0, 0, 0.0, "weird")
    with pytest.raises(ValidationError):
        TransferSample("s", 0, 0, 0.0, OK, started_at=2.0, finished_at=1.0)


def test_rtt_stats_invariants():
    with pytest.raises(ValidationError):
        RttStats(1.0, 0.5, 2.0, 0.1, 3)
    with pytest.raises(ValidationError):
        RttStats(1.0, 1.0, 1.0, 0.0, 0)


def test_round_trip_every_type():
    s = validate_scenario(spec(labels={"site": "sd"}, client=Client.CURL))
    assert ScenarioSpec.from_dict(s.to_dict()) == s
    assert EndpointDescriptor.from_dict(EP.to_dict()) == EP
    plan = StreamPlan((1, 2), n_max=4)
    assert StreamPlan.from_dict(plan.to_dict()) == plan
    ts = TransferSample(s.scenario_id, 1, 5, 0.25, http_error(404), 0, 1.0, 1.25, True, "x")
    assert TransferSample.from_dict(ts.to_dict()) == ts
    ws = WindowSummary(s, 3, 1, 30, 2.0, 15.0, {http_error(404): 1}, 10.0, 0)
    assert WindowSummary.from_dict(ws.to_dict()) == ws
    r = RttStats(0.1, 0.2, 0.3, 0.05, 10, 1)
    assert RttStats.from_dict(r.to_dict()) == r


sample_st = st.builds(
    lambda ok, b, start, dur: (ok, b, start, dur),
    st.booleans(), st.integers(0, 2**40), st.floats(0, 1e4), st.floats(1e-6, 1e3),
)


@given(st.lists(sample_st, max_size=50), st.floats(0, 1e4))
def test_summary_rate_times_elapsed_is_total_bytes(rows, t0):
    s = validate_scenario(spec(window_seconds=5.0))
    samples = [TransferSample(s.scenario_id, 0, b if ok else 0, d, OK if ok else http_error(500),
                              started_at=t0 + a, finished_at=t0 + a + d)
               for ok, b, a, d in rows]
    w = summarize_window(s, samples, t0)
    assert w.completed + w.failed == len(samples)
    assert w.total_bytes == sum(x.bytes for x in samples if x.ok)
    assert w.elapsed_seconds > 0
    if w.total_bytes:
        assert math.isclose(w.rate_bytes_per_sec * w.elapsed_seconds, w.total_bytes, rel_tol=1e-9)
    else:
        assert w.rate_bytes_per_sec == 0


def test_summary_without_samples_uses_nominal_window():
    s = validate_scenario(spec(window_seconds=5.0))
    w = summarize_window(s, [], 100.0)
    assert (w.completed, w.failed, w.rate_bytes_per_sec, w.elapsed_seconds) == (0, 0, 0.0, 5.0)
