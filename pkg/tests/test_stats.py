import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from fedbench.errors import ValidationError
from fedbench.stats import SampleSet, betainc, summarize, t_two_sided_p, welch_t

# p for |t| = 1, dof = 8, frozen from the trapezoid oracle below (agrees with scipy to 1e-15).
GOLDEN_P_T1_DOF8 = 0.346593507087334


def t_pdf(x, nu):
    c = math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2) - 0.5 * math.log(nu * math.pi)
    return math.exp(c - (nu + 1) / 2 * math.log1p(x * x / nu))


def trapezoid_p(t, nu, n=200_000):
    """Two-sided tail 1 - 2 * integral_0^|t| of the t density, by the trapezoid rule."""
    t = abs(t)
    h = t / n
    s = 0.5 * (t_pdf(0.0, nu) + t_pdf(t, nu)) + math.fsum(t_pdf(i * h, nu) for i in range(1, n))
    return 1.0 - 2.0 * s * h


def test_summarize_examples():
    assert summarize([5.0]) == {"mean": 5.0, "sdev_sample": 0.0, "min": 5.0, "max": 5.0,
                                "p50": 5.0, "p95": 5.0, "n": 1}
    s = summarize([1, 2, 3])
    assert s["mean"] == 2 and s["sdev_sample"] == 1.0
    assert all(v == 0 for k, v in summarize([0, 0, 0, 0]).items() if k != "n")
    with pytest.raises(ValidationError):
        summarize([])


def test_nearest_rank_percentiles():
    s = summarize(list(range(1, 21)))
    assert s["p50"] == 10 and s["p95"] == 19
    s = summarize([3, 1, 2])
    assert s["p50"] == 2 and s["p95"] == 3


def test_sample_set_rejects_bad_values():
    for bad in ([-1.0], [math.nan], [math.inf]):
        with pytest.raises(ValidationError):
            SampleSet("x", bad)


def test_identical_sets_give_p_one():
    r = welch_t([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    assert r.t == 0 and r.p_two_sided == 1.0


def test_hand_derived_example():
    r = welch_t([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert r.t == -1.0
    assert r.dof == 8.0
    assert r.p_two_sided == pytest.approx(GOLDEN_P_T1_DOF8, abs=1e-12)
    assert abs(r.p_two_sided - trapezoid_p(1.0, 8.0)) < 1e-6
    assert r.significant_at[0.05] is False


def test_zero_variance_conventions():
    r = welch_t([10, 10, 10], [20, 20, 20])
    assert r.p_two_sided == 0.0 and r.significant_at[0.05]
    assert welch_t([7, 7], [7, 7]).p_two_sided == 1.0


def test_needs_two_values_per_group():
    with pytest.raises(ValidationError):
        welch_t([1.0], [1.0, 2.0])


@pytest.mark.parametrize("t,nu", [(0.5, 3.0), (2.0, 10.0), (1.3, 2.5), (3.5, 37.2), (0.1, 1.0)])
def test_t_tail_against_trapezoid(t, nu):
    assert abs(t_two_sided_p(t, nu) - trapezoid_p(t, nu)) < 1e-6


def test_against_scipy_when_available():
    sp = pytest.importorskip("scipy.stats")
    a, b = [3.1, 2.9, 3.5, 3.3, 2.8, 3.0], [3.6, 3.9, 3.4, 4.2]
    ours = welch_t(a, b)
    ref = sp.ttest_ind(a, b, equal_var=False)
    assert ours.t == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.p_two_sided == pytest.approx(ref.pvalue, rel=1e-9)


values = st.lists(st.floats(1.0, 1e6, allow_nan=False), min_size=2, max_size=30)


def has_spread(v):
    return max(v) - min(v) > 1e-3 * max(v)


@settings(max_examples=200)
@given(values, values)
def test_symmetry(a, b):
    assume(has_spread(a) and has_spread(b))
    r1, r2 = welch_t(a, b), welch_t(b, a)
    assert r1.t == -r2.t
    assert r1.p_two_sided == r2.p_two_sided
    assert r1.dof > 0 and 0.0 <= r1.p_two_sided <= 1.0


@settings(max_examples=200)
@given(values, values, st.floats(1e-3, 1e3))
def test_scale_invariance(a, b, c):
    assume(has_spread(a) and has_spread(b))
    r1 = welch_t(a, b)
    r2 = welch_t([x * c for x in a], [x * c for x in b])
    assert r2.t == pytest.approx(r1.t, rel=1e-9, abs=1e-9)
    assert r2.dof == pytest.approx(r1.dof, rel=1e-9)
    assert r2.p_two_sided == pytest.approx(r1.p_two_sided, rel=1e-9, abs=1e-12)


@settings(max_examples=100)
@given(values, st.lists(st.floats(0, 1e5), min_size=2, max_size=8))
def test_monotone_in_mean_difference(a, shifts):
    assume(has_spread(a))
    ps = [welch_t(a, [x + s for x in a]).p_two_sided for s in sorted(shifts)]
    assert all(p2 <= p1 + 1e-12 for p1, p2 in zip(ps, ps[1:]))


@settings(max_examples=300)
@given(st.floats(0.05, 200), st.floats(0.05, 200), st.floats(0.0, 1.0))
def test_incomplete_beta_reflection(a, b, x):
    # Use a pair (x, y) with x + y == 1 exactly, so the rounding of 1 - x is not under test.
    y = 1.0 - x
    x = 1.0 - y
    assume(1.0 - x == y)
    assert betainc(a, b, x) + betainc(b, a, y) == pytest.approx(1.0, abs=1e-9)


def test_incomplete_beta_known_values():
    assert betainc(1, 1, 0.3) == pytest.approx(0.3, abs=1e-14)
    assert betainc(2, 3, 0.4) == pytest.approx(0.5248, abs=1e-12)  # closed form 6x^2 - 8x^3 + 3x^4
    assert betainc(0.5, 0.5, 0.5) == pytest.approx(0.5, abs=1e-13)
