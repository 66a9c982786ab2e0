import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iltber.ber import (
    ber_at_margin,
    ber_curve,
    ber_histogram,
    chip_percentiles,
    margin_for_ber,
    margin_grid,
    optimal_threshold,
    tail_log_probs,
)
from iltber.stats_core import DegenerateFitError, DomainError, LogNormalFit
from iltber.synth import quad_normal_tail, random_fit_pairs

LN10 = math.log(10.0)

mus = st.floats(min_value=0.0, max_value=20.0)
sigmas = st.floats(min_value=0.02, max_value=2.0)
margins = st.floats(min_value=0.0, max_value=10.0)


# --- threshold --------------------------------------------------------------------

def test_threshold_midpoint():
    h, l = LogNormalFit(12.0, 0.4), LogNormalFit(9.0, 0.4)
    assert optimal_threshold(h, l, 0.0) == pytest.approx(10.5, abs=1e-15)


@pytest.mark.parametrize("delta", [0.0, 0.3, 1.0, 9.0])
def test_threshold_equal_sigmas(delta):
    h, l = LogNormalFit(13.0, 0.7), LogNormalFit(8.0, 0.7)
    assert optimal_threshold(h, l, delta) == pytest.approx((21.0 - math.log1p(delta)) / 2, abs=1e-14)


def test_threshold_tails_equal_by_quadrature():
    l, h = LogNormalFit(math.log(1e4), 0.3), LogNormalFit(math.log(1e6), 0.5)
    p = ber_at_margin(h, l, 1.0)
    tail_l = quad_normal_tail((p.ln_r_l_max - l.mu) / l.sigma)
    tail_h = quad_normal_tail((h.mu - p.ln_r_h_min) / h.sigma)
    assert tail_l == pytest.approx(tail_h, rel=1e-10)
    assert p.ber == pytest.approx(tail_l, rel=1e-10)


def test_threshold_errors():
    ok = LogNormalFit(10.0, 0.5)
    with pytest.raises(DegenerateFitError):
        optimal_threshold(ok, LogNormalFit(8.0, 0.0), 1.0)
    for bad in (-1.0, -2.0, math.nan, math.inf):
        with pytest.raises(DomainError):
            optimal_threshold(ok, LogNormalFit(8.0, 0.3), bad)


# --- BER at a margin ---------------------------------------------------------------

def test_ber_fully_overlapping():
    f = LogNormalFit(10.0, 0.5)
    p = ber_at_margin(f, f, 0.0)
    assert p.ber == pytest.approx(0.5, abs=1e-15)
    assert p.log10_ber == pytest.approx(math.log10(0.5), abs=1e-15)


def test_ber_two_sigma():
    p = ber_at_margin(LogNormalFit(2.0, 0.5), LogNormalFit(0.0, 0.5), 0.0)
    assert p.ber == pytest.approx(0.0227501319, abs=5e-11)
    assert p.ber == pytest.approx(quad_normal_tail(2.0), rel=1e-10)


def test_ber_underflow_keeps_log():
    p = ber_at_margin(LogNormalFit(40.0, 0.1), LogNormalFit(5.0, 0.1), 0.0)
    assert p.ber == 0.0
    assert math.isfinite(p.log10_ber) and p.log10_ber < -300


def test_representative_chip_scale():
    # typical chip parameters; the target is order of magnitude only
    p = ber_at_margin(LogNormalFit(13.1, 0.45), LogNormalFit(9.2, 0.14), 1.0)
    assert -12 < p.log10_ber < -5


@settings(max_examples=200)
@given(mus, mus, sigmas, sigmas, margins)
def test_point_invariants(mu_h, mu_l, s_h, s_l, delta):
    h, l = LogNormalFit(mu_h, s_h), LogNormalFit(mu_l, s_l)
    p = ber_at_margin(h, l, delta)
    assert p.ln_r_h_min == pytest.approx(p.ln_r_l_max + math.log1p(delta), abs=1e-12)
    a, b = tail_log_probs(h, l, p)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))
    assert p.log10_ber <= 0.0 and 0.0 <= p.ber <= 1.0


# --- curves ----------------------------------------------------------------------------

def test_curve_two_points():
    c = ber_curve(LogNormalFit(12.0, 0.5), LogNormalFit(9.0, 0.2), [0.0, 1.0])
    assert len(c.points) == 2 and c.log10_bers[1] > c.log10_bers[0]


def test_curve_single_point_matches():
    h, l = LogNormalFit(12.0, 0.5), LogNormalFit(9.0, 0.2)
    assert ber_curve(h, l, [1.0]).points == (ber_at_margin(h, l, 1.0),)
    assert ber_curve(h, l, [1.0]).at(1.0) == ber_at_margin(h, l, 1.0)


def test_curve_rejects_unordered():
    with pytest.raises(DomainError):
        ber_curve(LogNormalFit(12.0, 0.5), LogNormalFit(9.0, 0.2), [1.0, 0.5])


def test_margin_grid():
    g = margin_grid()
    assert len(g) == 50 and g[0] == 0.1 and g[-1] == 10.0
    assert all(b > a for a, b in zip(g, g[1:]))
    assert margin_grid(1.0, 2.0, 1) == [1.0]


def test_curve_monotone_on_random_pairs():
    grid = margin_grid()
    for h, l in random_fit_pairs(200, seed=5):
        ys = ber_curve(h, l, grid).log10_bers
        assert all(b > a for a, b in zip(ys, ys[1:]))


@settings(max_examples=100)
@given(mus, mus, sigmas, sigmas, st.floats(min_value=1e-6, max_value=1e6))
def test_scale_invariance(mu_h, mu_l, s_h, s_l, c):
    grid = [0.0, 0.5, 1.0, 3.0, 10.0]
    a = ber_curve(LogNormalFit(mu_h, s_h), LogNormalFit(mu_l, s_l), grid)
    b = ber_curve(LogNormalFit(mu_h + math.log(c), s_h), LogNormalFit(mu_l + math.log(c), s_l), grid)
    for pa, pb in zip(a.points, b.points):
        assert pb.log10_ber == pytest.approx(pa.log10_ber, rel=1e-12, abs=1e-12)
        assert pb.ln_r_l_max - pa.ln_r_l_max == pytest.approx(math.log(c), abs=1e-12)


# --- inverse ----------------------------------------------------------------------------

def _bisect_margin(h, l, target):
    lo, hi = -1.0 + 1e-15, 1.0
    while ber_at_margin(h, l, hi).log10_ber < math.log10(target):
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ber_at_margin(h, l, mid).log10_ber < math.log10(target):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("target", [1e-3, 1e-6, 1e-9])
def test_inverse_round_trip_and_bisection(target):
    for h, l in random_fit_pairs(25, seed=17):
        m = margin_for_ber(h, l, target)
        assert ber_at_margin(h, l, m).log10_ber == pytest.approx(math.log10(target), abs=1e-9)
        if m < 1e6:
            assert m == pytest.approx(_bisect_margin(h, l, target), rel=1e-8, abs=1e-10)


def test_inverse_limit_and_order():
    h, l = LogNormalFit(12.0, 0.5), LogNormalFit(9.0, 0.2)
    near_half = margin_for_ber(h, l, 0.5 - 1e-12)
    assert near_half == pytest.approx(math.expm1(3.0), rel=1e-9)
    ms = [margin_for_ber(h, l, t) for t in (1e-9, 1e-6, 1e-3, 0.1)]
    assert all(b > a for a, b in zip(ms, ms[1:]))


@pytest.mark.parametrize("t", [0.0, 0.5, 0.7, -1e-3])
def test_inverse_domain(t):
    with pytest.raises(DomainError):
        margin_for_ber(LogNormalFit(12.0, 0.5), LogNormalFit(9.0, 0.2), t)


# --- percentiles -----------------------------------------------------------------------

def _curves(values):
    out = []
    for key, mu_h in values:
        out.append((key, ber_curve(LogNormalFit(mu_h, 0.5), LogNormalFit(9.0, 0.2), [1.0], chip=key)))
    return out


def test_percentiles_single_chip():
    assert chip_percentiles(_curves([("a", 12.0)])) == ("a", "a", "a")


def test_percentiles_23_chips_ranks():
    # larger mu_h -> lower BER, so ascending BER rank r belongs to mu_h index 23 - r
    mus_ = [11.0 + 0.1 * i for i in range(23)]
    chips = _curves([(f"c{i:02d}", m) for i, m in enumerate(mus_)])
    p25, med, p75 = chip_percentiles(chips)
    assert (p25, med, p75) == ("c17", "c11", "c05")  # 1-based ranks 6, 12, 18


def test_percentiles_tie_break():
    chips = _curves([("b", 12.0), ("a", 12.0), ("c", 12.0), ("d", 12.0)])
    assert chip_percentiles(chips) == ("a", "b", "c")
    assert chip_percentiles(list(reversed(chips))) == ("a", "b", "c")


def test_percentiles_empty():
    with pytest.raises(DomainError):
        chip_percentiles([])


# --- histogram -------------------------------------------------------------------------

def test_histogram_identical():
    bins = ber_histogram([("a", -8.3), ("b", -8.3)], 1.0)
    assert len(bins) == 1 and bins[0].cumulative_pct == 100.0 and bins[0].lower == -9.0


def test_histogram_one_decade_apart():
    bins = ber_histogram([("a", -8.5), ("b", -7.5)], 1.0)
    assert [b.count for b in bins] == [1, 1]
    assert [b.cumulative_pct for b in bins] == [50.0, 100.0]


def test_histogram_keeps_empty_bins():
    bins = ber_histogram([("a", -10.2), ("b", -6.1)], 1.0)
    assert [b.count for b in bins] == [1, 0, 0, 0, 1]
    assert [b.lower for b in bins] == [-11.0, -10.0, -9.0, -8.0, -7.0]


def test_histogram_errors():
    with pytest.raises(DomainError):
        ber_histogram([("a", -1.0)], 0.0)
    with pytest.raises(DomainError):
        ber_histogram([], 1.0)


@given(st.lists(st.floats(min_value=-40, max_value=0), min_size=1, max_size=60),
       st.floats(min_value=0.1, max_value=5.0))
def test_histogram_cumulative_properties(vals, w):
    bins = ber_histogram([(i, v) for i, v in enumerate(vals)], w)
    cum = [b.cumulative_pct for b in bins]
    assert cum == sorted(cum) and cum[-1] == 100.0
    assert sum(b.count for b in bins) == len(vals)
    for v in vals:
        assert any(b.lower <= v < b.upper or math.isclose(v, b.upper) for b in bins)
