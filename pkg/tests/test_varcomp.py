import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iltber.stats_core import DomainError, InsufficientDataError
from iltber.synth import FleetConfig, gen_nested_dataset
from iltber.data_model import forming_observations
from iltber.varcomp import (
    VarianceComponents,
    coefficient_of_variation,
    ems_coefficients,
    variance_components,
)


def _projection(groups):
    """Projection onto group-indicator columns for a label per observation."""
    labels = sorted(set(groups))
    z = np.array([[1.0 if g == lab else 0.0 for lab in labels] for g in groups])
    return z @ np.linalg.pinv(z), z


def ems_oracle(sizes):
    """k1, k2, k3 from traces of quadratic forms: E[y'Ay] = sum_s s^2 tr(A Z Z')."""
    lot_of, wafer_of = [], []
    for i, ws in enumerate(sizes):
        for j, nij in enumerate(ws):
            lot_of += [i] * nij
            wafer_of += [(i, j)] * nij
    n = len(lot_of)
    p_g = np.full((n, n), 1.0 / n)
    p_l, z_l = _projection(lot_of)
    p_w, z_w = _projection(wafer_of)
    a, b = len(sizes), sum(len(ws) for ws in sizes)
    ww, ll = z_w @ z_w.T, z_l @ z_l.T
    k1 = np.trace((p_w - p_l) @ ww) / (b - a)
    k2 = np.trace((p_l - p_g) @ ww) / (a - 1)
    k3 = np.trace((p_l - p_g) @ ll) / (a - 1)
    return k1, k2, k3


def rows(values_by_lot):
    out = []
    for i, wafers in enumerate(values_by_lot):
        for j, chips in enumerate(wafers):
            for k, v in enumerate(chips):
                out.append((f"L{i}", f"W{j}", k, v))
    return out


# --- published arithmetic ------------------------------------------------------------

def test_table_arithmetic_50nm():
    vc = VarianceComponents.from_components(2.78, 0.14, 0.08, 0.04)
    assert vc.sd_total == pytest.approx(0.166, abs=1e-3)
    assert round(vc.sd_total, 2) == 0.17
    assert coefficient_of_variation(vc) == pytest.approx(0.06, abs=0.003)


def test_cov_examples():
    assert 0.17 / 2.78 == pytest.approx(0.0612, abs=1e-4)
    vc = VarianceComponents("200nm", 2.18, 0.0, 0.0, 0.22, 0.22, (0, 0, 0))
    assert coefficient_of_variation(vc) == pytest.approx(0.101, abs=1e-3)
    zero = VarianceComponents("x", 2.0, 0.0, 0.0, 0.0, 0.0, (1, 1, 1))
    assert coefficient_of_variation(zero) == 0.0
    with pytest.raises(DomainError):
        coefficient_of_variation(VarianceComponents("x", 0.0, 0.1, 0.1, 0.1, 0.17, (1, 1, 1)))


# --- estimator ------------------------------------------------------------------------

def test_equal_values():
    vc = variance_components(rows([[[2.5] * 4] * 3] * 3))
    assert vc.mean == 2.5
    assert (vc.sd_ctc, vc.sd_w2w, vc.sd_l2l, vc.sd_total) == (0.0, 0.0, 0.0, 0.0)


def test_empty_and_nonfinite():
    with pytest.raises(InsufficientDataError):
        variance_components([])
    with pytest.raises(DomainError):
        variance_components([("L", "W", 0, math.nan)])


def test_single_lot_not_estimable():
    vc = variance_components(rows([[[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]]))
    assert vc.sd_l2l is None and vc.sd_w2w is not None
    vc = variance_components(rows([[[1.0, 2.0, 3.0]]]))
    assert vc.sd_l2l is None and vc.sd_w2w is None
    assert vc.sd_ctc == pytest.approx(1.0)
    assert vc.sd_total == pytest.approx(1.0)


def test_hand_computed_balanced():
    # 2 lots x 2 wafers x 2 chips; MS values worked out by hand
    data = [[[1.0, 3.0], [5.0, 7.0]], [[2.0, 4.0], [10.0, 12.0]]]
    vc = variance_components(rows(data))
    # ms_chip = 2, ms_wafer = (2*(2-4)^2*2 + 2*(3-7)^2*2)/2 = 40, ms_lot = 8*(1.5^2)/1 = 18
    assert vc.mean_squares == pytest.approx({"chip": 2.0, "wafer": 40.0, "lot": 18.0})
    assert vc.sd_ctc == pytest.approx(math.sqrt(2.0))
    assert vc.sd_w2w == pytest.approx(math.sqrt(19.0))
    assert vc.sd_l2l == 0.0 and vc.clipped == ("l2l",)


def test_replicates_averaged():
    base = rows([[[1.0, 2.0], [3.0, 5.0]], [[2.0, 2.0], [6.0, 1.0]]])
    doubled = base + [(lot, w, c, v) for lot, w, c, v in base]
    a, b = variance_components(base), variance_components(doubled)
    assert b.replicates_averaged == len(base)
    assert (a.sd_ctc, a.sd_w2w, a.sd_l2l) == pytest.approx((b.sd_ctc, b.sd_w2w, b.sd_l2l))


@pytest.mark.parametrize("sizes", [
    [[3, 3], [3, 3], [3, 3]],
    [[2, 5], [4], [1, 1, 6]],
    [[7, 2, 3], [2, 2]],
    [[1, 2], [3, 4], [5, 6], [2]],
])
def test_ems_coefficients_against_trace_oracle(sizes):
    assert ems_coefficients(sizes) == pytest.approx(ems_oracle(sizes), rel=1e-12)


def test_ems_balanced_closed_form():
    k1, k2, k3 = ems_coefficients([[5] * 4] * 3)
    assert (k1, k2, k3) == pytest.approx((5.0, 5.0, 20.0))


unbalanced = st.lists(st.lists(st.lists(st.floats(min_value=-5, max_value=5), min_size=1, max_size=5),
                               min_size=1, max_size=4), min_size=2, max_size=4)


@settings(max_examples=60, deadline=None)
@given(unbalanced, st.floats(min_value=-100, max_value=100), st.floats(min_value=0.01, max_value=100))
def test_shift_and_scale(data, shift, scale):
    vc = variance_components(rows(data))
    sh = variance_components(rows([[[v + shift for v in c] for c in w] for w in data]))
    sc = variance_components(rows([[[v * scale for v in c] for c in w] for w in data]))
    tol = 1e-9 * (1.0 + max(abs(v) for w in data for c in w for v in c))
    for name in ("sd_ctc", "sd_w2w", "sd_l2l"):
        a, b, c = getattr(vc, name), getattr(sh, name), getattr(sc, name)
        if a is None:
            assert b is None and c is None
            continue
        assert b == pytest.approx(a, abs=1e-6 * (1 + abs(shift)) ** 0.5 + tol)
        assert c == pytest.approx(a * scale, rel=1e-6, abs=1e-9 * scale)
    assert sh.mean == pytest.approx(vc.mean + shift, abs=1e-9 * (1 + abs(shift)))


@settings(max_examples=60)
@given(unbalanced)
def test_rss_identity_and_nonnegative(data):
    vc = variance_components(rows(data))
    parts = [s for s in (vc.sd_ctc, vc.sd_w2w, vc.sd_l2l) if s is not None]
    assert all(s >= 0.0 for s in parts)
    assert vc.sd_total ** 2 == pytest.approx(sum(s * s for s in parts), rel=1e-12, abs=1e-300)


def test_recovery_and_dominance():
    truth = (0.04, 0.08, 0.14)
    est = []
    for seed in range(20):
        cfg = FleetConfig(lots=4, wafers_per_lot=6, chips_per_wafer=24, cycles_per_chip=0,
                          sd_l2l=truth[0], sd_w2w=truth[1], sd_ctc=truth[2], seed=seed)
        vc = variance_components(forming_observations(gen_nested_dataset(cfg)))
        est.append((vc.sd_l2l, vc.sd_w2w, vc.sd_ctc))
    med = np.median(np.array(est), axis=0)
    for m, t in zip(med, truth):
        assert abs(m - t) <= 0.25 * t
    assert med[2] > med[1] > med[0]
