import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iltber import kernels
from iltber.stats_core import (
    DegenerateFitError,
    DomainError,
    InsufficientDataError,
    LogNormalFit,
    chi2_quantile,
    erf,
    erfc,
    ln_erfc,
    mle_fit,
    norm_cdf,
    qnorm,
    qq_diagnostics,
    sigma_ci,
    sigma_ci_factors,
)
from iltber.synth import gen_lognormal_cycles


# --- independent oracles --------------------------------------------------

def erf_taylor(x, dps=60):
    mp.mp.dps = dps
    x = mp.mpf(x)
    term = x
    total = mp.mpf(0)
    n = 0
    while True:
        add = term / (2 * n + 1)
        total += add
        if abs(add) <= mp.mpf(10) ** (-dps + 5) * abs(total) and n > 5:
            break
        n += 1
        term *= -x * x / n
    return total * 2 / mp.sqrt(mp.pi)


def erfc_contfrac(x, dps=60, terms=400):
    mp.mp.dps = dps
    x = mp.mpf(x)
    t = x
    for k in range(terms, 0, -1):
        t = x + mp.mpf(k) / 2 / t
    return mp.exp(-x * x) / (mp.sqrt(mp.pi) * t)


def chi2_cdf_series(x, df, dps=40):
    mp.mp.dps = dps
    a = mp.mpf(df) / 2
    h = mp.mpf(x) / 2
    term = 1 / a
    total = term
    n = 0
    while abs(term) > mp.mpf(10) ** (-dps) * total:
        n += 1
        term *= h / (a + n)
        total += term
    return total * mp.exp(-h + a * mp.log(h) - mp.loggamma(a))


def chi2_quantile_bisect(p, df):
    lo, hi = mp.mpf(0), mp.mpf(10 * df + 100)
    for _ in range(120):
        mid = (lo + hi) / 2
        if chi2_cdf_series(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


# --- erf family -------------------------------------------------------------

def test_erf_examples():
    assert erf(0.0) == 0.0
    assert erf(1.0) == pytest.approx(0.842700792949715, abs=1e-15)
    assert erfc(10.0) == pytest.approx(2.088487583763e-45, rel=1e-12)


@pytest.mark.parametrize("x", [0.01, 0.3, 1.0, 1.7, 2.5, 3.9, 5.0, 6.0])
def test_erf_relative_error(x):
    exact = float(erf_taylor(x))
    assert abs(erf(x) - exact) <= 1e-13 * abs(exact)
    assert erf(-x) == -erf(x)


@pytest.mark.parametrize("x", [0.0, 0.5, 2.0, 5.0, 10.0, 15.0, 20.0, 26.0])
def test_erfc_relative_error(x):
    exact = float(erfc_contfrac(x)) if x >= 3 else float(1 - erf_taylor(x))
    assert abs(erfc(x) - exact) <= 1e-12 * exact


@pytest.mark.parametrize("x", [26.0, 27.0, 30.0, 35.0, 40.0])
def test_ln_erfc_extreme_tail(x):
    exact = float(mp.log(erfc_contfrac(x)))
    assert abs(ln_erfc(x) - exact) <= 1e-10


@given(st.floats(min_value=-6, max_value=6))
def test_erf_plus_erfc_is_one(x):
    assert abs(erf(x) + erfc(x) - 1.0) <= 1e-14 * max(1.0, abs(erfc(x)))
    assert erf(-x) == -erf(x)


# --- qnorm ------------------------------------------------------------------

def test_qnorm_examples():
    assert qnorm(0.5) == 0.0
    assert qnorm(0.975) == pytest.approx(1.959963984540, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_qnorm_domain(p):
    with pytest.raises(DomainError):
        qnorm(p)


@given(st.floats(min_value=1e-15, max_value=0.5, exclude_max=True))
def test_qnorm_symmetry(p):
    # 1 - p is rounded, so compare against the quantile of the representable complement
    q = 1.0 - p
    assert abs(qnorm(1.0 - q) + qnorm(q)) <= 1e-12 * max(1.0, abs(qnorm(q)))


@given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
def test_qnorm_inverts_cdf(p):
    assert abs(norm_cdf(qnorm(p)) - p) <= 1e-12


def test_qnorm_matches_bisection():
    mp.mp.dps = 40
    lo, hi = mp.mpf(0), mp.mpf(5)
    for _ in range(150):
        mid = (lo + hi) / 2
        if mp.erfc(-mid / mp.sqrt(2)) / 2 < mp.mpf("0.975"):
            lo = mid
        else:
            hi = mid
    assert abs(qnorm(0.975) - float(lo)) <= 1e-12


# --- chi-square -------------------------------------------------------------

def test_chi2_closed_form_df2():
    assert chi2_quantile(0.5, 2) == pytest.approx(2 * math.log(2), rel=1e-12)


@pytest.mark.parametrize("p,df,frozen", [(0.975, 19, 32.8523), (0.025, 19, 8.9065)])
def test_chi2_quantile_examples(p, df, frozen):
    got = chi2_quantile(p, df)
    assert got == pytest.approx(frozen, abs=5e-5)
    assert got == pytest.approx(chi2_quantile_bisect(p, df), rel=1e-8)


@pytest.mark.parametrize("p", [1e-6, 0.01, 0.5, 0.9, 0.999999])
@pytest.mark.parametrize("df", [1, 2, 3, 9, 39, 200])
def test_chi2_quantile_grid(p, df):
    assert chi2_quantile(p, df) == pytest.approx(chi2_quantile_bisect(p, df), rel=1e-8)


def test_chi2_domain():
    with pytest.raises(DomainError):
        chi2_quantile(1.0, 3)
    with pytest.raises(DomainError):
        chi2_quantile(0.5, 0)


# --- MLE --------------------------------------------------------------------

def test_mle_two_points():
    fit = mle_fit([math.exp(0.0), math.exp(2.0)])
    assert fit.mu == pytest.approx(1.0, abs=1e-15)
    assert fit.sigma == pytest.approx(1.0, abs=1e-15)
    assert fit.n == 2


def test_mle_errors():
    with pytest.raises(DegenerateFitError):
        mle_fit([5.0, 5.0, 5.0])
    with pytest.raises(InsufficientDataError):
        mle_fit([5.0])
    with pytest.raises(DomainError):
        mle_fit([5.0, -1.0])
    with pytest.raises(DomainError):
        mle_fit([5.0, 0.0])


def test_mle_recovers_generator_parameters():
    draws = gen_lognormal_cycles(LogNormalFit(1.0, 0.25), 100_000, seed=20150517)
    fit = mle_fit(draws)
    assert abs(fit.mu - 1.0) <= 0.005
    assert abs(fit.sigma - 0.25) <= 0.005


@settings(max_examples=50)
@given(st.floats(min_value=1e-6, max_value=1e6), st.integers(min_value=0, max_value=2**32))
def test_mle_scale_equivariance(c, seed):
    vals = gen_lognormal_cycles(LogNormalFit(8.0, 0.5), 50, seed)
    a = mle_fit(vals)
    b = mle_fit(vals * c)
    assert b.mu == pytest.approx(a.mu + math.log(c), abs=1e-12)
    assert b.sigma == pytest.approx(a.sigma, rel=1e-9, abs=1e-12)


# --- sigma CI ----------------------------------------------------------------

def test_sigma_ci_n20():
    ci = sigma_ci(LogNormalFit(0.0, 1.0, 20))
    assert ci.lower == pytest.approx(math.sqrt(20 / 32.8523), abs=1e-4)
    assert ci.upper == pytest.approx(math.sqrt(20 / 8.9065), abs=1e-4)
    assert ci.lower == pytest.approx(0.78025, abs=1e-5)
    assert ci.upper == pytest.approx(1.49851, abs=1e-5)


def test_sigma_ci_collapses_at_zero_level():
    lo, hi = sigma_ci_factors(20, 1e-9)
    # the chi-square median sits slightly below df, so the centre is near sqrt(n/(n-1))
    centre = math.sqrt(20 / chi2_quantile(0.5, 19))
    assert hi - lo < 1e-8
    assert lo == pytest.approx(centre, rel=1e-8)


def test_sigma_ci_width_shrinks_with_n():
    widths = [np.subtract(*reversed(sigma_ci_factors(n))) for n in (20, 40, 80)]
    assert widths[0] > widths[1] > widths[2] > 0


def test_sigma_ci_degenerate():
    with pytest.raises(DegenerateFitError):
        sigma_ci(LogNormalFit(0.0, 0.0, 20))


# --- Q-Q ----------------------------------------------------------------------

def test_qq_exact_case():
    n = 200
    vals = [math.exp(qnorm((i - 0.5) / n)) for i in range(1, n + 1)]
    qq = qq_diagnostics(vals)
    assert abs(qq.r_squared - 1.0) <= 1e-12
    assert qq.slope == pytest.approx(1.0, abs=1e-12)
    assert qq.intercept == pytest.approx(0.0, abs=1e-12)
    xs = [p[0] for p in qq.points]
    assert xs == sorted(xs)


def test_qq_lognormal_sample():
    vals = gen_lognormal_cycles(LogNormalFit(9.0, 0.4), 1000, seed=42)  # lnN(9, 0.16)
    qq = qq_diagnostics(vals)
    assert qq.r_squared > 0.99
    assert abs(qq.slope - 0.4) <= 0.04


def test_qq_bimodal_detected():
    a = gen_lognormal_cycles(LogNormalFit(8.0, 0.1), 500, seed=1)
    b = gen_lognormal_cycles(LogNormalFit(11.0, 0.1), 500, seed=2)
    assert qq_diagnostics(np.concatenate([a, b])).r_squared < 0.95


def test_qq_errors():
    with pytest.raises(InsufficientDataError):
        qq_diagnostics([1.0, 2.0])
    with pytest.raises(DomainError):
        qq_diagnostics([1.0, 2.0, -3.0])


def test_qq_converges_to_mle():
    vals = gen_lognormal_cycles(LogNormalFit(9.0, 0.4), 10_000, seed=7)
    fit = mle_fit(vals)
    qq = qq_diagnostics(vals)
    se_mu = fit.sigma / math.sqrt(fit.n)
    se_sigma = fit.sigma / math.sqrt(2 * fit.n)
    assert abs(qq.intercept - fit.mu) <= 3 * se_mu
    assert abs(qq.slope - fit.sigma) <= 3 * se_sigma


def test_public_quantile_uses_kernel():
    assert kernels.ppnd(0.975) == pytest.approx(qnorm(0.975), abs=1e-15)
