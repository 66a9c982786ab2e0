"""Pure-Python/numpy implementations of the numeric hot kernels.

This module mirrors ``_kernels.pyx`` function for function. It is used when
the compiled extension is unavailable or when ``ILTBER_PURE_PYTHON=1``.

Random stream
-------------
Draws come from SplitMix64 (Steele, Lea & Flood 2014) used in counter mode:
output ``i`` of stream ``seed`` is ``mix64(seed + (i + 1) * GAMMA)`` modulo
2**64, identical to the sequential generator. Uniforms take the top 53 bits
and are centred in their cell, ``((x >> 11) + 0.5) * 2**-53``, so they lie
strictly inside (0, 1). Normal variates are ``ppnd(u)`` (Wichura AS241).
"""

from __future__ import annotations

import math

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_CHUNK = 1 << 20
_SQRT_PI = 1.7724538509055160273  # correctly rounded; math.sqrt(math.pi) is 1 ulp low
_INV_SQRT_2PI = 0.39894228040143267794

# Wichura (1988) AS241 PPND16 coefficients.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _horner(coef, x):
    acc = coef[7]
    for c in coef[6::-1]:
        acc = acc * x + c
    return acc


def mix64(x: int) -> int:
    """SplitMix64 output function on a 64-bit integer."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def mix64_block(seed: int, start: int, n: int) -> np.ndarray:
    """Outputs ``start .. start + n - 1`` of the SplitMix64 stream ``seed``."""
    ctr = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    z = ctr * np.uint64(GAMMA) + np.uint64(seed & MASK64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, start: int, n: int) -> np.ndarray:
    bits = mix64_block(seed, start, n) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (2.0 ** -53)


def ppnd(p: float) -> float:
    """Standard normal quantile, AS241 (about 1e-16 relative)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner(_A, r) / _horner(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        x = _horner(_C, r) / _horner(_D, r)
    else:
        r -= 5.0
        x = _horner(_E, r) / _horner(_F, r)
    return -x if q < 0.0 else x


def _horner_vec(coef, x):
    acc = np.full_like(x, coef[7])
    for c in coef[6::-1]:
        acc = acc * x + c
    return acc


def ppnd_array(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    qc = q[central]
    r = 0.180625 - qc * qc
    out[central] = qc * _horner_vec(_A, r) / _horner_vec(_B, r)

    tail = ~central
    qt = q[tail]
    r = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
    # libm log, not numpy's SIMD log: keeps draws bit-identical to _kernels
    r = np.sqrt(-np.fromiter(map(math.log, r.tolist()), dtype=np.float64, count=r.size))
    near = r <= 5.0
    x = np.empty_like(r)
    rn = r[near] - 1.6
    x[near] = _horner_vec(_C, rn) / _horner_vec(_D, rn)
    rf = r[~near] - 5.0
    x[~near] = _horner_vec(_E, rf) / _horner_vec(_F, rf)
    out[tail] = np.where(qt < 0.0, -x, x)
    return out


def normals(seed: int, start: int, n: int) -> np.ndarray:
    return ppnd_array(uniforms(seed, start, n))


def ln_erfc(x: float) -> float:
    """Natural log of erfc(x) without underflow for large positive x."""
    if x < 10.0:
        return math.log(math.erfc(x))
    # Laplace continued fraction, evaluated bottom-up; 60 terms is far past
    # convergence for x >= 10.
    t = x
    for k in range(60, 0, -1):
        t = x + 0.5 * k / t
    return -x * x - math.log(_SQRT_PI * t)


def tail_counts(seed_h: int, seed_l: int, n: int,
                mu_h: float, sigma_h: float, ln_rh_min: float,
                mu_l: float, sigma_l: float, ln_rl_max: float) -> tuple[int, int]:
    """Count ``ln R_H <= ln_rh_min`` and ``ln R_L >= ln_rl_max`` over n draws each."""
    count_h = 0
    count_l = 0
    for start in range(0, n, _CHUNK):
        m = min(_CHUNK, n - start)
        zh = normals(seed_h, start, m)
        count_h += int(np.count_nonzero(mu_h + sigma_h * zh <= ln_rh_min))
        zl = normals(seed_l, start, m)
        count_l += int(np.count_nonzero(mu_l + sigma_l * zl >= ln_rl_max))
    return count_h, count_l


def _phi(x: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _simpson(a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = _phi(lm)
    frm = _phi(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return (_simpson(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + _simpson(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))


def _segment(a, b, tol):
    fa = _phi(a)
    fb = _phi(b)
    fm = _phi(0.5 * (a + b))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson(a, b, fa, fm, fb, whole, tol, 50)


def normal_tail_quad(z: float, rel_tol: float = 1e-12) -> float:
    """Upper normal tail by adaptive Simpson over doubling-width segments."""
    if z < 0.0:
        return 1.0 - normal_tail_quad(-z, rel_tol)
    # phi(z)/(z+2) is a lower bound on Q(z), so this tolerance is relative.
    tol = rel_tol * _phi(z) / (z + 2.0)
    total = 0.0
    a = z
    width = 0.5
    for i in range(64):
        seg = _segment(a, a + width, tol * 0.5 ** (i + 1))
        total += seg
        a += width
        width *= 2.0
        if seg <= 1e-18 * total or a - z > 40.0:
            break
    return total
