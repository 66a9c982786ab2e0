# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, fabs, log, sqrt
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef double SQRT_PI = 1.7724538509055160273
cdef double INV_SQRT_2PI = 0.39894228040143267794
cdef double TWO_M53 = 1.0 / 9007199254740992.0

cdef double A[8]
cdef double B[8]
cdef double C[8]
cdef double D[8]
cdef double E[8]
cdef double F[8]
A[:] = [3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
        1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
        3.3430575583588128105e4, 2.5090809287301226727e3]
B[:] = [1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
        2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
        5.2264952788528545610e3]
C[:] = [1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
        3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
        2.27238449892691845833e-2, 7.74545014278341407640e-4]
D[:] = [1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
        1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
        1.05075007164441684324e-9]
E[:] = [6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
        2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
        2.71155556874348757815e-5, 2.01033439929228813265e-7]
F[:] = [1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
        7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
        2.04426310338993978564e-15]


cdef inline double horner(double *c, double x) noexcept nogil:
    cdef double acc = c[7]
    cdef int i
    for i in range(6, -1, -1):
        acc = acc * x + c[i]
    return acc


cdef inline uint64_t c_mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double c_uniform(uint64_t seed, uint64_t i) noexcept nogil:
    cdef uint64_t x = c_mix64(seed + (i + 1) * GAMMA)
    return (<double>(x >> 11) + 0.5) * TWO_M53


cdef double c_ppnd(double p) noexcept nogil:
    cdef double q = p - 0.5
    cdef double r, x
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * horner(A, r) / horner(B, r)
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r -= 1.6
        x = horner(C, r) / horner(D, r)
    else:
        r -= 5.0
        x = horner(E, r) / horner(F, r)
    return -x if q < 0.0 else x


def mix64(x):
    return c_mix64(<uint64_t>(x & 0xFFFFFFFFFFFFFFFF))


def mix64_block(seed, Py_ssize_t start, Py_ssize_t n):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = c_mix64(s + (<uint64_t>(start + i) + 1) * GAMMA)
    return out


def uniforms(seed, Py_ssize_t start, Py_ssize_t n):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = c_uniform(s, <uint64_t>(start + i))
    return out


def normals(seed, Py_ssize_t start, Py_ssize_t n):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = c_ppnd(c_uniform(s, <uint64_t>(start + i)))
    return out


def ppnd(double p):
    return c_ppnd(p)


def ppnd_array(p):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] src = np.ascontiguousarray(p, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(src)
    cdef Py_ssize_t i
    with nogil:
        for i in range(src.shape[0]):
            out[i] = c_ppnd(src[i])
    return out.reshape(np.shape(p))


cdef double c_ln_erfc(double x) noexcept nogil:
    cdef double t
    cdef int k
    if x < 10.0:
        return log(erfc(x))
    t = x
    for k in range(60, 0, -1):
        t = x + 0.5 * k / t
    return -x * x - log(SQRT_PI * t)


def ln_erfc(double x):
    return c_ln_erfc(x)


def tail_counts(seed_h, seed_l, Py_ssize_t n,
                double mu_h, double sigma_h, double ln_rh_min,
                double mu_l, double sigma_l, double ln_rl_max):
    cdef uint64_t sh = <uint64_t>(seed_h & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t sl = <uint64_t>(seed_l & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t i
    cdef long long count_h = 0
    cdef long long count_l = 0
    with nogil:
        for i in range(n):
            if mu_h + sigma_h * c_ppnd(c_uniform(sh, <uint64_t>i)) <= ln_rh_min:
                count_h += 1
            if mu_l + sigma_l * c_ppnd(c_uniform(sl, <uint64_t>i)) >= ln_rl_max:
                count_l += 1
    return int(count_h), int(count_l)


cdef inline double phi(double x) noexcept nogil:
    return INV_SQRT_2PI * exp(-0.5 * x * x)


cdef double simpson(double a, double b, double fa, double fm, double fb,
                    double whole, double tol, int depth) noexcept nogil:
    cdef double m = 0.5 * (a + b)
    cdef double lm = 0.5 * (a + m)
    cdef double rm = 0.5 * (m + b)
    cdef double flm = phi(lm)
    cdef double frm = phi(rm)
    cdef double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    cdef double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    cdef double delta = left + right - whole
    if depth <= 0 or fabs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return (simpson(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))


cdef double segment(double a, double b, double tol) noexcept nogil:
    cdef double fa = phi(a)
    cdef double fb = phi(b)
    cdef double fm = phi(0.5 * (a + b))
    cdef double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return simpson(a, b, fa, fm, fb, whole, tol, 50)


def normal_tail_quad(double z, double rel_tol=1e-12):
    if z < 0.0:
        return 1.0 - normal_tail_quad(-z, rel_tol)
    cdef double tol = rel_tol * phi(z) / (z + 2.0)
    cdef double total = 0.0
    cdef double a = z
    cdef double width = 0.5
    cdef double seg
    cdef double scale = 0.5
    cdef int i
    with nogil:
        for i in range(64):
            seg = segment(a, a + width, tol * scale)
            total += seg
            a += width
            width *= 2.0
            scale *= 0.5
            if seg <= 1e-18 * total or a - z > 40.0:
                break
    return total
