# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a line-for-line twin in ``_pykernels.py``; the two must
stay numerically identical (tests compare them).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def prbs15_bits(int seed, Py_ssize_t n):
    cdef unsigned int state = seed & 0x7FFF
    cdef unsigned int fb
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] o = out
    for i in range(n):
        o[i] = (state >> 14) & 1
        fb = ((state >> 14) ^ (state >> 13)) & 1
        state = ((state << 1) | fb) & 0x7FFF
    return out


def feedback_precode(const double[::1] u, const double[::1] dfe, double clip):
    cdef Py_ssize_t n = u.shape[0], m = dfe.shape[0], i, j
    cdef double acc
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        acc = u[i]
        for j in range(m):
            if i - 1 - j >= 0:
                acc -= dfe[j] * o[i - 1 - j]
        if acc > clip:
            acc = clip
        elif acc < -clip:
            acc = -clip
        o[i] = acc
    return out


cdef inline double _cubic(const double[::1] x, Py_ssize_t base, double mu) nogil:
    cdef double cm1 = -mu * (mu - 1.0) * (mu - 2.0) / 6.0
    cdef double c0 = (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0
    cdef double c1 = -(mu + 1.0) * mu * (mu - 2.0) / 2.0
    cdef double c2 = (mu + 1.0) * mu * (mu - 1.0) / 6.0
    return cm1 * x[base - 1] + c0 * x[base] + c1 * x[base + 1] + c2 * x[base + 2]


def gardner_loop(const double[::1] x, Py_ssize_t start, Py_ssize_t n_sym,
                 double phase0, double kp, double ki, double inv_es):
    """Second-order Gardner loop at 2 samples/symbol.

    Returns (strobes, phases, errors, slips, count).
    """
    cdef Py_ssize_t length = x.shape[0]
    cdef Py_ssize_t m = start, n = 0, base
    cdef double p = phase0, f = 0.0, t, mu, y, mid, y_prev, e
    strobes = np.zeros(n_sym, dtype=np.float64)
    phases = np.zeros(n_sym, dtype=np.float64)
    errors = np.zeros(n_sym, dtype=np.float64)
    slips = np.zeros(n_sym, dtype=np.int64)
    cdef double[::1] so = strobes, po = phases, eo = errors
    cdef long long[::1] ko = slips

    t = 2.0 * (m + p) - 2.0
    base = <Py_ssize_t>floor(t)
    if base - 1 < 0 or base + 2 >= length:
        return strobes[:0], phases[:0], errors[:0], slips[:0], 0
    y_prev = _cubic(x, base, t - base)

    while n < n_sym:
        t = 2.0 * (m + p)
        base = <Py_ssize_t>floor(t)
        if base - 2 < 0 or base + 2 >= length:
            break
        mu = t - base
        y = _cubic(x, base, mu)
        mid = _cubic(x, base - 1, mu)
        e = mid * (y - y_prev) * inv_es
        so[n] = y
        po[n] = p
        eo[n] = e
        ko[n] = m - start - n
        y_prev = y
        f += ki * e
        p -= kp * e + f
        while p < 0.0:
            p += 1.0
            m -= 1
        while p >= 1.0:
            p -= 1.0
            m += 1
        m += 1
        n += 1
    return strobes[:n], phases[:n], errors[:n], slips[:n], n


cdef inline Py_ssize_t _slice(double v, const double[::1] thresholds) nogil:
    cdef Py_ssize_t k = 0, nt = thresholds.shape[0]
    while k < nt and v > thresholds[k]:
        k += 1
    return k


def lms_ffe_dfe(const double[::1] x, double[::1] ffe, Py_ssize_t center,
                double[::1] dfe, const double[::1] ref, Py_ssize_t train_len,
                const double[::1] levels, double mu_ffe, double mu_dfe,
                bint adapt_after_training, Py_ssize_t adapt_from=0):
    """Symbol-spaced FFE/DFE with LMS. ``ffe`` and ``dfe`` are updated in place.

    Taps are held fixed for symbols before ``adapt_from``.

    Returns (soft outputs, decided level indices, squared errors).
    """
    cdef Py_ssize_t n_sym = x.shape[0], nf = ffe.shape[0], nb = dfe.shape[0]
    cdef Py_ssize_t nl = levels.shape[0], i, k, j, idx, li
    cdef double y, d, e
    thr_arr = np.empty(nl - 1, dtype=np.float64)
    cdef double[::1] thr = thr_arr
    for k in range(nl - 1):
        thr[k] = 0.5 * (levels[k] + levels[k + 1])
    soft = np.zeros(n_sym, dtype=np.float64)
    dec = np.zeros(n_sym, dtype=np.int64)
    sqerr = np.zeros(n_sym, dtype=np.float64)
    past_arr = np.zeros(nb, dtype=np.float64)
    cdef double[::1] so = soft, se = sqerr, past = past_arr
    cdef long long[::1] do = dec
    cdef bint adapt

    for i in range(n_sym):
        y = 0.0
        for k in range(nf):
            idx = i - k + center
            if 0 <= idx < n_sym:
                y += ffe[k] * x[idx]
        for j in range(nb):
            y -= dfe[j] * past[j]
        li = _slice(y, thr)
        if i < train_len:
            d = ref[i]
        else:
            d = levels[li]
        e = d - y
        so[i] = y
        do[i] = li
        se[i] = e * e
        adapt = i >= adapt_from and (i < train_len or adapt_after_training)
        if adapt:
            for k in range(nf):
                idx = i - k + center
                if 0 <= idx < n_sym:
                    ffe[k] += mu_ffe * e * x[idx]
            for j in range(nb):
                dfe[j] -= mu_dfe * e * past[j]
        for j in range(nb - 1, 0, -1):
            past[j] = past[j - 1]
        if nb > 0:
            past[0] = d
    return soft, dec, sqerr
