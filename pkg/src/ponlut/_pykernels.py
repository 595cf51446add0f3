"""Pure-Python implementations of the inner loops in ``_ckernels.pyx``.

Used when the extension is not built or when ``PONLUT_PURE_PYTHON=1``.
"""
from __future__ import annotations

import math

import numpy as np


def prbs15_bits(seed: int, n: int) -> np.ndarray:
    # o[i] = o[i-14] ^ o[i-15] holds for the MSB stream of x^15 + x^14 + 1,
    # so blocks of 14 outputs can be produced at once after the first 15.
    state = seed & 0x7FFF
    out = np.empty(n, dtype=np.uint8)
    head = min(n, 15)
    for i in range(head):
        out[i] = (state >> 14) & 1
        fb = ((state >> 14) ^ (state >> 13)) & 1
        state = ((state << 1) | fb) & 0x7FFF
    i = head
    while i < n:
        k = min(14, n - i)
        out[i:i + k] = out[i - 14:i - 14 + k] ^ out[i - 15:i - 15 + k]
        i += k
    return out


def feedback_precode(u: np.ndarray, dfe: np.ndarray, clip: float) -> np.ndarray:
    n, m = len(u), len(dfe)
    out = np.zeros(n)
    taps = [float(c) for c in dfe]
    hist = [0.0] * m
    for i in range(n):
        acc = float(u[i])
        for j in range(m):
            acc -= taps[j] * hist[j]
        if acc > clip:
            acc = clip
        elif acc < -clip:
            acc = -clip
        out[i] = acc
        if m:
            hist = [acc] + hist[:-1]
    return out


def _cubic(x, base: int, mu: float) -> float:
    cm1 = -mu * (mu - 1.0) * (mu - 2.0) / 6.0
    c0 = (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0
    c1 = -(mu + 1.0) * mu * (mu - 2.0) / 2.0
    c2 = (mu + 1.0) * mu * (mu - 1.0) / 6.0
    return cm1 * x[base - 1] + c0 * x[base] + c1 * x[base + 1] + c2 * x[base + 2]


def gardner_loop(x: np.ndarray, start: int, n_sym: int, phase0: float,
                 kp: float, ki: float, inv_es: float):
    xs = x.tolist()
    length = len(xs)
    strobes = np.zeros(n_sym)
    phases = np.zeros(n_sym)
    errors = np.zeros(n_sym)
    slips = np.zeros(n_sym, dtype=np.int64)
    m, n, p, f = start, 0, phase0, 0.0

    t = 2.0 * (m + p) - 2.0
    base = math.floor(t)
    if base - 1 < 0 or base + 2 >= length:
        return strobes[:0], phases[:0], errors[:0], slips[:0], 0
    y_prev = _cubic(xs, base, t - base)

    while n < n_sym:
        t = 2.0 * (m + p)
        base = math.floor(t)
        if base - 2 < 0 or base + 2 >= length:
            break
        mu = t - base
        y = _cubic(xs, base, mu)
        mid = _cubic(xs, base - 1, mu)
        e = mid * (y - y_prev) * inv_es
        strobes[n] = y
        phases[n] = p
        errors[n] = e
        slips[n] = m - start - n
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


def lms_ffe_dfe(x, ffe, center, dfe, ref, train_len, levels, mu_ffe, mu_dfe,
                adapt_after_training, adapt_from=0):
    n_sym, nf, nb = len(x), len(ffe), len(dfe)
    lv = [float(v) for v in levels]
    thr = [0.5 * (lv[k] + lv[k + 1]) for k in range(len(lv) - 1)]
    soft = np.zeros(n_sym)
    dec = np.zeros(n_sym, dtype=np.int64)
    sqerr = np.zeros(n_sym)
    # zero-padded copy so the FFE window never needs a bounds test
    xp = np.concatenate([np.zeros(nf), np.asarray(x, dtype=float), np.zeros(nf)])
    past = np.zeros(nb)
    rev = np.arange(nf)
    for i in range(n_sym):
        window = xp[nf + i + center - rev]
        y = float(ffe @ window) - float(dfe @ past)
        li = 0
        while li < len(thr) and y > thr[li]:
            li += 1
        d = float(ref[i]) if i < train_len else lv[li]
        e = d - y
        soft[i] = y
        dec[i] = li
        sqerr[i] = e * e
        if i >= adapt_from and (i < train_len or adapt_after_training):
            ffe += mu_ffe * e * window
            dfe -= mu_dfe * e * past
        if nb:
            past[1:] = past[:-1]
            past[0] = d
    return soft, dec, sqerr
