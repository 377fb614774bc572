# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil

cnp.import_array()

cdef double TIME_EPS = 1e-12
cdef double DROP_MASS = 1e-15


def lattice_two_state(double d, double v1, double v2, double p, double q, double delta, int phase):
    cdef double v0 = v1 if phase == 1 else v2
    if v0 * delta >= d:
        return np.array([d / v0]), np.array([1.0])
    cdef Py_ssize_t cap = 64
    cdef cnp.ndarray[double, ndim=1] pf = np.zeros(cap + 2)
    cdef cnp.ndarray[double, ndim=1] pi = np.zeros(cap + 2)
    cdef cnp.ndarray[double, ndim=1] nf = np.zeros(cap + 2)
    cdef cnp.ndarray[double, ndim=1] ni = np.zeros(cap + 2)
    cdef list out_t = [], out_p = []
    cdef Py_ssize_t m = 0, j, lo = 0, hi = 1, nlo, nhi
    cdef double dist, c1, c2, d1, d2, a, b
    if phase == 1:
        pf[0] = 1.0
        lo, hi = 0, 1
    else:
        pi[1] = 1.0
        lo, hi = 1, 2
    while lo < hi:
        if m + 3 > cap:
            cap *= 2
            pf = np.concatenate((pf, np.zeros(cap + 2 - pf.shape[0])))
            pi = np.concatenate((pi, np.zeros(cap + 2 - pi.shape[0])))
            nf = np.zeros(cap + 2)
            ni = np.zeros(cap + 2)
        nlo = m + 3
        nhi = -1
        for j in range(lo, hi + 1):
            nf[j] = 0.0
            ni[j] = 0.0
        for j in range(lo, hi):
            a = pf[j]
            b = pi[j]
            if a <= 0.0 and b <= 0.0:
                continue
            dist = delta * ((m + 1 - j) * v1 + j * v2)
            c1 = a * p + b * (1.0 - q)
            c2 = a * (1.0 - p) + b * q
            d1 = delta * ((m + 2 - j) * v1 + j * v2)
            d2 = delta * ((m + 1 - j) * v1 + (j + 1) * v2)
            if d1 >= d:
                out_t.append((m + 1) * delta + (d - dist) / v1)
                out_p.append(c1)
            else:
                nf[j] = c1
                if j < nlo:
                    nlo = j
                if j + 1 > nhi:
                    nhi = j + 1
            if d2 >= d:
                out_t.append((m + 1) * delta + (d - dist) / v2)
                out_p.append(c2)
            else:
                ni[j + 1] = c2
                if j + 1 < nlo:
                    nlo = j + 1
                if j + 2 > nhi:
                    nhi = j + 2
        for j in range(lo, hi):
            pf[j] = 0.0
            pi[j] = 0.0
        pf, nf = nf, pf
        pi, ni = ni, pi
        if nhi < 0:
            break
        lo, hi = nlo, nhi
        m += 1
    return np.array(out_t, dtype=float), np.array(out_p, dtype=float)


cdef tuple _merge_sorted(double[:] ts, double[:] ps):
    cdef Py_ssize_t n = ts.shape[0], i, k = 0
    cdef cnp.ndarray[double, ndim=1] mt = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] mp = np.empty(n)
    cdef double scale
    if n == 0:
        return mt, mp
    mt[0] = ts[0]
    mp[0] = ps[0]
    for i in range(1, n):
        scale = ts[i] if ts[i] > 1.0 else 1.0
        if ts[i] - mt[k] > TIME_EPS * scale:
            k += 1
            mt[k] = ts[i]
            mp[k] = ps[i]
        else:
            mp[k] += ps[i]
    return mt[: k + 1], mp[: k + 1]


def compose_rebin(const double[:] t, const double[:] p, const double[:, :] w, const double[:] lt, const double[:] lp,
                  const long[:] offsets, int bins, bint upper, double pin_mass):
    cdef Py_ssize_t n = t.shape[0], nl = lt.shape[0], m = offsets.shape[0] - 1
    cdef Py_ssize_t i, j, k, c = 0, total = n * nl
    cdef cnp.ndarray[double, ndim=1] ot = np.empty(total)
    cdef cnp.ndarray[double, ndim=1] op = np.empty(total)
    cdef double wi, pr, mass = 0.0, kept = 0.0
    for i in range(n):
        for j in range(m):
            wi = p[i] * w[i, j]
            if wi <= 0.0:
                continue
            for k in range(offsets[j], offsets[j + 1]):
                pr = wi * lp[k]
                mass += pr
                if pr >= DROP_MASS:
                    ot[c] = t[i] + lt[k]
                    op[c] = pr
                    kept += pr
                    c += 1
    ot = ot[:c]
    op = op[:c]
    if kept > 0.0 and kept != mass:
        op *= mass / kept
    order = np.argsort(ot, kind="stable")
    mt, mp = _merge_sorted(ot[order], op[order])
    if bins <= 0 or mt.shape[0] <= bins:
        return mt, mp
    return rebin_sorted(mt, mp, bins, upper, pin_mass)


def rebin_sorted(const double[:] times, const double[:] probs, int bins, bint upper, double pin_mass):
    cdef Py_ssize_t n = times.shape[0], i, b, npin = 0, nout = 0
    cdef double lo = times[0], hi = times[n - 1]
    cdef double width = (hi - lo) / bins
    if not width > 0:
        return np.asarray(times[:1]).copy(), np.array([np.sum(probs)])
    cdef cnp.ndarray[double, ndim=1] bm = np.zeros(bins)
    cdef cnp.ndarray[double, ndim=1] bt = np.zeros(bins)
    cdef cnp.ndarray[double, ndim=1] rt = np.empty(n + bins)
    cdef cnp.ndarray[double, ndim=1] rp = np.empty(n + bins)
    for i in range(n):
        if pin_mass > 0 and probs[i] >= pin_mass:
            rt[nout] = times[i]
            rp[nout] = probs[i]
            nout += 1
            continue
        b = <Py_ssize_t>ceil((times[i] - lo) / width) - 1
        if b < 0:
            b = 0
        elif b >= bins:
            b = bins - 1
        bm[b] += probs[i]
        bt[b] += probs[i] * times[i]
    for b in range(bins):
        if bm[b] > 0:
            if upper:
                rt[nout] = hi if b == bins - 1 else lo + (b + 1) * width
            else:
                rt[nout] = bt[b] / bm[b]
            rp[nout] = bm[b]
            nout += 1
    order = np.argsort(rt[:nout], kind="stable")
    return _merge_sorted(rt[:nout][order], rp[:nout][order])
