# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping kernel; see ``_kernel_py.py`` for the layout contract."""

from libc.math cimport fabs, isfinite
from libc.stdlib cimport malloc, free

cdef enum:
    RUNNING = 0
    RELAY_EVENT = 1
    DIVERGED = 2

cdef double TIME_EPS = 1e-9


cdef void _rhs(Py_ssize_t ni, Py_ssize_t m,
               const double* d, const double* w, const double* p,
               const double[:] M, const double[:] D, const double[:] Rinv, const double[:] Tg,
               const double[:] pref, const double[:] pmax,
               const double[:, ::1] K, const double[:] c, const double[:] g,
               const long[:] isl_start, const double[:] Msum, double omega_s,
               double* dd, double* dw, double* dp) noexcept nogil:
    cdef Py_ssize_t k, i, j, a, b
    cdef double wc, ref, pe, x
    for k in range(ni):
        a = isl_start[k]
        b = isl_start[k + 1]
        wc = 0.0
        for i in range(a, b):
            wc += M[i] * w[i]
        wc /= Msum[k]
        ref = d[a]
        for i in range(a, b):
            pe = c[i] + g[i] * wc
            for j in range(a, b):
                pe += K[i, j] * (d[j] - ref)
            dd[i] = omega_s * w[i]
            dw[i] = (p[i] - pe - D[i] * w[i]) / M[i]
            x = (pref[i] - p[i] - Rinv[i] * w[i]) / Tg[i]
            if (p[i] >= pmax[i] and x > 0.0) or (p[i] <= 0.0 and x < 0.0):
                x = 0.0
            dp[i] = x


def advance(double[:] delta, double[:] omega, double[:] pm,
            const double[:] M, const double[:] D, const double[:] Rinv, const double[:] Tg,
            const double[:] pref, const double[:] pmax,
            const double[:, ::1] K, const double[:] c, const double[:] g, const long[:] isl_start,
            const double[:, ::1] F, const double[:] f0, const double[:] fg, const double[:] rating,
            const long[:] br_start,
            double[:] acc, double overload_k,
            const double[:] ufls_thr, const double[:] ufls_delay,
            double[:, ::1] ufls_timer, unsigned char[:, ::1] ufls_fired,
            double ofgt_thr, double ofgt_delay, double[:] ofgt_timer,
            double oos_limit,
            double dt, double omega_s, long nsteps, double omega_limit,
            unsigned char[:] br_trip, unsigned char[:, ::1] ufls_fire,
            unsigned char[:] ofgt_trip, unsigned char[:] oos_trip,
            double[:, ::1] tr_load, double[:, ::1] tr_freq,
            double[:, ::1] tr_omega, double[:, ::1] tr_dev, bint trace):
    cdef Py_ssize_t ni = isl_start.shape[0] - 1
    cdef Py_ssize_t m = delta.shape[0]
    cdef Py_ssize_t nb = f0.shape[0]
    cdef Py_ssize_t ns = ufls_thr.shape[0]
    cdef Py_ssize_t i, j, k, q, a, b, s
    cdef double half = 0.5 * dt, sixth = dt / 6.0
    cdef double wc, ref, dcoi, flow, loading, t, freq, dev
    cdef bint event, bad
    cdef long steps_done = nsteps
    cdef int status = RUNNING

    br_trip[:] = 0
    ufls_fire[:, :] = 0
    ofgt_trip[:] = 0
    oos_trip[:] = 0
    if m == 0:
        return nsteps, RUNNING

    import numpy as np
    Msum_arr = np.zeros(ni)
    cdef double[:] Msum = Msum_arr
    wcoi_arr = np.zeros(ni)
    cdef double[:] wcoi = wcoi_arr
    for k in range(ni):
        for i in range(isl_start[k], isl_start[k + 1]):
            Msum[k] += M[i]

    cdef double* buf = <double*> malloc(18 * m * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* d0 = buf
    cdef double* w0 = buf + m
    cdef double* p0 = buf + 2 * m
    cdef double* dt_ = buf + 3 * m
    cdef double* wt = buf + 4 * m
    cdef double* pt = buf + 5 * m
    cdef double* k1d = buf + 6 * m
    cdef double* k1w = buf + 7 * m
    cdef double* k1p = buf + 8 * m
    cdef double* k2d = buf + 9 * m
    cdef double* k2w = buf + 10 * m
    cdef double* k2p = buf + 11 * m
    cdef double* k3d = buf + 12 * m
    cdef double* k3w = buf + 13 * m
    cdef double* k3p = buf + 14 * m
    cdef double* k4d = buf + 15 * m
    cdef double* k4w = buf + 16 * m
    cdef double* k4p = buf + 17 * m

    try:
        with nogil:
            for s in range(nsteps):
                for i in range(m):
                    d0[i] = delta[i]
                    w0[i] = omega[i]
                    p0[i] = pm[i]
                _rhs(ni, m, d0, w0, p0, M, D, Rinv, Tg, pref, pmax, K, c, g, isl_start, Msum,
                     omega_s, k1d, k1w, k1p)
                for i in range(m):
                    dt_[i] = d0[i] + half * k1d[i]
                    wt[i] = w0[i] + half * k1w[i]
                    pt[i] = p0[i] + half * k1p[i]
                _rhs(ni, m, dt_, wt, pt, M, D, Rinv, Tg, pref, pmax, K, c, g, isl_start, Msum,
                     omega_s, k2d, k2w, k2p)
                for i in range(m):
                    dt_[i] = d0[i] + half * k2d[i]
                    wt[i] = w0[i] + half * k2w[i]
                    pt[i] = p0[i] + half * k2p[i]
                _rhs(ni, m, dt_, wt, pt, M, D, Rinv, Tg, pref, pmax, K, c, g, isl_start, Msum,
                     omega_s, k3d, k3w, k3p)
                for i in range(m):
                    dt_[i] = d0[i] + dt * k3d[i]
                    wt[i] = w0[i] + dt * k3w[i]
                    pt[i] = p0[i] + dt * k3p[i]
                _rhs(ni, m, dt_, wt, pt, M, D, Rinv, Tg, pref, pmax, K, c, g, isl_start, Msum,
                     omega_s, k4d, k4w, k4p)
                bad = False
                for i in range(m):
                    delta[i] = d0[i] + sixth * (k1d[i] + 2.0 * k2d[i] + 2.0 * k3d[i] + k4d[i])
                    omega[i] = w0[i] + sixth * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i])
                    t = p0[i] + sixth * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i])
                    if t < 0.0:
                        t = 0.0
                    elif t > pmax[i]:
                        t = pmax[i]
                    pm[i] = t
                    if not (isfinite(delta[i]) and isfinite(omega[i]) and isfinite(t)) \
                            or fabs(omega[i]) > omega_limit:
                        bad = True
                if bad:
                    steps_done = s + 1
                    status = DIVERGED
                    break

                # relay sampling at the step boundary
                event = False
                for k in range(ni):
                    a = isl_start[k]
                    b = isl_start[k + 1]
                    wc = 0.0
                    dcoi = 0.0
                    ref = delta[a]
                    for i in range(a, b):
                        wc += M[i] * omega[i]
                        dcoi += M[i] * (delta[i] - ref)
                    wc /= Msum[k]
                    dcoi /= Msum[k]
                    wcoi[k] = wc
                    for q in range(br_start[k], br_start[k + 1]):
                        flow = f0[q] + fg[q] * wc
                        for j in range(a, b):
                            flow += F[q, j] * (delta[j] - ref)
                        loading = fabs(flow) / rating[q]
                        if loading > 1.0:
                            acc[q] = acc[q] + (loading - 1.0) * dt
                        else:
                            t = acc[q] - (1.0 - loading) * dt
                            acc[q] = t if t > 0.0 else 0.0
                        if acc[q] >= overload_k - TIME_EPS:
                            br_trip[q] = 1
                            event = True
                        if trace:
                            tr_load[s, q] = loading
                    freq = 1.0 + wc
                    for j in range(ns):
                        if ufls_fired[k, j]:
                            continue
                        if freq < ufls_thr[j]:
                            if ufls_timer[k, j] < 0.0:
                                ufls_timer[k, j] = dt
                            else:
                                ufls_timer[k, j] = ufls_timer[k, j] + dt
                            if ufls_timer[k, j] >= ufls_delay[j] - TIME_EPS:
                                ufls_fired[k, j] = 1
                                ufls_fire[k, j] = 1
                                event = True
                        else:
                            ufls_timer[k, j] = -1.0
                    if trace:
                        tr_freq[s, k] = freq
                    for i in range(a, b):
                        if 1.0 + omega[i] > ofgt_thr:
                            if ofgt_timer[i] < 0.0:
                                ofgt_timer[i] = dt
                            else:
                                ofgt_timer[i] = ofgt_timer[i] + dt
                            if ofgt_timer[i] >= ofgt_delay - TIME_EPS:
                                ofgt_trip[i] = 1
                                event = True
                        else:
                            ofgt_timer[i] = -1.0
                        dev = (delta[i] - ref) - dcoi
                        if fabs(dev) > oos_limit:
                            oos_trip[i] = 1
                            event = True
                        if trace:
                            tr_omega[s, i] = omega[i]
                            tr_dev[s, i] = dev
                if event:
                    steps_done = s + 1
                    status = RELAY_EVENT
                    break
    finally:
        free(buf)
    return steps_done, status
