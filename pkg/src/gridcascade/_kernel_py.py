"""Pure numpy implementation of the time-stepping kernel.

Mirrors ``_kernel.pyx`` operation for operation; it is selected when the
compiled extension is unavailable or ``GRIDCASCADE_KERNEL=python`` is set.

Layout contract shared by both kernels: machines are grouped by island
(``isl_start`` holds the offsets), branches likewise (``br_start``). ``K``
and ``F`` are only read inside an island's diagonal block. Angles enter the
products relative to the island's first machine, which is exact because
every row of ``K`` and ``F`` sums to zero within its block.
"""

from __future__ import annotations

import numpy as np

RUNNING, RELAY_EVENT, DIVERGED = 0, 1, 2
TIME_EPS = 1e-9


def advance(delta, omega, pm,
            M, D, Rinv, Tg, pref, pmax,
            K, c, g, isl_start,
            F, f0, fg, rating, br_start,
            acc, overload_k,
            ufls_thr, ufls_delay, ufls_timer, ufls_fired,
            ofgt_thr, ofgt_delay, ofgt_timer,
            oos_limit,
            dt, omega_s, nsteps, omega_limit,
            br_trip, ufls_fire, ofgt_trip, oos_trip,
            tr_load, tr_freq, tr_omega, tr_dev, trace):
    """Integrate up to ``nsteps`` RK4 steps, sampling relays after each.

    Returns ``(steps_done, status)``. State, relay memories and trip flags
    are updated in place.
    """
    ni = len(isl_start) - 1
    m = len(delta)
    nb = len(f0)
    starts = np.asarray(isl_start[:-1])
    mi = np.repeat(np.arange(ni), np.diff(isl_start))
    bi = np.repeat(np.arange(ni), np.diff(br_start))
    Msum = np.add.reduceat(M, starts) if m else np.zeros(0)
    ns = len(ufls_thr)
    br_trip[:] = 0
    ufls_fire[:] = 0
    ofgt_trip[:] = 0
    oos_trip[:] = 0
    if m == 0:
        return nsteps, RUNNING
    half = 0.5 * dt
    pmax_ = np.asarray(pmax)

    def rhs(d, w, p):
        wc = np.add.reduceat(M * w, starts) / Msum
        rel = d - d[starts][mi]
        pe = K @ rel + c + g * wc[mi]
        dp = (pref - p - Rinv * w) / Tg
        dp[(p >= pmax_) & (dp > 0)] = 0.0
        dp[(p <= 0.0) & (dp < 0)] = 0.0
        return omega_s * w, (p - pe - D * w) / M, dp

    for s in range(nsteps):
        d0, w0, p0 = delta.copy(), omega.copy(), pm.copy()
        k1 = rhs(d0, w0, p0)
        k2 = rhs(d0 + half * k1[0], w0 + half * k1[1], p0 + half * k1[2])
        k3 = rhs(d0 + half * k2[0], w0 + half * k2[1], p0 + half * k2[2])
        k4 = rhs(d0 + dt * k3[0], w0 + dt * k3[1], p0 + dt * k3[2])
        sixth = dt / 6.0
        delta[:] = d0 + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        omega[:] = w0 + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        pm[:] = np.clip(p0 + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]), 0.0, pmax_)

        if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(omega))
                and np.all(np.isfinite(pm)) and np.all(np.abs(omega) <= omega_limit)):
            return s + 1, DIVERGED

        # --- relay sampling at the step boundary ---
        wc = np.add.reduceat(M * omega, starts) / Msum
        rel = delta - delta[starts][mi]
        dc = np.add.reduceat(M * rel, starts) / Msum
        event = False
        if nb:
            flow = F @ rel + f0 + fg * wc[bi]
            loading = np.abs(flow) / rating
            acc[:] = np.where(loading > 1.0, acc + (loading - 1.0) * dt,
                              np.maximum(0.0, acc - (1.0 - loading) * dt))
            hit = acc >= overload_k - TIME_EPS
            if hit.any():
                br_trip[hit] = 1
                event = True
            if trace:
                tr_load[s, :] = loading
        freq = 1.0 + wc
        for k in range(ns):
            active = ufls_fired[:, k] == 0
            viol = freq < ufls_thr[k]
            armed = ufls_timer[:, k] >= 0
            newt = np.where(armed, ufls_timer[:, k] + dt, dt)
            ufls_timer[:, k] = np.where(active, np.where(viol, newt, -1.0), ufls_timer[:, k])
            fire = active & viol & (ufls_timer[:, k] >= ufls_delay[k] - TIME_EPS)
            if fire.any():
                ufls_fired[fire, k] = 1
                ufls_fire[fire, k] = 1
                event = True
        viol = 1.0 + omega > ofgt_thr
        ofgt_timer[:] = np.where(viol, np.where(ofgt_timer >= 0, ofgt_timer + dt, dt), -1.0)
        hit = viol & (ofgt_timer >= ofgt_delay - TIME_EPS)
        if hit.any():
            ofgt_trip[hit] = 1
            event = True
        dev = rel - dc[mi]
        hit = np.abs(dev) > oos_limit
        if hit.any():
            oos_trip[hit] = 1
            event = True
        if trace:
            tr_freq[s, :] = freq
            tr_omega[s, :] = omega
            tr_dev[s, :] = dev
        if event:
            return s + 1, RELAY_EVENT
    return nsteps, RUNNING
