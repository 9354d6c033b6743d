"""Compiled inner loops for density-matrix propagation.

The fixed-step RK4 integrator advances a batch of m x m density matrices,
one per atom class, through a time segment with any number of simultaneous
drives.  The caller may pass states restricted to the dynamically active
level subspace (m <= 6).  Classes are independent, so the batch loop
parallelizes with no cross-class reductions; results are bit-identical for
any thread count.

All frequencies are angular (rad/s) here; callers convert from Hz.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _rhs(r, out, ell, gamma, pop_m, has_pop, drv_i, drv_j, drv_amp, drv_phr,
         drv_phc, idx):
    """Lindblad right-hand side at one half-grid index.

    out <- -i[H, r] + relaxation, with
    H = sum_a ell[a] |a><a| + sum_p g_p (ph_p |j><i| + conj(ph_p) |i><j|).
    """
    m = r.shape[0]
    for a in range(m):
        for b in range(m):
            out[a, b] = (-1j * (ell[a] - ell[b]) - gamma[a, b]) * r[a, b]
    if has_pop:
        for a in range(m):
            acc = 0.0
            for b in range(m):
                acc += pop_m[a, b] * r[b, b].real
            out[a, a] = acc + 0.0j
    else:
        for a in range(m):
            out[a, a] = 0.0 + 0.0j
    for p in range(drv_i.shape[0]):
        g = drv_amp[p, idx]
        if g == 0.0:
            continue
        ph = drv_phr[p, idx]
        phc = drv_phc[p, idx]
        i = drv_i[p]
        j = drv_j[p]
        for c in range(m):
            out[j, c] += -1j * g * ph * r[i, c]
            out[i, c] += -1j * g * phc * r[j, c]
            out[c, i] += 1j * g * ph * r[c, j]
            out[c, j] += 1j * g * phc * r[c, i]


@njit(cache=True, parallel=True)
def rk4_segment(rho, ell, n_steps, dt,
                drv_i, drv_j, drv_amp, drv_ph,
                gamma, pop_m,
                snap_steps, snap_rows, snap_cols, snap_out):
    """Advance rho (K, m, m) in place over n_steps of size dt.

    drv_amp/drv_ph are sampled on the half-step grid (2*n_steps+1 points).
    Snapshots of the listed elements are written to snap_out (K, S, T) when
    the step counter reaches each entry of the ascending snap_steps array.
    """
    K = rho.shape[0]
    m = rho.shape[1]
    S = snap_steps.shape[0]
    T = snap_rows.shape[0]
    drv_phc = np.conj(drv_ph)
    has_pop = np.any(pop_m != 0.0)
    for k in prange(K):
        r = rho[k]
        lk = ell[k]
        k1 = np.empty((m, m), np.complex128)
        k2 = np.empty((m, m), np.complex128)
        k3 = np.empty((m, m), np.complex128)
        k4 = np.empty((m, m), np.complex128)
        tmp = np.empty((m, m), np.complex128)
        sp = 0
        while sp < S and snap_steps[sp] == 0:
            for t in range(T):
                snap_out[k, sp, t] = r[snap_rows[t], snap_cols[t]]
            sp += 1
        for n in range(n_steps):
            _rhs(r, k1, lk, gamma, pop_m, has_pop, drv_i, drv_j, drv_amp,
                 drv_ph, drv_phc, 2 * n)
            for a in range(m):
                for b in range(m):
                    tmp[a, b] = r[a, b] + 0.5 * dt * k1[a, b]
            _rhs(tmp, k2, lk, gamma, pop_m, has_pop, drv_i, drv_j, drv_amp,
                 drv_ph, drv_phc, 2 * n + 1)
            for a in range(m):
                for b in range(m):
                    tmp[a, b] = r[a, b] + 0.5 * dt * k2[a, b]
            _rhs(tmp, k3, lk, gamma, pop_m, has_pop, drv_i, drv_j, drv_amp,
                 drv_ph, drv_phc, 2 * n + 1)
            for a in range(m):
                for b in range(m):
                    tmp[a, b] = r[a, b] + dt * k3[a, b]
            _rhs(tmp, k4, lk, gamma, pop_m, has_pop, drv_i, drv_j, drv_amp,
                 drv_ph, drv_phc, 2 * n + 2)
            for a in range(m):
                for b in range(m):
                    r[a, b] += (dt / 6.0) * (k1[a, b] + 2.0 * k2[a, b]
                                             + 2.0 * k3[a, b] + k4[a, b])
            while sp < S and snap_steps[sp] == n + 1:
                for t in range(T):
                    snap_out[k, sp, t] = r[snap_rows[t], snap_cols[t]]
                sp += 1
