# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled substep loop for the size-spectrum model.

Mirrors ``_spectrum_py.advance_year`` operation for operation. Arrays are
validated and laid out by ``sscalib.kernels``; nothing here allocates except
per-call scratch buffers.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def advance_year(
    double[:, ::1] n,
    double[::1] n_res,
    const double[:, :, ::1] kern,
    const double[::1] w_full,
    const double[::1] dw_full,
    Py_ssize_t n_ext,
    const double[:, ::1] intake_max,
    const double[:, ::1] metab,
    const double[:, ::1] psi,
    const double[::1] assim,
    const double[:, ::1] mort_bg,
    const double[:, ::1] q_c,
    const double[:, ::1] q_s,
    const Py_ssize_t[::1] egg_idx,
    const Py_ssize_t[::1] end_idx,
    const double[::1] rep_coeff,
    const double[::1] r_max,
    const double[::1] regen,
    const double[::1] capacity,
    const double[::1] phi,
    const double[::1] effort,
    double dt,
    Py_ssize_t n_sub,
    double[::1] catch_c,
    double[::1] catch_s,
):
    """Advance ``n`` and ``n_res`` in place by ``n_sub`` substeps.

    Returns the number of clipped negative updates.
    """
    cdef Py_ssize_t n_sp = n.shape[0]
    cdef Py_ssize_t n_bins = n.shape[1]
    cdef Py_ssize_t n_full = n_res.shape[0]
    cdef Py_ssize_t i, k, j, s, lo, hi
    cdef double acc, fl, e, a, b, rp, rate, neq, v, wdw
    cdef long clipped = 0

    cdef double[::1] pw = np.empty(n_full)
    cdef double[::1] mu_p = np.empty(n_full)
    cdef double[:, ::1] growth = np.zeros((n_sp, n_bins))
    cdef double[:, ::1] repro = np.zeros((n_sp, n_bins))
    cdef double[::1] recruits = np.empty(n_sp)

    with nogil:
        for s in range(n_sub):
            # prey biomass per bin on the full grid
            for j in range(n_full):
                pw[j] = n_res[j]
            for i in range(n_sp):
                for k in range(egg_idx[i], end_idx[i]):
                    pw[n_ext + k] += n[i, k]
            for j in range(n_full):
                pw[j] = pw[j] * w_full[j] * dw_full[j]
                mu_p[j] = 0.0

            for i in range(n_sp):
                lo = egg_idx[i]
                hi = end_idx[i]
                rp = 0.0
                for k in range(lo, hi):
                    acc = 0.0
                    for j in range(n_full):
                        acc = acc + kern[i, k, j] * pw[j]
                    fl = acc / (acc + intake_max[i, k])
                    e = assim[i] * fl * intake_max[i, k] - metab[i, k]
                    if e < 0.0:
                        e = 0.0
                    if k == hi - 1:
                        growth[i, k] = 0.0
                    else:
                        growth[i, k] = (1.0 - psi[i, k]) * e
                    repro[i, k] = psi[i, k] * e
                    rp = rp + repro[i, k] * n[i, k] * dw_full[n_ext + k]
                    v = (1.0 - fl) * n[i, k] * dw_full[n_ext + k]
                    if v != 0.0:
                        for j in range(n_full):
                            mu_p[j] = mu_p[j] + kern[i, k, j] * v
                rp = rp * rep_coeff[i]
                if rp > 0.0:
                    recruits[i] = r_max[i] * rp / (r_max[i] + rp)
                else:
                    recruits[i] = 0.0

            # semi-implicit upwind transport
            for i in range(n_sp):
                lo = egg_idx[i]
                hi = end_idx[i]
                for k in range(lo, hi):
                    a = dt / dw_full[n_ext + k]
                    b = 1.0 + growth[i, k] * a + (
                        mu_p[n_ext + k] + mort_bg[i, k]
                        + phi[i] * q_c[i, k] + effort[i] * q_s[i, k]
                    ) * dt
                    if k == lo:
                        v = (n[i, k] + recruits[i] * a) / b
                    else:
                        v = (n[i, k] + growth[i, k - 1] * a * n[i, k - 1]) / b
                    if v < 0.0:
                        v = 0.0
                        clipped += 1
                    n[i, k] = v

            # semichemostat resource, exact over the substep
            for j in range(n_full):
                rate = regen[j] + mu_p[j]
                if rate > 0.0:
                    neq = regen[j] * capacity[j] / rate
                    n_res[j] = neq + (n_res[j] - neq) * exp(-rate * dt)

            for i in range(n_sp):
                for k in range(egg_idx[i], end_idx[i]):
                    wdw = n[i, k] * w_full[n_ext + k] * dw_full[n_ext + k] * dt
                    catch_c[i] += phi[i] * q_c[i, k] * wdw
                    catch_s[i] += effort[i] * q_s[i, k] * wdw
    return clipped
