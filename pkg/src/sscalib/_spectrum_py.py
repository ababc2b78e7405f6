"""Pure numpy fallback for the compiled substep loop.

Same signature and in-place semantics as ``_spectrum_core.advance_year``.
Contractions use ``np.einsum`` (no BLAS) so results do not depend on the
BLAS threading configuration.
"""

import numpy as np


def advance_year(n, n_res, kern, w_full, dw_full, n_ext, intake_max, metab,
                 psi, assim, mort_bg, q_c, q_s, egg_idx, end_idx, rep_coeff,
                 r_max, regen, capacity, phi, effort, dt, n_sub, catch_c,
                 catch_s):
    n_sp, n_bins = n.shape
    live = np.zeros((n_sp, n_bins), dtype=bool)
    for i in range(n_sp):
        live[i, egg_idx[i]:end_idx[i]] = True
    last = np.zeros_like(live)
    last[np.arange(n_sp), np.asarray(end_idx) - 1] = True
    first = np.zeros_like(live)
    first[np.arange(n_sp), np.asarray(egg_idx)] = True
    dw = dw_full[n_ext:]
    w = w_full[n_ext:]
    a = dt / dw
    clipped = 0

    for _ in range(n_sub):
        prey = n_res.copy()
        prey[n_ext:] += np.where(live, n, 0.0).sum(axis=0)
        pw = prey * w_full * dw_full

        enc = np.einsum("ikj,j->ik", kern, pw)
        fl = enc / (enc + intake_max)
        e = np.maximum(assim[:, None] * fl * intake_max - metab, 0.0)
        growth = np.where(live & ~last, (1.0 - psi) * e, 0.0)
        repro = np.where(live, psi * e, 0.0)
        rp = rep_coeff * (repro * n * dw).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            recruits = np.where(rp > 0.0, r_max * rp / (r_max + rp), 0.0)
        pred = np.where(live, (1.0 - fl) * n * dw, 0.0)
        mu_p = np.einsum("ikj,ik->j", kern, pred)

        mort = (mu_p[n_ext:][None, :] + mort_bg + phi[:, None] * q_c
                + effort[:, None] * q_s)
        b = 1.0 + growth * a + mort * dt
        # the upwind recurrence runs along bins, vectorised across species
        prev = np.zeros(n_sp)
        for k in range(n_bins):
            col_live = live[:, k]
            if not col_live.any():
                prev = np.zeros(n_sp)
                continue
            inflow = np.where(first[:, k], recruits * a[k],
                              growth[:, k - 1] * a[k] * prev if k else 0.0)
            v = (n[:, k] + inflow) / b[:, k]
            neg = col_live & (v < 0.0)
            clipped += int(neg.sum())
            v = np.where(neg, 0.0, v)
            n[:, k] = np.where(col_live, v, n[:, k])
            prev = n[:, k].copy()

        rate = regen + mu_p
        pos = rate > 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            neq = np.where(pos, regen * capacity / rate, 0.0)
        n_res[:] = np.where(pos, neq + (n_res - neq) * np.exp(-rate * dt), n_res)

        wdw = np.where(live, n, 0.0) * w * dw * dt
        catch_c += phi * (q_c * wdw).sum(axis=1)
        catch_s += effort * (q_s * wdw).sum(axis=1)
    return clipped
