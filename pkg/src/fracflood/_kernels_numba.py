"""Compiled twin of the assembly kernels in _kernels_numpy.py.

Same signatures, same arithmetic performed per cell/connection inside
njit loops; fastmath stays off so both backends agree to rounding.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# keep identical to _kernels_numpy._ROCK_BLEND
_ROCK_BLEND = 0.05


@njit(cache=True)
def _interp_d_scalar(xs, ys, x):
    n = len(xs)
    if x <= xs[0]:
        return ys[0], 0.0
    if x >= xs[n - 1]:
        return ys[n - 1], 0.0
    k = 0
    for idx in range(n - 1):
        if x < xs[idx + 1]:
            k = idx
            break
    slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
    return ys[k] + slope * (x - xs[k]), slope


@njit(cache=True)
def _interp_d_rock_scalar(xs, ys, x):
    n = len(xs)
    for k in range(1, n - 1):
        h = min(_ROCK_BLEND, 0.5 * (xs[k] - xs[k - 1]), 0.5 * (xs[k + 1] - xs[k]))
        if h <= 0.0:
            continue
        if x <= xs[k] - h or x >= xs[k] + h:
            continue
        s0 = (ys[k] - ys[k - 1]) / (xs[k] - xs[k - 1])
        s1 = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
        if s0 == s1:
            break
        t = x - (xs[k] - h)
        val = ys[k] + s0 * (x - xs[k]) + (s1 - s0) * t * t / (4.0 * h)
        return val, s0 + (s1 - s0) * t / (2.0 * h)
    return _interp_d_scalar(xs, ys, x)


@njit(cache=True)
def _psi_eff_scalar(xs, ys, p, p_peak, eta):
    val, dval = _interp_d_rock_scalar(xs, ys, p)
    if eta == 0.0:
        return val, dval
    peak, _ = _interp_d_rock_scalar(xs, ys, p_peak)
    gain = peak - val
    if gain > 0.0:
        return val + eta * gain, (1.0 - eta) * dval
    return val, dval


@njit(cache=True)
def cell_tables(
    p, sw, p_peak, n_matrix,
    mp, mpv, mtx, mty, mtz,
    fp, fpv, ftx, fty, ftz,
    fvp, fvb,
    rsw, rkrw, rkro, rpc,
    eta,
):
    n = len(p)
    pv = np.empty(n)
    dpv = np.empty(n)
    psix = np.empty(n)
    dpsix = np.empty(n)
    psiy = np.empty(n)
    dpsiy = np.empty(n)
    psiz = np.empty(n)
    dpsiz = np.empty(n)
    bo = np.empty(n)
    dbo = np.empty(n)
    krw = np.empty(n)
    dkrw = np.empty(n)
    kro = np.empty(n)
    dkro = np.empty(n)
    pc = np.empty(n)
    dpc = np.empty(n)
    for c in range(n):
        if c < n_matrix:
            tp, tpv, ttx, tty, ttz = mp, mpv, mtx, mty, mtz
        else:
            tp, tpv, ttx, tty, ttz = fp, fpv, ftx, fty, ftz
        pv[c], dpv[c] = _interp_d_rock_scalar(tp, tpv, p[c])
        psix[c], dpsix[c] = _psi_eff_scalar(tp, ttx, p[c], p_peak[c], eta)
        psiy[c], dpsiy[c] = _psi_eff_scalar(tp, tty, p[c], p_peak[c], eta)
        psiz[c], dpsiz[c] = _psi_eff_scalar(tp, ttz, p[c], p_peak[c], eta)
        bo[c], dbo[c] = _interp_d_scalar(fvp, fvb, p[c])
        krw[c], dkrw[c] = _interp_d_scalar(rsw, rkrw, sw[c])
        kro[c], dkro[c] = _interp_d_scalar(rsw, rkro, sw[c])
        pc[c], dpc[c] = _interp_d_scalar(rsw, rpc, sw[c])
    return (
        pv, dpv, psix, dpsix, psiy, dpsiy, psiz, dpsiz,
        bo, dbo, krw, dkrw, kro, dkro, pc, dpc,
    )


@njit(cache=True)
def conn_assemble(
    ia, ja, dircode, gi, gj, ddepth,
    p, sw,
    psix, dpsix, psiy, dpsiy, psiz, dpsiz,
    pc, dpc, krw, dkrw, kro, dkro,
    bw, dbw, bo, dbo,
    rhw, drhw, rho, drho,
    mu_w, mu_o, c_unit, g_mpa, dt,
):
    nconn = len(ia)
    ncell = len(p)
    third = 1.0 / 3.0
    resw = np.zeros(ncell)
    reso = np.zeros(ncell)
    vals = np.empty(16 * nconn)

    for f in range(nconn):
        i = ia[f]
        j = ja[f]
        d = dircode[f]
        if d == 3:
            prod = psix[i] * psiy[i] * psiz[i]
            tg = prod ** third
            dtg = (tg * third) * (
                dpsix[i] / psix[i] + dpsiy[i] / psiy[i] + dpsiz[i] / psiz[i]
            )
            tv = c_unit * gi[f] * tg
            dti = c_unit * gi[f] * dtg
            dtj = 0.0
        else:
            if d == 0:
                pi = psix[i]
                pj = psix[j]
                dpi = dpsix[i]
                dpj = dpsix[j]
            elif d == 1:
                pi = psiy[i]
                pj = psiy[j]
                dpi = dpsiy[i]
                dpj = dpsiy[j]
            else:
                pi = psiz[i]
                pj = psiz[j]
                dpi = dpsiz[i]
                dpj = dpsiz[j]
            hi = 1.0 / (gi[f] * pi)
            hj = 1.0 / (gj[f] * pj)
            tv = c_unit / (hi + hj)
            dti = (tv * tv / c_unit) * dpi / (gi[f] * pi * pi)
            dtj = (tv * tv / c_unit) * dpj / (gj[f] * pj * pj)

        dd = ddepth[f]
        head_w = 0.5 * (rhw[i] + rhw[j]) * g_mpa * dd
        head_o = 0.5 * (rho[i] + rho[j]) * g_mpa * dd
        dphi_w = (p[i] - pc[i]) - (p[j] - pc[j]) - head_w
        dphi_o = p[i] - p[j] - head_o

        if dphi_w >= 0.0:
            uw = i
            wi_up = True
        else:
            uw = j
            wi_up = False
        if dphi_o >= 0.0:
            uo = i
            oi_up = True
        else:
            uo = j
            oi_up = False

        mob_w = krw[uw] / (mu_w * bw[uw])
        dmobw_dp = -krw[uw] * dbw[uw] / (mu_w * bw[uw] ** 2)
        dmobw_ds = dkrw[uw] / (mu_w * bw[uw])
        mob_o = kro[uo] / (mu_o * bo[uo])
        dmobo_dp = -kro[uo] * dbo[uo] / (mu_o * bo[uo] ** 2)
        dmobo_ds = dkro[uo] / (mu_o * bo[uo])

        fw = tv * mob_w * dphi_w
        fo = tv * mob_o * dphi_o

        ddphiw_dpi = 1.0 - 0.5 * drhw[i] * g_mpa * dd
        ddphiw_dpj = -1.0 - 0.5 * drhw[j] * g_mpa * dd
        ddphio_dpi = 1.0 - 0.5 * drho[i] * g_mpa * dd
        ddphio_dpj = -1.0 - 0.5 * drho[j] * g_mpa * dd

        dfw_dpi = dti * mob_w * dphi_w + tv * mob_w * ddphiw_dpi
        dfw_dpj = dtj * mob_w * dphi_w + tv * mob_w * ddphiw_dpj
        if wi_up:
            dfw_dpi += tv * dmobw_dp * dphi_w
        else:
            dfw_dpj += tv * dmobw_dp * dphi_w
        dfw_dsi = tv * mob_w * (-dpc[i])
        dfw_dsj = tv * mob_w * (dpc[j])
        if wi_up:
            dfw_dsi += tv * dmobw_ds * dphi_w
        else:
            dfw_dsj += tv * dmobw_ds * dphi_w

        dfo_dpi = dti * mob_o * dphi_o + tv * mob_o * ddphio_dpi
        dfo_dpj = dtj * mob_o * dphi_o + tv * mob_o * ddphio_dpj
        if oi_up:
            dfo_dpi += tv * dmobo_dp * dphi_o
        else:
            dfo_dpj += tv * dmobo_dp * dphi_o
        if oi_up:
            dfo_dsi = tv * dmobo_ds * dphi_o
            dfo_dsj = 0.0
        else:
            dfo_dsi = 0.0
            dfo_dsj = tv * dmobo_ds * dphi_o

        resw[i] += dt * fw
        resw[j] -= dt * fw
        reso[i] += dt * fo
        reso[j] -= dt * fo

        b = 16 * f
        vals[b + 0] = dt * dfw_dpi
        vals[b + 1] = dt * dfw_dsi
        vals[b + 2] = dt * dfw_dpj
        vals[b + 3] = dt * dfw_dsj
        vals[b + 4] = dt * -dfw_dpi
        vals[b + 5] = dt * -dfw_dsi
        vals[b + 6] = dt * -dfw_dpj
        vals[b + 7] = dt * -dfw_dsj
        vals[b + 8] = dt * dfo_dpi
        vals[b + 9] = dt * dfo_dsi
        vals[b + 10] = dt * dfo_dpj
        vals[b + 11] = dt * dfo_dsj
        vals[b + 12] = dt * -dfo_dpi
        vals[b + 13] = dt * -dfo_dsi
        vals[b + 14] = dt * -dfo_dpj
        vals[b + 15] = dt * -dfo_dsj
    return resw, reso, vals
