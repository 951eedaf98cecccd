"""Vectorized reference implementation of the assembly kernels.

Both kernel backends share one contract: cell_tables evaluates every
pressure/saturation dependent property (with derivatives) for all 2N
flow cells, conn_assemble turns those into per-connection phase fluxes,
their residual scatter and the 16 Jacobian entries per connection. The
twin in _kernels_numba.py performs the same arithmetic cell by cell;
results agree to rounding.
"""

from __future__ import annotations

import numpy as np

# Half-width (MPa) of the parabolic slope blend at interior nodes of the
# pressure tables. The multiplier tables may change slope by orders of
# magnitude at the middle node; with a C0 slope the flow equations are
# only piecewise differentiable there and Newton chatters on cells that
# stall at the node, so the solver sees a C1 evaluation instead. The
# blend is monotone and stays within (slope jump) * blend / 4 of the
# table; outside the window the lookup is exact.
_ROCK_BLEND = 0.05


def _interp_d(xs, ys, x):
    """Piecewise-linear interpolation with slope, clamped outside."""
    idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
    x0 = xs[idx]
    slope = (ys[idx + 1] - ys[idx]) / (xs[idx + 1] - xs[idx])
    val = ys[idx] + slope * (x - x0)
    below = x <= xs[0]
    above = x >= xs[-1]
    val = np.where(below, ys[0], np.where(above, ys[-1], val))
    dval = np.where(below | above, 0.0, slope)
    return val, dval


def _interp_d_rock(xs, ys, x):
    """Pressure-table interpolation, slope-continuous at interior nodes."""
    val, dval = _interp_d(xs, ys, x)
    for k in range(1, len(xs) - 1):
        h = min(_ROCK_BLEND, 0.5 * (xs[k] - xs[k - 1]), 0.5 * (xs[k + 1] - xs[k]))
        if h <= 0.0:
            continue
        s0 = (ys[k] - ys[k - 1]) / (xs[k] - xs[k - 1])
        s1 = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
        if s0 == s1:
            continue
        msk = np.abs(x - xs[k]) < h
        if not np.any(msk):
            continue
        t = x[msk] - (xs[k] - h)
        val[msk] = ys[k] + s0 * (x[msk] - xs[k]) + (s1 - s0) * t * t / (4.0 * h)
        dval[msk] = s0 + (s1 - s0) * t / (2.0 * h)
    return val, dval


def _psi_eff(xs, ys, p, p_peak, eta):
    """Hysteretic multiplier: retain eta of the peak-attained value."""
    val, dval = _interp_d_rock(xs, ys, p)
    if eta == 0.0:
        return val, dval
    peak, _ = _interp_d_rock(xs, ys, p_peak)
    gain = peak - val
    keep = gain > 0.0
    eff = np.where(keep, val + eta * gain, val)
    deff = np.where(keep, (1.0 - eta) * dval, dval)
    return eff, deff


def cell_tables(
    p, sw, p_peak, n_matrix,
    mp, mpv, mtx, mty, mtz,
    fp, fpv, ftx, fty, ftz,
    fvp, fvb,
    rsw, rkrw, rkro, rpc,
    eta,
):
    """Rock multipliers, oil FVF, relperm and capillary pressure with
    pressure/saturation derivatives for all flow cells.

    Cells [0, n_matrix) read the matrix table, the rest the fracture
    table. Returns 16 arrays: pv, psix, psiy, psiz, bo, krw, kro, pc,
    each followed by its derivative.
    """
    n = len(p)
    out = {}
    for name in ("pv", "psix", "psiy", "psiz"):
        out[name] = np.empty(n)
        out["d" + name] = np.empty(n)
    m = slice(0, n_matrix)
    f = slice(n_matrix, n)
    for sl, tp, cols in ((m, mp, (mpv, mtx, mty, mtz)), (f, fp, (fpv, ftx, fty, ftz))):
        out["pv"][sl], out["dpv"][sl] = _interp_d_rock(tp, cols[0], p[sl])
        for name, ys in zip(("psix", "psiy", "psiz"), cols[1:]):
            out[name][sl], out["d" + name][sl] = _psi_eff(tp, ys, p[sl], p_peak[sl], eta)
    bo, dbo = _interp_d(fvp, fvb, p)
    krw, dkrw = _interp_d(rsw, rkrw, sw)
    kro, dkro = _interp_d(rsw, rkro, sw)
    pc, dpc = _interp_d(rsw, rpc, sw)
    return (
        out["pv"], out["dpv"],
        out["psix"], out["dpsix"],
        out["psiy"], out["dpsiy"],
        out["psiz"], out["dpsiz"],
        bo, dbo, krw, dkrw, kro, dkro, pc, dpc,
    )


def conn_assemble(
    ia, ja, dircode, gi, gj, ddepth,
    p, sw,
    psix, dpsix, psiy, dpsiy, psiz, dpsiz,
    pc, dpc, krw, dkrw, kro, dkro,
    bw, dbw, bo, dbo,
    rhw, drhw, rho, drho,
    mu_w, mu_o, c_unit, g_mpa, dt,
):
    """Two-phase upstream-weighted connection fluxes.

    Returns (resw, reso, vals): residual flux contributions per cell
    (volume over the step, positive = net outflow added to cell i) and
    the 16 Jacobian entries per connection, laid out connection-major:
    water row i (d/dp_i, d/dsw_i, d/dp_j, d/dsw_j), water row j, oil
    row i, oil row j.
    """
    nconn = len(ia)
    ncell = len(p)
    third = 1.0 / 3.0

    # transmissibility and its pressure derivatives per connection
    t_val = np.empty(nconn)
    dt_i = np.zeros(nconn)
    dt_j = np.zeros(nconn)
    psi_stack = (psix, psiy, psiz)
    dpsi_stack = (dpsix, dpsiy, dpsiz)
    for d in range(3):
        msk = dircode == d
        if not np.any(msk):
            continue
        im = ia[msk]
        jm = ja[msk]
        pi = psi_stack[d][im]
        pj = psi_stack[d][jm]
        hi = 1.0 / (gi[msk] * pi)
        hj = 1.0 / (gj[msk] * pj)
        tv = c_unit / (hi + hj)
        t_val[msk] = tv
        dt_i[msk] = (tv * tv / c_unit) * dpsi_stack[d][im] / (gi[msk] * pi * pi)
        dt_j[msk] = (tv * tv / c_unit) * dpsi_stack[d][jm] / (gj[msk] * pj * pj)
    msk = dircode == 3
    if np.any(msk):
        im = ia[msk]
        prod = psix[im] * psiy[im] * psiz[im]
        tg = prod ** third
        dtg = (tg * third) * (
            dpsix[im] / psix[im] + dpsiy[im] / psiy[im] + dpsiz[im] / psiz[im]
        )
        t_val[msk] = c_unit * gi[msk] * tg
        dt_i[msk] = c_unit * gi[msk] * dtg
        dt_j[msk] = 0.0

    i = ia
    j = ja
    head_w = 0.5 * (rhw[i] + rhw[j]) * g_mpa * ddepth
    head_o = 0.5 * (rho[i] + rho[j]) * g_mpa * ddepth
    dphi_w = (p[i] - pc[i]) - (p[j] - pc[j]) - head_w
    dphi_o = p[i] - p[j] - head_o

    up_w = np.where(dphi_w >= 0.0, i, j)
    up_o = np.where(dphi_o >= 0.0, i, j)
    wi_up = dphi_w >= 0.0
    oi_up = dphi_o >= 0.0

    mob_w = krw[up_w] / (mu_w * bw[up_w])
    dmobw_dp = -krw[up_w] * dbw[up_w] / (mu_w * bw[up_w] ** 2)
    dmobw_ds = dkrw[up_w] / (mu_w * bw[up_w])
    mob_o = kro[up_o] / (mu_o * bo[up_o])
    dmobo_dp = -kro[up_o] * dbo[up_o] / (mu_o * bo[up_o] ** 2)
    dmobo_ds = dkro[up_o] / (mu_o * bo[up_o])

    fw = t_val * mob_w * dphi_w
    fo = t_val * mob_o * dphi_o

    ddphiw_dpi = 1.0 - 0.5 * drhw[i] * g_mpa * ddepth
    ddphiw_dpj = -1.0 - 0.5 * drhw[j] * g_mpa * ddepth
    ddphio_dpi = 1.0 - 0.5 * drho[i] * g_mpa * ddepth
    ddphio_dpj = -1.0 - 0.5 * drho[j] * g_mpa * ddepth

    dfw_dpi = dt_i * mob_w * dphi_w + t_val * mob_w * ddphiw_dpi \
        + np.where(wi_up, t_val * dmobw_dp * dphi_w, 0.0)
    dfw_dpj = dt_j * mob_w * dphi_w + t_val * mob_w * ddphiw_dpj \
        + np.where(~wi_up, t_val * dmobw_dp * dphi_w, 0.0)
    dfw_dsi = t_val * mob_w * (-dpc[i]) + np.where(wi_up, t_val * dmobw_ds * dphi_w, 0.0)
    dfw_dsj = t_val * mob_w * (dpc[j]) + np.where(~wi_up, t_val * dmobw_ds * dphi_w, 0.0)

    dfo_dpi = dt_i * mob_o * dphi_o + t_val * mob_o * ddphio_dpi \
        + np.where(oi_up, t_val * dmobo_dp * dphi_o, 0.0)
    dfo_dpj = dt_j * mob_o * dphi_o + t_val * mob_o * ddphio_dpj \
        + np.where(~oi_up, t_val * dmobo_dp * dphi_o, 0.0)
    dfo_dsi = np.where(oi_up, t_val * dmobo_ds * dphi_o, 0.0)
    dfo_dsj = np.where(~oi_up, t_val * dmobo_ds * dphi_o, 0.0)

    resw = np.zeros(ncell)
    reso = np.zeros(ncell)
    np.add.at(resw, i, dt * fw)
    np.add.at(resw, j, -dt * fw)
    np.add.at(reso, i, dt * fo)
    np.add.at(reso, j, -dt * fo)

    vals = np.empty((nconn, 16))
    vals[:, 0] = dfw_dpi
    vals[:, 1] = dfw_dsi
    vals[:, 2] = dfw_dpj
    vals[:, 3] = dfw_dsj
    vals[:, 4] = -dfw_dpi
    vals[:, 5] = -dfw_dsi
    vals[:, 6] = -dfw_dpj
    vals[:, 7] = -dfw_dsj
    vals[:, 8] = dfo_dpi
    vals[:, 9] = dfo_dsi
    vals[:, 10] = dfo_dpj
    vals[:, 11] = dfo_dsj
    vals[:, 12] = -dfo_dpi
    vals[:, 13] = -dfo_dsi
    vals[:, 14] = -dfo_dpj
    vals[:, 15] = -dfo_dsj
    return resw, reso, dt * vals.ravel()
