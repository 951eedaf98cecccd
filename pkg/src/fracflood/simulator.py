"""Fully implicit two-phase (water/oil) dual-continuum simulator.

Unknown layout: cells first, two unknowns per flow cell (pressure at
2c, water saturation at 2c+1, matrix cells before fracture cells), then
one bottom-hole pressure per active well. Equations align with the
unknowns: water volume balance at 2c, oil at 2c+1, one control equation
per well. Newton updates come from a sparse direct solve; convergence
is measured on the pore-volume-normalized residual.

Well controls can switch within a timestep: a rate-controlled well that
violates its BHP limit is pinned at the limit, and returns to rate
control once the delivered rate again exceeds the target.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from . import kernels
from .model import C_UNIT, GRAVITY, SimState, init_state, peaceman_wi
from .tables import _interp_clamped

G_MPA = GRAVITY * 1e-6  # rho [kg/m3] * G_MPA * depth [m] = head in MPa
_RATE_EPS = 1e-7  # relative guard against control-switch ping-pong
_TIME_EPS = 1e-9


class SolverFailure(Exception):
    """Nonlinear solver gave up; carries the partial result."""

    def __init__(self, message, result=None, time_days=0.0):
        super().__init__(message)
        self.result = result
        self.time_days = time_days


def kazemi_sigma(dx: float, dy: float, dz: float) -> float:
    """Matrix-fracture shape factor, 1/m2."""
    return 4.0 * (1.0 / dx**2 + 1.0 / dy**2 + 1.0 / dz**2)


def face_transmissibility(k_i, half_len_i, area_i, mult_i,
                          k_j, half_len_j, area_j, mult_j) -> float:
    """Two-point flux coefficient between neighbouring half-cells,
    m3/d per MPa per unit mobility; each half carries its own
    pressure-dependent multiplier."""
    hi = half_len_i / (k_i * mult_i * area_i)
    hj = half_len_j / (k_j * mult_j * area_j)
    return C_UNIT / (hi + hj)


def transfer_coefficient(dx, dy, dz, k_matrix, volume, mult=1.0) -> float:
    """Matrix-fracture exchange coefficient for one cell pair."""
    return C_UNIT * kazemi_sigma(dx, dy, dz) * k_matrix * mult * volume


class TimeSeries:
    """Report rows keyed by a fixed column list (time first)."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows = []

    def add_row(self, values):
        if len(values) != len(self.columns):
            raise ValueError("row length does not match columns")
        self.rows.append([float(v) for v in values])

    def times(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([r[idx] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join("%.10g" % v for v in row) + "\n")
        return buf.getvalue()


@dataclass
class SimResult:
    series: TimeSeries
    summary: dict
    state: SimState


class _ActiveWell:
    """Per-stage well bookkeeping: control state and the BHP unknown."""

    def __init__(self, spec, ctl, cells, wi0, unknown):
        self.spec = spec
        self.ctl = ctl
        self.cells = cells
        self.wi0 = wi0
        self.unknown = unknown
        self.mode = "bhp" if ctl.mode == "bhp" else ctl.mode
        self.pinned = False

    def initial_pwf(self, p_cells) -> float:
        mean_p = float(np.mean(p_cells))
        if self.ctl.mode == "bhp":
            return self.ctl.target
        if self.spec.kind == "injector":
            guess = mean_p + 1.0
            if self.ctl.bhp_limit is not None:
                guess = min(guess, self.ctl.bhp_limit)
        else:
            guess = mean_p - 1.0
            if self.ctl.bhp_limit is not None:
                guess = max(guess, self.ctl.bhp_limit)
        return guess


class _NotConverged(Exception):
    """Newton gave up; carries the best iterate for warm restarts."""

    def __init__(self, p=None, sw=None):
        super().__init__()
        self.p = p
        self.sw = sw


class _CscPlan:
    """Scatter map from the fixed assembly triplet pattern to CSC data.

    The sparsity pattern only depends on the active well set (well rows
    use the superset of all control modes), so the lexsort and duplicate
    grouping happen once per stage instead of on every Newton iteration.
    """

    __slots__ = ("key", "msize", "total", "tri_map", "indices", "indptr",
                 "nnz", "well_slices")

    def __init__(self, key, msize, rows, cols, well_slices):
        self.key = key
        self.msize = msize
        self.total = len(rows)
        self.well_slices = well_slices
        order = np.lexsort((rows, cols))
        sr = rows[order]
        sc = cols[order]
        first = np.ones(len(sr), dtype=bool)
        first[1:] = (sr[1:] != sr[:-1]) | (sc[1:] != sc[:-1])
        gid = np.cumsum(first) - 1
        tri_map = np.empty(len(sr), dtype=np.int64)
        tri_map[order] = gid
        self.tri_map = tri_map
        self.indices = sr[first].astype(np.int32)
        self.indptr = np.searchsorted(sc[first], np.arange(msize + 1)).astype(
            np.int32
        )
        self.nnz = int(gid[-1]) + 1


class SimModel:
    """Static problem data (connections, tables, wells) for one deck."""

    def __init__(self, deck):
        self.deck = deck
        grid = deck.grid
        self.grid = grid
        n = grid.n_geometric
        self.n = n
        self.ncell = 2 * n
        self.numerics = deck.numerics

        pair, fvf = deck.resolved_rock()
        self.rock = pair
        self.fvf = fvf
        self.fluid = deck.resolved_fluid()
        rp = deck.relperm

        self.tab_args = (
            pair.matrix.pressure, pair.matrix.pv_mult, pair.matrix.tx_mult,
            pair.matrix.ty_mult, pair.matrix.tz_mult,
            pair.fracture.pressure, pair.fracture.pv_mult, pair.fracture.tx_mult,
            pair.fracture.ty_mult, pair.fracture.tz_mult,
            fvf.pressure, fvf.fvf,
            rp.sw, rp.krw, rp.kro, rp.pcow,
        )

        vol = grid.volumes()
        self.pv0 = np.concatenate([vol, vol]) * np.concatenate(
            [deck.props.poro * deck.props.ntg] * 2
        )
        self.depth2 = np.concatenate([grid.depth, grid.depth])
        self._pv_norm = np.repeat(self.pv0, 2)
        self._plan = None
        self._build_connections()
        self._build_wells()

    # ------------------------------------------------------------ static

    def _build_connections(self):
        grid = self.grid
        props = self.deck.props
        n = self.n
        nx, ny, nz = grid.nx, grid.ny, grid.nz
        ia, ja, dirc, gi, gj, dd = [], [], [], [], [], []

        def half(c, perm, spacing, area):
            return perm[c] * area[c] / (0.5 * spacing[c])

        area_x = grid.dy * grid.dz
        area_y = grid.dx * grid.dz
        area_z = grid.dx * grid.dy
        axes = (
            (0, 1, nx - 1, props.permx, grid.dx, area_x),
            (1, nx, ny - 1, props.permy, grid.dy, area_y),
            (2, nx * ny, nz - 1, props.permz, grid.dz, area_z),
        )
        for dcode, stride, limit, perm, spacing, area in axes:
            if limit <= 0:
                continue
            for k in range(nz):
                for j in range(ny):
                    for i in range(nx):
                        if (dcode == 0 and i >= limit) or \
                           (dcode == 1 and j >= limit) or \
                           (dcode == 2 and k >= limit):
                            continue
                        c = grid.cell_index(i, j, k)
                        nb = c + stride
                        for off in (0, n):
                            ia.append(c + off)
                            ja.append(nb + off)
                            dirc.append(dcode)
                            gi.append(half(c, perm, spacing, area))
                            gj.append(half(nb, perm, spacing, area))
                            dd.append(grid.depth[c] - grid.depth[nb])

        # matrix-fracture exchange: geometric-mean permeability times the
        # Kazemi shape factor; only the matrix-side multiplier applies
        kgm = (props.permx * props.permy * props.permz) ** (1.0 / 3.0)
        sigma = 4.0 * (1.0 / grid.dx**2 + 1.0 / grid.dy**2 + 1.0 / grid.dz**2)
        base = sigma * kgm * grid.volumes()
        for c in range(n):
            ia.append(c)
            ja.append(c + n)
            dirc.append(3)
            gi.append(base[c])
            gj.append(0.0)
            dd.append(0.0)

        self.conn_ia = np.array(ia, dtype=np.int64)
        self.conn_ja = np.array(ja, dtype=np.int64)
        self.conn_dir = np.array(dirc, dtype=np.int64)
        self.conn_gi = np.array(gi)
        self.conn_gj = np.array(gj)
        self.conn_dd = np.array(dd)

        nconn = len(ia)
        rows = np.empty(16 * nconn, dtype=np.int64)
        cols = np.empty(16 * nconn, dtype=np.int64)
        i2 = 2 * self.conn_ia
        j2 = 2 * self.conn_ja
        blocks = (
            (i2, (i2, i2 + 1, j2, j2 + 1)),
            (j2, (i2, i2 + 1, j2, j2 + 1)),
            (i2 + 1, (i2, i2 + 1, j2, j2 + 1)),
            (j2 + 1, (i2, i2 + 1, j2, j2 + 1)),
        )
        slot = 0
        for row_of, col_list in blocks:
            for col_of in col_list:
                rows[slot::16] = row_of
                cols[slot::16] = col_of
                slot += 1
        self.conn_rows = rows
        self.conn_cols = cols

        cells = np.arange(self.ncell)
        self.acc_rows = np.repeat(2 * cells, 4) + np.tile([0, 0, 1, 1], self.ncell)
        self.acc_cols = np.repeat(2 * cells, 4) + np.tile([0, 1, 0, 1], self.ncell)

    def _build_wells(self):
        grid = self.grid
        props = self.deck.props
        self.well_data = {}
        for spec in self.deck.wells:
            c = grid.cell_index(spec.i - 1, spec.j - 1, spec.k - 1)
            wi0 = peaceman_wi(
                grid.dx[c], grid.dy[c], grid.dz[c],
                props.permx[c], props.permy[c],
                spec.radius, spec.skin,
            )
            self.well_data[spec.name] = (np.array([c, c + self.n]), wi0)

    # --------------------------------------------------------- properties

    def _props(self, p, sw, p_peak):
        return kernels.cell_tables(
            p, sw, p_peak, self.n, *self.tab_args, self.numerics.hysteresis
        )

    def _water_props(self, p):
        fl = self.fluid
        invb = 1.0 + fl.c_water * (p - fl.p_ref)
        bw = 1.0 / invb
        dbw = -fl.c_water * bw * bw
        rhw = fl.rho_w0 * invb
        drhw = fl.rho_w0 * fl.c_water * np.ones_like(p)
        rho = fl.rho_o0 * (1.0 + fl.c_oil * (p - fl.p_ref))
        drho = fl.rho_o0 * fl.c_oil * np.ones_like(p)
        return bw, dbw, rhw, drhw, rho, drho

    def _accum(self, sw, props, bw, dbw):
        pv, dpv = props[0], props[1]
        bo, dbo = props[8], props[9]
        pvol = self.pv0 * pv
        aw = pvol * sw / bw
        ao = pvol * (1.0 - sw) / bo
        daw_dp = self.pv0 * sw * (dpv / bw - pv * dbw / bw**2)
        daw_ds = pvol / bw
        dao_dp = self.pv0 * (1.0 - sw) * (dpv / bo - pv * dbo / bo**2)
        dao_ds = -pvol / bo
        return aw, ao, daw_dp, daw_ds, dao_dp, dao_ds

    def accumulation_totals(self, state) -> tuple:
        """(total surface water, total surface oil) in place, m3."""
        props = self._props(state.p, state.sw, state.p_peak)
        bw = self._water_props(state.p)[0]
        aw, ao = self._accum(state.sw, props, bw, 0.0)[:2]
        return float(np.sum(aw)), float(np.sum(ao))

    # ------------------------------------------------------------- wells

    def _well_terms(self, aw: _ActiveWell, pwf, p, sw, props, wprops):
        """Surface-volume source INTO each completion cell and derivatives.

        Returns (cells, s_w, s_o, ds_dp, ds_dsw, ds_dpwf) where the
        derivative triples stack water then oil rows: shape (2, ncomp).
        """
        (_, _, psix, dpsix, psiy, dpsiy, _, _,
         bo, dbo, krw, dkrw, kro, dkro, _, _) = props
        bw, dbw = wprops[0], wprops[1]
        cells = aw.cells
        fl = self.fluid
        c = cells
        psi = np.sqrt(psix[c] * psiy[c])
        dpsi = (dpsix[c] * psiy[c] + psix[c] * dpsiy[c]) / (2.0 * psi)
        dp = pwf - p[c]
        ncomp = len(c)
        s = np.zeros((2, ncomp))
        ds_dp = np.zeros((2, ncomp))
        ds_dsw = np.zeros((2, ncomp))
        ds_dpwf = np.zeros((2, ncomp))
        if aw.spec.kind == "injector":
            mob = krw[c] / fl.mu_w + kro[c] / fl.mu_o
            g = aw.wi0 * psi * mob / bw[c]
            dg_dp = aw.wi0 * (dpsi * mob / bw[c] - psi * mob * dbw[c] / bw[c] ** 2)
            dg_ds = aw.wi0 * psi * (dkrw[c] / fl.mu_w + dkro[c] / fl.mu_o) / bw[c]
            s[0] = g * dp
            ds_dp[0] = dg_dp * dp - g
            ds_dsw[0] = dg_ds * dp
            ds_dpwf[0] = g
        else:
            gw = aw.wi0 * psi * krw[c] / (fl.mu_w * bw[c])
            dgw_dp = aw.wi0 * (
                dpsi * krw[c] / (fl.mu_w * bw[c])
                - psi * krw[c] * dbw[c] / (fl.mu_w * bw[c] ** 2)
            )
            dgw_ds = aw.wi0 * psi * dkrw[c] / (fl.mu_w * bw[c])
            go = aw.wi0 * psi * kro[c] / (fl.mu_o * bo[c])
            dgo_dp = aw.wi0 * (
                dpsi * kro[c] / (fl.mu_o * bo[c])
                - psi * kro[c] * dbo[c] / (fl.mu_o * bo[c] ** 2)
            )
            dgo_ds = aw.wi0 * psi * dkro[c] / (fl.mu_o * bo[c])
            s[0] = gw * dp
            ds_dp[0] = dgw_dp * dp - gw
            ds_dsw[0] = dgw_ds * dp
            ds_dpwf[0] = gw
            s[1] = go * dp
            ds_dp[1] = dgo_dp * dp - go
            ds_dsw[1] = dgo_ds * dp
            ds_dpwf[1] = go
        return c, s, ds_dp, ds_dsw, ds_dpwf

    # ---------------------------------------------------------- assembly

    def _csc_plan(self, active):
        """Cached CSC scatter plan for the current active well set."""
        key = tuple(
            (aw.spec.name, aw.unknown, tuple(aw.cells)) for aw in active
        )
        if self._plan is not None and self._plan.key == key:
            return self._plan
        m = 2 * self.ncell
        msize = m + len(active)
        rows = [self.conn_rows, self.acc_rows]
        cols = [self.conn_cols, self.acc_cols]
        well_slices = []
        offset = len(self.conn_rows) + len(self.acc_rows)
        for aw in active:
            q = aw.unknown
            wr, wc = [], []
            for c in aw.cells:
                for ph in (0, 1):
                    row = 2 * c + ph
                    wr += [row, row, row]
                    wc += [2 * c, 2 * c + 1, q]
            for c in aw.cells:
                wr += [q, q]
                wc += [2 * c, 2 * c + 1]
            wr.append(q)
            wc.append(q)
            rows.append(np.array(wr, dtype=np.int64))
            cols.append(np.array(wc, dtype=np.int64))
            well_slices.append(slice(offset, offset + len(wr)))
            offset += len(wr)
        self._plan = _CscPlan(
            key, msize, np.concatenate(rows), np.concatenate(cols), well_slices
        )
        return self._plan

    def assemble(self, a_old_w, a_old_o, p, sw, p_peak, pwf, active, dt):
        """Residual, sparse Jacobian and per-well source terms at the
        current Newton iterate."""
        fl = self.fluid
        props = self._props(p, sw, p_peak)
        wprops = self._water_props(p)
        bw, dbw, rhw, drhw, rho, drho = wprops
        (pv, dpv, psix, dpsix, psiy, dpsiy, psiz, dpsiz,
         bo, dbo, krw, dkrw, kro, dkro, pc, dpc) = props

        resw, reso, conn_vals = kernels.conn_assemble(
            self.conn_ia, self.conn_ja, self.conn_dir,
            self.conn_gi, self.conn_gj, self.conn_dd,
            p, sw,
            psix, dpsix, psiy, dpsiy, psiz, dpsiz,
            pc, dpc, krw, dkrw, kro, dkro,
            bw, dbw, bo, dbo,
            rhw, drhw, rho, drho,
            fl.mu_w, fl.mu_o, C_UNIT, G_MPA, dt,
        )
        aw_, ao_, daw_dp, daw_ds, dao_dp, dao_ds = self._accum(sw, props, bw, dbw)

        plan = self._csc_plan(active)
        m = 2 * self.ncell
        r = np.zeros(plan.msize)
        r[0:m:2] = aw_ - a_old_w + resw
        r[1:m:2] = ao_ - a_old_o + reso

        tri = np.empty(plan.total)
        nc = len(conn_vals)
        tri[:nc] = conn_vals
        tri[nc:nc + 4 * self.ncell] = np.column_stack(
            (daw_dp, daw_ds, dao_dp, dao_ds)
        ).ravel()

        well_sources = {}
        for aw, sl in zip(active, plan.well_slices):
            q = aw.unknown
            cells, s, ds_dp, ds_dsw, ds_dpwf = self._well_terms(
                aw, pwf[aw.spec.name], p, sw, props, wprops
            )
            well_sources[aw.spec.name] = s
            r[2 * cells] -= dt * s[0]
            r[2 * cells + 1] -= dt * s[1]
            ncomp = len(cells)
            wv = np.empty(8 * ncomp + 1)
            body = wv[:6 * ncomp].reshape(ncomp, 2, 3)
            body[:, 0, 0] = -dt * ds_dp[0]
            body[:, 0, 1] = -dt * ds_dsw[0]
            body[:, 0, 2] = -dt * ds_dpwf[0]
            body[:, 1, 0] = -dt * ds_dp[1]
            body[:, 1, 1] = -dt * ds_dsw[1]
            body[:, 1, 2] = -dt * ds_dpwf[1]
            ctl_row = wv[6 * ncomp:8 * ncomp].reshape(ncomp, 2)
            mode = aw.mode if not aw.pinned else "pin"
            if mode == "bhp":
                r[q] = pwf[aw.spec.name] - aw.ctl.target
                ctl_row[:] = 0.0
                wv[-1] = 1.0
            elif mode == "pin":
                r[q] = pwf[aw.spec.name] - aw.ctl.bhp_limit
                ctl_row[:] = 0.0
                wv[-1] = 1.0
            else:
                sign = 1.0 if aw.spec.kind == "injector" else -1.0
                if aw.mode == "rate":
                    r[q] = float(np.sum(s[0])) - aw.ctl.target
                    dsum_dp, dsum_ds, dsum_dq = ds_dp[0], ds_dsw[0], ds_dpwf[0]
                else:  # liquid rate
                    r[q] = sign * float(np.sum(s[0] + s[1])) - aw.ctl.target
                    dsum_dp = ds_dp[0] + ds_dp[1]
                    dsum_ds = ds_dsw[0] + ds_dsw[1]
                    dsum_dq = ds_dpwf[0] + ds_dpwf[1]
                ctl_row[:, 0] = sign * dsum_dp
                ctl_row[:, 1] = sign * dsum_ds
                wv[-1] = sign * float(np.sum(dsum_dq))
            tri[sl] = wv

        data = np.bincount(plan.tri_map, weights=tri, minlength=plan.nnz)
        jac = csc_matrix(
            (data, plan.indices, plan.indptr), shape=(plan.msize, plan.msize)
        )
        return r, jac, well_sources

    def residual_norm(self, r, active):
        m = 2 * self.ncell
        worst = float(np.max(np.abs(r[:m]) / self._pv_norm))
        for aw in active:
            rw = abs(r[aw.unknown])
            if aw.mode == "bhp" or aw.pinned:
                worst = max(worst, rw)
            else:
                worst = max(worst, rw / max(1.0, abs(aw.ctl.target)))
        return worst

    # ------------------------------------------------------------ newton

    def _check_switches(self, active, pwf, well_sources) -> bool:
        switched = False
        for aw in active:
            if aw.ctl.bhp_limit is None or aw.mode == "bhp":
                continue
            name = aw.spec.name
            s = well_sources[name]
            if aw.spec.kind == "injector":
                delivered = float(np.sum(s[0]))
                if not aw.pinned and pwf[name] > aw.ctl.bhp_limit + 1e-9:
                    aw.pinned = True
                    pwf[name] = aw.ctl.bhp_limit
                    switched = True
                elif aw.pinned and delivered > aw.ctl.target * (1.0 + _RATE_EPS):
                    aw.pinned = False
                    switched = True
            else:
                delivered = -float(np.sum(s[0] + s[1]))
                if not aw.pinned and pwf[name] < aw.ctl.bhp_limit - 1e-9:
                    aw.pinned = True
                    pwf[name] = aw.ctl.bhp_limit
                    switched = True
                elif aw.pinned and delivered > aw.ctl.target * (1.0 + _RATE_EPS):
                    aw.pinned = False
                    switched = True
        return switched

    def advance(self, state, active, pwf, dt, guess=None):
        """One implicit step of length dt from state; mutates pwf and the
        active wells' control state. Returns (new_state, info).

        guess optionally seeds the Newton iterate with (p, sw) arrays,
        e.g. the best iterate of a failed attempt at a longer step.
        """
        num = self.numerics
        props_old = self._props(state.p, state.sw, state.p_peak)
        bw_old = self._water_props(state.p)[0]
        a_old_w, a_old_o = self._accum(state.sw, props_old, bw_old, 0.0)[:2]

        p = (state.p if guess is None else guess[0]).copy()
        sw = (state.sw if guess is None else guess[1]).copy()
        m = 2 * self.ncell
        iterations = 0
        pending = None
        best_seen = None
        rn_hist = []
        for _ in range(num.max_newton + 1):
            if pending is None:
                r, jac, well_sources = self.assemble(
                    a_old_w, a_old_o, p, sw, state.p_peak, pwf, active, dt
                )
            else:
                r, jac, well_sources = pending
                pending = None
            if self._check_switches(active, pwf, well_sources):
                iterations += 1
                continue
            rn = self.residual_norm(r, active)
            if rn < num.newton_tol:
                rates = {name: s.sum(axis=1) for name, s in well_sources.items()}
                new_state = SimState(
                    p=p, sw=sw,
                    p_peak=np.maximum(state.p_peak, p),
                    time=state.time + dt,
                )
                return new_state, {"iterations": iterations, "rates": rates}
            if best_seen is None or rn < best_seen[0]:
                best_seen = (rn, p, sw)
            rn_hist.append(rn)
            # give up early when the residual has stopped contracting;
            # a shorter step is cheaper than grinding out the cap
            stalled = (
                len(rn_hist) >= 7
                and rn > 0.3 * rn_hist[-4]
                and rn > 1e4 * num.newton_tol
            )
            if iterations >= num.max_newton or stalled:
                raise _NotConverged(best_seen[1], best_seen[2])
            try:
                delta = splu(jac, permc_spec="MMD_AT_PLUS_A").solve(-r)
            except RuntimeError:
                raise _NotConverged(best_seen[1], best_seen[2]) from None
            if not np.all(np.isfinite(delta)):
                raise _NotConverged(best_seen[1], best_seen[2])
            # backtrack when the full update worsens the residual: near
            # the steep table segments the correction overshoots and the
            # damped step keeps the iterate inside the basin
            alpha = 1.0
            best = None
            for _trial in range(8):
                p_t = p + np.clip(alpha * delta[0:m:2], -num.max_dp, num.max_dp)
                sw_t = np.clip(
                    sw + np.clip(alpha * delta[1:m:2], -num.max_dsw, num.max_dsw),
                    0.0, 1.0,
                )
                pwf_t = dict(pwf)
                for aw in active:
                    dq = float(np.clip(
                        alpha * delta[aw.unknown], -num.max_dp, num.max_dp
                    ))
                    pwf_t[aw.spec.name] += dq
                trial = self.assemble(
                    a_old_w, a_old_o, p_t, sw_t, state.p_peak, pwf_t, active, dt
                )
                rn_t = self.residual_norm(trial[0], active)
                if best is None or rn_t < best[0]:
                    best = (rn_t, p_t, sw_t, pwf_t, trial)
                if rn_t <= rn * (1.0 - 1e-4 * alpha):
                    break
                alpha *= 0.5
            _, p, sw, pwf_t, pending = best
            pwf.clear()
            pwf.update(pwf_t)
            iterations += 1
        raise _NotConverged(p, sw)


# ------------------------------------------------------------------ report


def series_columns(deck) -> list:
    cols = ["time_days"]
    for w in deck.wells:
        base = w.name
        cols += [
            f"{base}_bhp_MPa", f"{base}_wir_m3d", f"{base}_lpr_m3d",
            f"{base}_opr_m3d", f"{base}_wpr_m3d", f"{base}_wct",
        ]
        if w.kind == "injector":
            cols += [f"{base}_dx_m", f"{base}_dy_m"]
    cols += ["field_avg_p_MPa", "field_p_coeff"]
    return cols


def fracture_extent(model: SimModel, state: SimState, well_name: str) -> tuple:
    """Connected fracture half-lengths (dx, dy) in metres around a well.

    A cell counts as open when its current fracture X (respectively Y)
    transmissibility multiplier exceeds open_threshold times the value
    at the table knee (second pressure node); the extent is the summed
    length of the contiguous open run through the well cell, zero if
    the well cell itself is closed.
    """
    deck = model.deck
    grid = model.grid
    spec = deck.well_by_name(well_name)
    ft = model.rock.fracture
    knee = ft.pressure[min(1, len(ft.pressure) - 1)]
    eta = model.numerics.hysteresis
    thr = model.numerics.open_threshold

    def mult_at(col, p, p_peak):
        val = _interp_clamped(ft.pressure, col, p)
        if eta > 0.0:
            peak = _interp_clamped(ft.pressure, col, p_peak)
            if peak > val:
                val += eta * (peak - val)
        return val

    i0 = spec.i - 1
    j0 = spec.j - 1
    k0 = spec.k - 1
    n = model.n

    def run_length(axis_cells, center_pos, col, base, sizes):
        open_flags = []
        for c in axis_cells:
            fc = c + n
            open_flags.append(
                mult_at(col, state.p[fc], state.p_peak[fc]) > thr * base
            )
        if not open_flags[center_pos]:
            return 0.0
        lo = center_pos
        while lo > 0 and open_flags[lo - 1]:
            lo -= 1
        hi = center_pos
        while hi < len(open_flags) - 1 and open_flags[hi + 1]:
            hi += 1
        return float(np.sum(sizes[lo:hi + 1]))

    base_tx = _interp_clamped(ft.pressure, ft.tx_mult, knee)
    base_ty = _interp_clamped(ft.pressure, ft.ty_mult, knee)
    row = [grid.cell_index(i, j0, k0) for i in range(grid.nx)]
    colm = [grid.cell_index(i0, j, k0) for j in range(grid.ny)]
    dx = run_length(row, i0, ft.tx_mult, base_tx, grid.dx[row])
    dy = run_length(colm, j0, ft.ty_mult, base_ty, grid.dy[colm])
    return dx, dy


def _report_row(model, deck, state, active_pwf, last_rates, t):
    row = [t]
    for w in deck.wells:
        cells = model.well_data[w.name][0]
        if w.name in active_pwf:
            bhp = active_pwf[w.name]
        else:
            bhp = float(np.mean(state.p[cells]))
        rates = last_rates.get(w.name)
        if rates is None:
            wir = lpr = opr = wpr = wct = 0.0
        else:
            s_w, s_o = rates
            if w.kind == "injector":
                wir = s_w
                lpr = opr = wpr = wct = 0.0
            else:
                wir = 0.0
                wpr = -s_w
                opr = -s_o
                lpr = wpr + opr
                wct = wpr / lpr if lpr > 0.0 else 0.0
        row += [bhp, wir, lpr, opr, wpr, wct]
        if w.kind == "injector":
            dx, dy = fracture_extent(model, state, w.name)
            row += [dx, dy]
    avg_p = float(np.sum(state.p * model.pv0) / np.sum(model.pv0))
    mean_depth = float(np.sum(model.depth2 * model.pv0) / np.sum(model.pv0))
    p_hydro = model.fluid.rho_w0 * GRAVITY * mean_depth * 1e-6
    row += [avg_p, avg_p / p_hydro]
    return row


def run(deck, max_wall_seconds=None, max_steps=None) -> SimResult:
    """Simulate the full schedule; returns series, summary and final state.

    Raises SolverFailure (with the partial result attached) if a step
    cannot be converged above the minimum timestep, or if the run
    exceeds the wall clock or accepted-step budget. The step budget is
    deterministic, so capped callers (the matcher) stay reproducible.
    """
    wall_start = time.perf_counter()
    model = SimModel(deck)
    num = deck.numerics
    state = init_state(deck)
    series = TimeSeries(series_columns(deck))

    a0w, a0o = model.accumulation_totals(state)
    cum = {"wi": 0.0, "wp": 0.0, "op": 0.0}
    totals = {"timesteps": 0, "newton_iterations": 0, "chops": 0}
    stage_stats = []
    last_rates = {}
    t = 0.0
    series.add_row(_report_row(model, deck, state, {}, {}, t))

    def build_summary(truncated=None):
        afw, afo = model.accumulation_totals(state)
        mb_w = abs(afw - a0w - cum["wi"] + cum["wp"]) / max(abs(a0w), 1.0)
        mb_o = abs(afo - a0o + cum["op"]) / max(abs(a0o), 1.0)
        return {
            "backend": kernels.BACKEND,
            "scheduled_days": deck.total_duration(),
            "reached_days": t,
            "timesteps": totals["timesteps"],
            "newton_iterations": totals["newton_iterations"],
            "chops": totals["chops"],
            "cumulative_m3": {
                "water_injected": cum["wi"],
                "water_produced": cum["wp"],
                "oil_produced": cum["op"],
            },
            "material_balance": {"water": mb_w, "oil": mb_o},
            "stages": stage_stats,
            "truncated": truncated,
            "wall_seconds": time.perf_counter() - wall_start,
        }

    unknown0 = 2 * model.ncell
    for stage in deck.stages:
        if stage.duration == 0.0:
            continue
        stage_start = t
        stage_end = stage_start + stage.duration
        active = []
        pwf = {}
        for spec in deck.wells:
            ctl = stage.control_for(spec.name)
            if ctl.mode == "shut":
                continue
            cells, wi0 = model.well_data[spec.name]
            aw = _ActiveWell(spec, ctl, cells, wi0, unknown0 + len(active))
            pwf[spec.name] = aw.initial_pwf(state.p[cells])
            active.append(aw)
        last_rates = {}
        st = {"name": stage.name, "steps": 0, "newton_iterations": 0, "chops": 0}

        n_reports = max(1, math.ceil(stage.duration / num.report_interval - _TIME_EPS))
        report_times = [
            min(stage_start + (k + 1) * num.report_interval, stage_end)
            for k in range(n_reports)
        ]
        report_times[-1] = stage_end

        dt = num.dt_init
        for rt in report_times:
            while t < rt - _TIME_EPS:
                dt_try = min(dt, rt - t)
                guess = None
                while True:
                    try:
                        new_state, info = model.advance(
                            state, active, pwf, dt_try, guess=guess
                        )
                        break
                    except _NotConverged as exc:
                        totals["chops"] += 1
                        st["chops"] += 1
                        dt_try *= num.dt_chop
                        if exc.p is not None:
                            # halving the step roughly halves the state
                            # change, so seed the retry halfway between
                            # the old state and the failed iterate
                            guess = (
                                state.p + 0.5 * (exc.p - state.p),
                                state.sw + 0.5 * (exc.sw - state.sw),
                            )
                        if dt_try < num.dt_min:
                            summary = build_summary(
                                truncated={
                                    "time_days": t,
                                    "reason": (
                                        f"timestep below dt_min={num.dt_min} in stage "
                                        f"{stage.name!r} at {t:.6g} days"
                                    ),
                                }
                            )
                            raise SolverFailure(
                                summary["truncated"]["reason"],
                                result=SimResult(series, summary, state),
                                time_days=t,
                            ) from None
                state = new_state
                t += dt_try
                if abs(rt - t) < _TIME_EPS * max(1.0, rt):
                    t = rt
                state.time = t
                totals["timesteps"] += 1
                totals["newton_iterations"] += info["iterations"]
                st["steps"] += 1
                st["newton_iterations"] += info["iterations"]
                last_rates = {}
                for aw in active:
                    s = info["rates"][aw.spec.name]
                    last_rates[aw.spec.name] = (float(s[0]), float(s[1]))
                    if aw.spec.kind == "injector":
                        cum["wi"] += dt_try * float(s[0])
                    else:
                        cum["wp"] += dt_try * -float(s[0])
                        cum["op"] += dt_try * -float(s[1])
                dt = min(dt_try * num.dt_grow, num.dt_max)
                if max_steps is not None and totals["timesteps"] >= max_steps:
                    summary = build_summary(
                        truncated={"time_days": t, "reason": "step budget exceeded"}
                    )
                    raise SolverFailure(
                        "step budget exceeded",
                        result=SimResult(series, summary, state),
                        time_days=t,
                    )
                if max_wall_seconds is not None and (
                    time.perf_counter() - wall_start > max_wall_seconds
                ):
                    summary = build_summary(
                        truncated={"time_days": t, "reason": "wall clock budget exceeded"}
                    )
                    raise SolverFailure(
                        "wall clock budget exceeded",
                        result=SimResult(series, summary, state),
                        time_days=t,
                    )
            series.add_row(_report_row(model, deck, state, pwf, last_rates, t))

    return SimResult(series, build_summary(), state)
