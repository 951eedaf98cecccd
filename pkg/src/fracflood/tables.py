"""Pressure-dependent property tables and state equations.

Rock multiplier tables map pressure to a pore-volume multiplier and three
directional transmissibility multipliers; the steep rise of the fracture
table above its knee pressure is what represents fracture opening. All
lookups are piecewise linear and clamp to the end rows outside the
tabulated range (extrapolation could produce negative multipliers under
extreme solver iterates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamsError, RepresentativeParams

ROCK_COLUMNS = ("pressure", "pv_mult", "tx_mult", "ty_mult", "tz_mult")


class TableError(ValueError):
    """A property table violates its structural requirements."""


def _interp_clamped(xs: np.ndarray, ys: np.ndarray, x: float) -> float:
    """Piecewise-linear lookup, clamped to the first/last node outside range."""
    return float(np.interp(x, xs, ys))


@dataclass(frozen=True)
class RockTable:
    """Rock stress-sensitivity table for one continuum.

    Columns: pressure (MPa), pore-volume multiplier, and X/Y/Z
    transmissibility multipliers. Construction only checks shape and
    positivity; use validate_monotone() for the strict-ordering check so
    that defective tables can still be represented and reported on.
    """

    pressure: np.ndarray
    pv_mult: np.ndarray
    tx_mult: np.ndarray
    ty_mult: np.ndarray
    tz_mult: np.ndarray

    def __post_init__(self):
        for name in ROCK_COLUMNS:
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1 or arr.shape != self.pressure.shape:
                raise TableError(f"rock table column {name} must match pressure column shape")
        if len(self.pressure) < 2:
            raise TableError("rock table needs at least 2 rows")
        for name in ROCK_COLUMNS[1:]:
            if not np.all(getattr(self, name) > 0.0):
                raise TableError(f"rock table column {name} must be positive")

    def __eq__(self, other):
        if not isinstance(other, RockTable):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ROCK_COLUMNS)

    @classmethod
    def from_rows(cls, rows) -> "RockTable":
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 5:
            raise TableError("rock table rows must be (pressure, pv, tx, ty, tz)")
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])

    def rows(self) -> np.ndarray:
        return np.column_stack([getattr(self, n) for n in ROCK_COLUMNS])


def interp_rock(table: RockTable, p: float) -> tuple[float, float, float, float]:
    """Multipliers (pv, tx, ty, tz) at pressure p, clamped at the table ends."""
    return tuple(
        _interp_clamped(table.pressure, getattr(table, n), p) for n in ROCK_COLUMNS[1:]
    )


def validate_monotone(table: RockTable) -> str | None:
    """Check the strict ordering of every column down the rows.

    Returns None when all columns (pressure included) strictly increase,
    otherwise a report naming the first violating column and 1-based row.
    """
    for name in ROCK_COLUMNS:
        col = getattr(table, name)
        bad = np.nonzero(np.diff(col) <= 0.0)[0]
        if bad.size:
            return f"column {name} not strictly increasing at row {bad[0] + 2}"
    return None


@dataclass(frozen=True)
class RockTablePair:
    """Matrix and fracture tables sharing the same characteristic pressures."""

    matrix: RockTable
    fracture: RockTable


@dataclass(frozen=True)
class FvfTable:
    """Oil formation volume factor vs pressure (dead-oil: non-increasing)."""

    pressure: np.ndarray
    fvf: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pressure", np.asarray(self.pressure, dtype=float))
        object.__setattr__(self, "fvf", np.asarray(self.fvf, dtype=float))
        if self.pressure.shape != self.fvf.shape or self.pressure.ndim != 1:
            raise TableError("fvf table columns must be 1-d and equal length")
        if len(self.pressure) < 2:
            raise TableError("fvf table needs at least 2 rows")
        if not np.all(np.diff(self.pressure) > 0.0):
            raise TableError("fvf table pressures must strictly increase")
        if not np.all(self.fvf > 0.0):
            raise TableError("fvf values must be positive")
        if np.any(np.diff(self.fvf) > 0.0):
            raise TableError("fvf must be non-increasing with pressure (dead oil)")

    def __eq__(self, other):
        if not isinstance(other, FvfTable):
            return NotImplemented
        return np.array_equal(self.pressure, other.pressure) and np.array_equal(self.fvf, other.fvf)

    def scaled(self, k: float) -> "FvfTable":
        return FvfTable(self.pressure.copy(), self.fvf * k)


def fvf_at(table: FvfTable, p: float) -> float:
    """Oil FVF at pressure p, piecewise linear, clamped at the ends."""
    return _interp_clamped(table.pressure, table.fvf, p)


def default_fvf_baseline(p_min: float, p_max: float) -> FvfTable:
    """Dead-oil default when a deck supplies no FVF curve: 1.15 -> 1.10."""
    return FvfTable(np.array([p_min, p_max]), np.array([1.15, 1.10]))


@dataclass(frozen=True)
class FluidSpec:
    """Oil/water densities, compressibilities and viscosities.

    rho in kg/m3 at p_ref, compressibilities in MPa^-1, viscosities in cP,
    p_ref in MPa.
    """

    rho_o0: float = 850.0
    rho_w0: float = 1000.0
    c_oil: float = 1.5e-3
    c_water: float = 5.0e-5
    mu_o: float = 5.0
    mu_w: float = 0.6
    p_ref: float = 20.0

    def __post_init__(self):
        for name in ("rho_o0", "rho_w0", "c_oil", "c_water", "mu_o", "mu_w", "p_ref"):
            if getattr(self, name) <= 0.0:
                raise TableError(f"fluid property {name} must be positive")


def liquid_density(spec: FluidSpec, phase: str, p: float) -> float:
    """Density rho0*(1 + C_l*(p - p_ref)) for phase 'oil' or 'water', kg/m3."""
    if phase == "oil":
        return spec.rho_o0 * (1.0 + spec.c_oil * (p - spec.p_ref))
    if phase == "water":
        return spec.rho_w0 * (1.0 + spec.c_water * (p - spec.p_ref))
    raise ValueError(f"unknown phase {phase!r}")


def water_fvf(spec: FluidSpec, p: float) -> float:
    """Water FVF 1/(1 + C_w*(p - p_ref)): reciprocal form keeps the
    surface-volume accounting consistent with the linear density law."""
    return 1.0 / (1.0 + spec.c_water * (p - spec.p_ref))


@dataclass(frozen=True)
class RockCompaction:
    """Linear porosity law phi0 + C_f*(p - p_ref).

    Exposed for testing only: the simulator folds rock compressibility into
    the pore-volume multiplier table so compressibility is never counted
    twice.
    """

    phi0: float
    c_f: float
    p_ref: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.phi0 < 1.0):
            raise TableError("phi0 must lie in (0, 1)")
        if self.c_f < 0.0:
            raise TableError("c_f must be non-negative")


def porosity_at(rc: RockCompaction, p: float) -> float:
    phi = rc.phi0 + rc.c_f * (p - rc.p_ref)
    if not (0.0 < phi < 1.0):
        raise TableError(f"porosity {phi} at p={p} outside (0, 1)")
    return phi


@dataclass(frozen=True)
class RelPermTable:
    """Water/oil relative permeability (and optional capillary pressure) vs sw."""

    sw: np.ndarray
    krw: np.ndarray
    kro: np.ndarray
    pcow: np.ndarray = field(default=None)  # MPa; zeros when absent

    def __post_init__(self):
        sw = np.asarray(self.sw, dtype=float)
        krw = np.asarray(self.krw, dtype=float)
        kro = np.asarray(self.kro, dtype=float)
        pcow = self.pcow
        pcow = np.zeros_like(sw) if pcow is None else np.asarray(pcow, dtype=float)
        for name, arr in (("sw", sw), ("krw", krw), ("kro", kro), ("pcow", pcow)):
            object.__setattr__(self, name, arr)
            if arr.shape != sw.shape:
                raise TableError(f"relperm column {name} shape mismatch")
        if len(sw) < 2:
            raise TableError("relperm table needs at least 2 rows")
        if not np.all(np.diff(sw) > 0.0) or sw[0] < 0.0 or sw[-1] > 1.0:
            raise TableError("sw must strictly increase within [0, 1]")
        for name, arr in (("krw", krw), ("kro", kro)):
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise TableError(f"{name} values must lie in [0, 1]")
        if np.any(np.diff(krw) < 0.0):
            raise TableError("krw must be non-decreasing")
        if np.any(np.diff(kro) > 0.0):
            raise TableError("kro must be non-increasing")
        if krw[0] != 0.0:
            raise TableError("krw at the lowest sw must be 0")
        if kro[-1] != 0.0:
            raise TableError("kro at the highest sw must be 0")

    def __eq__(self, other):
        if not isinstance(other, RelPermTable):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("sw", "krw", "kro", "pcow")
        )

    def has_pcow(self) -> bool:
        return bool(np.any(self.pcow != 0.0))


def relperm_at(table: RelPermTable, sw: float) -> tuple[float, float, float]:
    """(krw, kro, pcow) at sw, piecewise linear, clamped outside the range."""
    return (
        _interp_clamped(table.sw, table.krw, sw),
        _interp_clamped(table.sw, table.kro, sw),
        _interp_clamped(table.sw, table.pcow, sw),
    )


def tables_from_representative(
    theta: RepresentativeParams,
    p_min: float,
    p_max: float,
    fvf_baseline: FvfTable,
) -> tuple[RockTablePair, FvfTable, float]:
    """Generate the matrix/fracture table pair, the scaled FVF curve and the
    water compressibility from the 11 representative parameters.

    Both tables sit on the pressure nodes (p_min, p_b, p_max) and share
    their first two rows; only above the knee does the fracture table
    diverge, with the Y/Z columns scaled down by the anisotropy
    coefficient.
    """
    theta.validate(p_min, p_max)
    if not (p_min < theta.p_b < p_max):
        raise ParamsError(
            f"parameter p_b={theta.p_b} must lie strictly inside ({p_min}, {p_max})"
        )
    ps = np.array([p_min, theta.p_b, p_max])
    pv = np.array([
        theta.lambda_mmin,
        theta.lambda_mmin + theta.d_lambda1,
        theta.lambda_mmin + theta.d_lambda1 + theta.d_lambda2,
    ])
    psi = np.array([
        theta.psi_xmmin,
        theta.psi_xmmin + theta.d_psi_xm1,
        theta.psi_xmmin + theta.d_psi_xm1 + theta.d_psi_xm2,
    ])
    matrix = RockTable(ps, pv, psi.copy(), psi.copy(), psi.copy())

    tx_f = psi.copy()
    tx_f[2] = theta.psi_xfmax
    tyz_f = psi.copy()
    tyz_f[2] = theta.k_xy * theta.psi_xfmax
    fracture = RockTable(ps.copy(), pv.copy(), tx_f, tyz_f, tyz_f.copy())

    return RockTablePair(matrix, fracture), fvf_baseline.scaled(theta.k_vo), theta.c_w
