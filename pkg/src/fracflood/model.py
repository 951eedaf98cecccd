"""Dual-continuum reservoir description: grid, cell properties, wells,
staged schedule, numerical controls, and the initial simulation state.

The geometric grid holds N = nx*ny*nz cells; the flow model doubles it
into 2N cells where index c (0-based) is the matrix continuum and c + N
the co-located fracture continuum. Both continua start from identical
properties (equivalent-zone initialization); all divergence between them
during a run comes from the pressure-dependent multiplier tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# flow-rate constant for the {mD, m, MPa, cP, m3/d} unit system:
# 9.869233e-16 m2/mD * 1e6 Pa/MPa * 1e3 cP/(Pa*s) * 86400 s/d
C_UNIT = 0.08527
GRAVITY = 9.80665  # m/s2; rho*g*dz in Pa, scaled by 1e-6 to MPa


class ModelError(ValueError):
    """Inconsistent reservoir description."""


@dataclass(frozen=True)
class Grid:
    """Structured dual-continuum grid.

    dx/dy/dz/depth are per geometric cell (length N, natural ordering
    i + j*nx + k*nx*ny); depth is the cell-center depth in m, increasing
    downward.
    """

    nx: int
    ny: int
    nz: int
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ModelError("grid dimensions must be positive")
        n = self.n_geometric
        for name in ("dx", "dy", "dz", "depth"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != (n,):
                raise ModelError(f"grid field {name} must have {n} values")
        for name in ("dx", "dy", "dz"):
            if not np.all(getattr(self, name) > 0.0):
                raise ModelError(f"grid spacing {name} must be positive")

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (
            (self.nx, self.ny, self.nz) == (other.nx, other.ny, other.nz)
            and all(np.array_equal(getattr(self, f), getattr(other, f))
                    for f in ("dx", "dy", "dz", "depth"))
        )

    @property
    def n_geometric(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n_cells(self) -> int:
        """Total flow cells across both continua."""
        return 2 * self.n_geometric

    def cell_index(self, i: int, j: int, k: int) -> int:
        """0-based geometric index from 0-based (i, j, k)."""
        if not (0 <= i < self.nx and 0 <= j < self.ny and 0 <= k < self.nz):
            raise ModelError(f"cell ({i + 1}, {j + 1}, {k + 1}) outside grid")
        return i + j * self.nx + k * self.nx * self.ny

    def fracture_partner(self, cell: int) -> int:
        """Co-located cell in the other continuum."""
        n = self.n_geometric
        return cell + n if cell < n else cell - n

    def volumes(self) -> np.ndarray:
        return self.dx * self.dy * self.dz


def build_dual_grid(nx: int, ny: int, nz: int, spacing, depths) -> Grid:
    """Grid from per-axis spacing (scalars or per-cell) and depth spec.

    depths: scalar = center depth of the top layer, deeper layers stacked
    by dz; or an explicit per-cell array.
    """
    if min(nx, ny, nz) < 1:
        raise ModelError("grid dimensions must be positive")
    n = nx * ny * nz

    def expand(v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 0:
            return np.full(n, float(arr))
        if arr.shape == (n,):
            return arr.copy()
        raise ModelError(f"expected scalar or {n} values, got shape {arr.shape}")

    dx, dy, dz = (expand(s) for s in spacing)
    depths_arr = np.asarray(depths, dtype=float)
    if depths_arr.ndim == 0:
        depth = np.empty(n)
        top = float(depths_arr)
        layer_mid = top
        for k in range(nz):
            sl = slice(k * nx * ny, (k + 1) * nx * ny)
            layer_dz = dz[sl][0]
            if k > 0:
                prev_dz = dz[(k - 1) * nx * ny]
                layer_mid += 0.5 * (prev_dz + layer_dz)
            depth[sl] = layer_mid
    else:
        depth = expand(depths_arr)
    return Grid(nx, ny, nz, dx, dy, dz, depth)


@dataclass(frozen=True)
class CellProps:
    """Static per-geometric-cell rock properties, shared by both continua."""

    permx: np.ndarray
    permy: np.ndarray
    permz: np.ndarray
    poro: np.ndarray
    ntg: np.ndarray

    def __post_init__(self):
        shape = np.asarray(self.permx, dtype=float).shape
        for name in ("permx", "permy", "permz", "poro", "ntg"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != shape:
                raise ModelError("all property arrays must share one shape")
        for name in ("permx", "permy", "permz"):
            if not np.all(getattr(self, name) > 0.0):
                raise ModelError(f"{name} must be positive")
        if not np.all((self.poro > 0.0) & (self.poro < 1.0)):
            raise ModelError("porosity must lie in (0, 1)")
        if not np.all((self.ntg > 0.0) & (self.ntg <= 1.0)):
            raise ModelError("net-to-gross must lie in (0, 1]")

    def __eq__(self, other):
        if not isinstance(other, CellProps):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("permx", "permy", "permz", "poro", "ntg"))


@dataclass(frozen=True)
class WellSpec:
    """A vertical well completed in both continua of one geometric cell.

    (i, j, k) are 1-based grid coordinates as written in the deck.
    """

    name: str
    kind: str  # injector | producer
    i: int
    j: int
    k: int
    radius: float = 0.1
    skin: float = 0.0

    def __post_init__(self):
        if self.kind not in ("injector", "producer"):
            raise ModelError(f"well {self.name}: kind must be injector or producer")
        if self.radius <= 0.0:
            raise ModelError(f"well {self.name}: radius must be positive")
        if not self.name or any(ch.isspace() for ch in self.name):
            raise ModelError("well names must be non-empty without whitespace")


@dataclass(frozen=True)
class WellControl:
    """Per-stage operating target for one well.

    mode: 'rate' (injector water rate, m3/d, with optional bhp ceiling),
    'bhp' (target pressure, MPa), 'lrate' (producer liquid rate, m3/d,
    with optional bhp floor), or 'shut'.
    """

    mode: str
    target: float = 0.0
    bhp_limit: float = None

    def __post_init__(self):
        if self.mode not in ("rate", "bhp", "lrate", "shut"):
            raise ModelError(f"unknown well control mode {self.mode!r}")
        if self.mode in ("rate", "lrate") and self.target <= 0.0:
            raise ModelError("rate targets must be positive")
        if self.mode == "bhp" and self.target <= 0.0:
            raise ModelError("bhp targets must be positive")


@dataclass(frozen=True)
class Stage:
    """One schedule entry: a named duration with per-well controls."""

    name: str
    duration: float
    controls: dict  # well name -> WellControl

    def __post_init__(self):
        if self.duration < 0.0:
            raise ModelError(f"stage {self.name}: duration must be non-negative")

    def control_for(self, well: str) -> WellControl:
        return self.controls.get(well, WellControl("shut"))


@dataclass(frozen=True)
class NumericsConfig:
    """Newton and timestep controls.

    newton_tol bounds the largest pore-volume-normalized cell residual;
    open_threshold is the fracture-extent multiplier ratio; hysteresis is
    the retained fraction of peak transmissibility multipliers (0 = fully
    reversible tables).
    """

    newton_tol: float = 1e-8
    max_newton: int = 12
    dt_init: float = 0.2
    dt_min: float = 1e-6
    dt_max: float = 10.0
    dt_grow: float = 2.0
    dt_chop: float = 0.5
    report_interval: float = 5.0
    max_dp: float = 10.0
    max_dsw: float = 0.2
    open_threshold: float = 10.0
    hysteresis: float = 0.0

    def __post_init__(self):
        if self.newton_tol <= 0.0:
            raise ModelError("newton tolerance must be positive")
        if self.max_newton < 1:
            raise ModelError("need at least one Newton iteration")
        if not (0.0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ModelError("need dt_min <= dt_init <= dt_max, all positive")
        if self.dt_grow < 1.0 or not (0.0 < self.dt_chop < 1.0):
            raise ModelError("dt_grow must be >= 1 and dt_chop in (0, 1)")
        if self.report_interval <= 0.0:
            raise ModelError("report interval must be positive")
        if not (0.0 <= self.hysteresis <= 1.0):
            raise ModelError("hysteresis fraction must lie in [0, 1]")
        if self.open_threshold <= 0.0:
            raise ModelError("open threshold must be positive")


@dataclass
class SimState:
    """Dynamic per-flow-cell state (length 2N arrays).

    p_peak records the highest pressure each cell has reached, feeding
    the optional transmissibility hysteresis.
    """

    p: np.ndarray
    sw: np.ndarray
    p_peak: np.ndarray
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.p.copy(), self.sw.copy(), self.p_peak.copy(), self.time)


def peaceman_wi(dx: float, dy: float, dz: float, kx: float, ky: float,
                rw: float, skin: float = 0.0) -> float:
    """Well index of a vertical completion, m3/d per MPa per unit mobility."""
    ratio = ky / kx
    r_eq = (0.28 * math.sqrt(math.sqrt(ratio) * dx**2 + math.sqrt(1.0 / ratio) * dy**2)
            / (ratio**0.25 + (1.0 / ratio) ** 0.25))
    if r_eq <= rw:
        raise ModelError(f"equivalent radius {r_eq:.4g} m does not exceed rw={rw} m")
    return C_UNIT * 2.0 * math.pi * math.sqrt(kx * ky) * dz / (math.log(r_eq / rw) + skin)


def init_state(deck) -> SimState:
    """Initial state: uniform saturation, hydrostatic pressure profile.

    With uniform depth this is a uniform pressure field; otherwise
    p(D) = p_init + rho_avg*g*(D - datum), densities evaluated at the
    datum pressure with the initial saturation weighting. Matrix and
    fracture continua start identical.
    """
    grid = deck.grid
    fluid = deck.resolved_fluid()
    n = grid.n_geometric
    sw0 = deck.init_sw
    datum = deck.init_datum if deck.init_datum is not None else float(np.min(grid.depth))
    rho_w = fluid.rho_w0 * (1.0 + fluid.c_water * (deck.init_pressure - fluid.p_ref))
    rho_o = fluid.rho_o0 * (1.0 + fluid.c_oil * (deck.init_pressure - fluid.p_ref))
    rho_avg = sw0 * rho_w + (1.0 - sw0) * rho_o
    p_geo = deck.init_pressure + rho_avg * GRAVITY * (grid.depth - datum) * 1e-6
    p = np.concatenate([p_geo, p_geo])
    sw = np.full(2 * n, sw0)
    return SimState(p=p, sw=sw, p_peak=p.copy(), time=0.0)
