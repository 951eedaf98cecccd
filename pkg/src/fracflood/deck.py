"""Text deck format for the simulator: a sectioned key/value and table
grammar with '#' comments.

Sections (upper-case keyword alone on a line opens one):

  GRID      nx/ny/nz, dx/dy/dz and depth (scalar or one value per cell)
  PROPS     permx/permy/permz/poro/ntg (scalar or per cell)
  FLUID     rho_o rho_w c_oil c_water mu_o mu_w p_ref (all optional)
  ROCKTAB_MATRIX, ROCKTAB_FRACTURE
            rows: pressure pv_mult tx_mult ty_mult tz_mult
  REPRESENTATIVE
            the 11 scalar parameters plus p_min/p_max; alternative to
            the two explicit ROCKTAB sections
  FVF       rows: pressure fvf (optional; defaults applied if absent)
  RELPERM   rows: sw krw kro [pcow]
  WELLS     rows: name kind i j k [radius [skin]]
  SCHEDULE  'stage <name> <days>' lines, each followed by well controls:
            '<well> shut' | '<well> bhp <MPa>' |
            '<well> rate <m3/d> [bhp_limit <MPa>]' |
            '<well> lrate <m3/d> [bhp_limit <MPa>]'
  INIT      pressure, sw, optional datum
  NUMERICS  any NumericsConfig field (optional section)

parse_deck(write_deck(deck)) reproduces the deck exactly; errors carry
1-based line numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import (
    CellProps,
    Grid,
    ModelError,
    NumericsConfig,
    Stage,
    WellControl,
    WellSpec,
    build_dual_grid,
)
from .params import PARAM_NAMES, RepresentativeParams
from .tables import (
    FluidSpec,
    FvfTable,
    RelPermTable,
    RockTable,
    RockTablePair,
    default_fvf_baseline,
    tables_from_representative,
)

SECTIONS = (
    "GRID", "PROPS", "FLUID", "ROCKTAB_MATRIX", "ROCKTAB_FRACTURE",
    "REPRESENTATIVE", "FVF", "RELPERM", "WELLS", "SCHEDULE", "INIT",
    "NUMERICS",
)

_REQUIRED = ("GRID", "PROPS", "RELPERM", "WELLS", "SCHEDULE", "INIT")

_FLUID_KEYS = {
    "rho_o": "rho_o0", "rho_w": "rho_w0", "c_oil": "c_oil",
    "c_water": "c_water", "mu_o": "mu_o", "mu_w": "mu_w", "p_ref": "p_ref",
}

_NUMERICS_KEYS = (
    "newton_tol", "max_newton", "dt_init", "dt_min", "dt_max", "dt_grow",
    "dt_chop", "report_interval", "max_dp", "max_dsw", "open_threshold",
    "hysteresis",
)

_REP_KEYS = PARAM_NAMES + ("p_min", "p_max")


class DeckError(ValueError):
    """Malformed deck text or inconsistent deck contents."""


def _err(lineno: int, msg: str) -> DeckError:
    return DeckError(f"line {lineno}: {msg}")


@dataclass(frozen=True)
class Deck:
    """Complete parsed problem description.

    Rock behaviour comes either from an explicit table pair or from the
    11 representative parameters (exactly one of rock_pair /
    representative is set); resolved_*() materializes the effective
    tables either way.
    """

    grid: Grid
    props: CellProps
    fluid: FluidSpec
    relperm: RelPermTable
    wells: tuple
    stages: tuple
    init_pressure: float
    init_sw: float
    rock_pair: RockTablePair = None
    representative: RepresentativeParams = None
    rep_p_min: float = None
    rep_p_max: float = None
    fvf_baseline: FvfTable = None
    init_datum: float = None
    numerics: NumericsConfig = NumericsConfig()

    def __post_init__(self):
        object.__setattr__(self, "wells", tuple(self.wells))
        object.__setattr__(self, "stages", tuple(self.stages))
        if (self.rock_pair is None) == (self.representative is None):
            raise DeckError(
                "deck needs exactly one of explicit rock tables or representative parameters"
            )
        if self.representative is not None and (
            self.rep_p_min is None or self.rep_p_max is None
        ):
            raise DeckError("representative parameters require p_min and p_max")
        if not (0.0 <= self.init_sw <= 1.0):
            raise DeckError("initial water saturation must lie in [0, 1]")
        if self.init_pressure <= 0.0:
            raise DeckError("initial pressure must be positive")
        if self.props.permx.shape != (self.grid.n_geometric,):
            raise DeckError("property arrays do not match the grid size")
        names = [w.name for w in self.wells]
        if len(set(names)) != len(names):
            raise DeckError("duplicate well name")
        if not self.wells:
            raise DeckError("deck defines no wells")
        if not self.stages:
            raise DeckError("deck has no schedule stages")
        for w in self.wells:
            try:
                self.grid.cell_index(w.i - 1, w.j - 1, w.k - 1)
            except ModelError as exc:
                raise DeckError(f"well {w.name}: {exc}") from None
        known = set(names)
        for st in self.stages:
            for wname, ctl in st.controls.items():
                if wname not in known:
                    raise DeckError(f"stage {st.name!r} controls unknown well {wname!r}")
                self._check_control(wname, ctl)

    def _check_control(self, wname: str, ctl: WellControl) -> None:
        kind = next(w.kind for w in self.wells if w.name == wname)
        if ctl.mode == "rate" and kind != "injector":
            raise DeckError(f"well {wname}: water rate control requires an injector")
        if ctl.mode == "lrate" and kind != "producer":
            raise DeckError(f"well {wname}: liquid rate control requires a producer")

    def well_by_name(self, name: str) -> WellSpec:
        for w in self.wells:
            if w.name == name:
                return w
        raise DeckError(f"no well named {name!r}")

    def table_span(self) -> tuple:
        """(p_min, p_max) of the rock tables' pressure nodes."""
        if self.representative is not None:
            return (self.rep_p_min, self.rep_p_max)
        ps = self.rock_pair.matrix.pressure
        return (float(ps[0]), float(ps[-1]))

    def resolved_fvf_baseline(self) -> FvfTable:
        if self.fvf_baseline is not None:
            return self.fvf_baseline
        return default_fvf_baseline(*self.table_span())

    def resolved_rock(self) -> tuple:
        """(RockTablePair, effective FvfTable) with the representative
        parameters applied when present."""
        base = self.resolved_fvf_baseline()
        if self.representative is None:
            return self.rock_pair, base
        pair, fvf, _ = tables_from_representative(
            self.representative, self.rep_p_min, self.rep_p_max, base
        )
        return pair, fvf

    def resolved_fluid(self) -> FluidSpec:
        if self.representative is None:
            return self.fluid
        return replace(self.fluid, c_water=self.representative.c_w)

    def with_representative(self, theta: RepresentativeParams) -> "Deck":
        """Same problem with a different representative parameter vector."""
        if self.representative is None:
            raise DeckError("deck was built from explicit rock tables")
        return replace(self, representative=theta)

    def total_duration(self) -> float:
        return sum(st.duration for st in self.stages)


# ----------------------------------------------------------------- parsing


def _split_sections(text: str):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        first = tokens[0]
        if first in SECTIONS:
            if len(tokens) != 1:
                raise _err(lineno, f"section heading {first!r} takes no values")
            if first in sections:
                raise _err(lineno, f"duplicate section {first!r}")
            sections[first] = []
            current = first
            continue
        if len(tokens) == 1 and first.isupper():
            raise _err(lineno, f"unknown section {first!r}")
        if current is None:
            raise _err(lineno, f"content before any section heading: {line!r}")
        sections[current].append((lineno, tokens))
    return sections


def _float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise _err(lineno, f"expected a number, got {tok!r}") from None


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise _err(lineno, f"expected an integer, got {tok!r}") from None


def _kv_rows(rows, allowed, section):
    """Key -> (lineno, value tokens); one key per line, keys unique."""
    out = {}
    for lineno, tokens in rows:
        key = tokens[0]
        if key not in allowed:
            raise _err(lineno, f"unknown {section} key {key!r}")
        if key in out:
            raise _err(lineno, f"duplicate {section} key {key!r}")
        if len(tokens) < 2:
            raise _err(lineno, f"{section} key {key!r} has no value")
        out[key] = (lineno, tokens[1:])
    return out


def _scalar(kv, key, section, required=True, default=None, conv=_float):
    if key not in kv:
        if required:
            raise DeckError(f"{section} section is missing key {key!r}")
        return default
    lineno, vals = kv[key]
    if len(vals) != 1:
        raise _err(lineno, f"{section} key {key!r} takes a single value")
    return conv(vals[0], lineno)


def _vector(kv, key, n, section):
    if key not in kv:
        raise DeckError(f"{section} section is missing key {key!r}")
    lineno, vals = kv[key]
    if len(vals) not in (1, n):
        raise _err(lineno, f"{section} key {key!r} takes 1 or {n} values, got {len(vals)}")
    arr = np.array([_float(v, lineno) for v in vals])
    return np.full(n, arr[0]) if len(arr) == 1 else arr


def _parse_grid(rows):
    kv = _kv_rows(rows, ("nx", "ny", "nz", "dx", "dy", "dz", "depth"), "GRID")
    nx = _scalar(kv, "nx", "GRID", conv=_int)
    ny = _scalar(kv, "ny", "GRID", conv=_int)
    nz = _scalar(kv, "nz", "GRID", conv=_int)
    if min(nx, ny, nz) < 1:
        raise DeckError("GRID dimensions must be positive")
    n = nx * ny * nz
    dx = _vector(kv, "dx", n, "GRID")
    dy = _vector(kv, "dy", n, "GRID")
    dz = _vector(kv, "dz", n, "GRID")
    lineno, vals = kv["depth"] if "depth" in kv else (None, None)
    if vals is None:
        raise DeckError("GRID section is missing key 'depth'")
    if len(vals) == 1:
        depths = _float(vals[0], lineno)
    elif len(vals) == n:
        depths = np.array([_float(v, lineno) for v in vals])
    else:
        raise _err(lineno, f"GRID key 'depth' takes 1 or {n} values, got {len(vals)}")
    return build_dual_grid(nx, ny, nz, (dx, dy, dz), depths)


def _parse_props(rows, n):
    kv = _kv_rows(rows, ("permx", "permy", "permz", "poro", "ntg"), "PROPS")
    return CellProps(
        permx=_vector(kv, "permx", n, "PROPS"),
        permy=_vector(kv, "permy", n, "PROPS"),
        permz=_vector(kv, "permz", n, "PROPS"),
        poro=_vector(kv, "poro", n, "PROPS"),
        ntg=_vector(kv, "ntg", n, "PROPS"),
    )


def _parse_fluid(rows):
    kv = _kv_rows(rows, tuple(_FLUID_KEYS), "FLUID")
    kwargs = {}
    for deck_key, attr in _FLUID_KEYS.items():
        val = _scalar(kv, deck_key, "FLUID", required=False)
        if val is not None:
            kwargs[attr] = val
    return FluidSpec(**kwargs)


def _parse_table(rows, ncols, section):
    data = []
    for lineno, tokens in rows:
        if len(tokens) != ncols:
            raise _err(lineno, f"{section} rows take {ncols} values, got {len(tokens)}")
        data.append([_float(t, lineno) for t in tokens])
    if not data:
        raise DeckError(f"{section} section is empty")
    return np.array(data)


def _parse_rocktab(rows, section):
    data = _parse_table(rows, 5, section)
    return RockTable(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4])


def _parse_representative(rows):
    kv = _kv_rows(rows, _REP_KEYS, "REPRESENTATIVE")
    values = {k: _scalar(kv, k, "REPRESENTATIVE") for k in _REP_KEYS}
    p_min = values.pop("p_min")
    p_max = values.pop("p_max")
    return RepresentativeParams(**values), p_min, p_max


def _parse_relperm(rows):
    arities = {len(tokens) for _, tokens in rows}
    if arities - {3, 4}:
        bad = next((ln, t) for ln, t in rows if len(t) not in (3, 4))
        raise _err(bad[0], f"RELPERM rows take 3 or 4 values, got {len(bad[1])}")
    if arities == {3, 4}:
        lineno = rows[0][0]
        raise _err(lineno, "RELPERM rows must all have the same number of columns")
    ncols = arities.pop()
    data = _parse_table(rows, ncols, "RELPERM")
    pcow = data[:, 3] if ncols == 4 else None
    return RelPermTable(data[:, 0], data[:, 1], data[:, 2], pcow)


def _parse_wells(rows):
    wells = []
    seen = set()
    for lineno, tokens in rows:
        if len(tokens) not in (5, 6, 7):
            raise _err(lineno, f"WELLS rows take 5 to 7 values, got {len(tokens)}")
        name, kind = tokens[0], tokens[1]
        if name in seen:
            raise _err(lineno, f"duplicate well name {name!r}")
        seen.add(name)
        i = _int(tokens[2], lineno)
        j = _int(tokens[3], lineno)
        k = _int(tokens[4], lineno)
        radius = _float(tokens[5], lineno) if len(tokens) > 5 else 0.1
        skin = _float(tokens[6], lineno) if len(tokens) > 6 else 0.0
        try:
            wells.append(WellSpec(name, kind, i, j, k, radius, skin))
        except ModelError as exc:
            raise _err(lineno, str(exc)) from None
    return tuple(wells)


def _parse_schedule(rows):
    stages = []
    name = None
    duration = None
    controls = None
    stage_names = set()

    def close():
        if name is not None:
            stages.append(Stage(name, duration, dict(controls)))

    for lineno, tokens in rows:
        if tokens[0] == "stage":
            if len(tokens) != 3:
                raise _err(lineno, "stage lines read: stage <name> <days>")
            close()
            name = tokens[1]
            if name in stage_names:
                raise _err(lineno, f"duplicate stage name {name!r}")
            stage_names.add(name)
            duration = _float(tokens[2], lineno)
            controls = {}
            continue
        if name is None:
            raise _err(lineno, "well control before any stage line")
        well = tokens[0]
        if well in controls:
            raise _err(lineno, f"duplicate control for well {well!r} in stage {name!r}")
        mode = tokens[1] if len(tokens) > 1 else ""
        try:
            if mode == "shut":
                if len(tokens) != 2:
                    raise _err(lineno, "shut takes no values")
                controls[well] = WellControl("shut")
            elif mode == "bhp":
                if len(tokens) != 3:
                    raise _err(lineno, "bhp control reads: <well> bhp <MPa>")
                controls[well] = WellControl("bhp", _float(tokens[2], lineno))
            elif mode in ("rate", "lrate"):
                if len(tokens) == 3:
                    controls[well] = WellControl(mode, _float(tokens[2], lineno))
                elif len(tokens) == 5 and tokens[3] == "bhp_limit":
                    controls[well] = WellControl(
                        mode, _float(tokens[2], lineno), _float(tokens[4], lineno)
                    )
                else:
                    raise _err(
                        lineno,
                        f"{mode} control reads: <well> {mode} <m3/d> [bhp_limit <MPa>]",
                    )
            else:
                raise _err(lineno, f"unknown well control {mode!r}")
        except ModelError as exc:
            raise _err(lineno, str(exc)) from None
    close()
    return tuple(stages)


def _parse_init(rows):
    kv = _kv_rows(rows, ("pressure", "sw", "datum"), "INIT")
    return (
        _scalar(kv, "pressure", "INIT"),
        _scalar(kv, "sw", "INIT"),
        _scalar(kv, "datum", "INIT", required=False),
    )


def _parse_numerics(rows):
    kv = _kv_rows(rows, _NUMERICS_KEYS, "NUMERICS")
    kwargs = {}
    for key in _NUMERICS_KEYS:
        conv = _int if key == "max_newton" else _float
        val = _scalar(kv, key, "NUMERICS", required=False, conv=conv)
        if val is not None:
            kwargs[key] = val
    return NumericsConfig(**kwargs)


def parse_deck(text: str) -> Deck:
    """Parse deck text; raises DeckError with a line number for malformed
    input, or a plain message for missing/inconsistent sections."""
    sections = _split_sections(text)
    for name in _REQUIRED:
        if name not in sections:
            raise DeckError(f"deck has no {name.lower()} section")

    has_tables = "ROCKTAB_MATRIX" in sections or "ROCKTAB_FRACTURE" in sections
    has_rep = "REPRESENTATIVE" in sections
    if has_tables and has_rep:
        raise DeckError(
            "deck must use either the rocktab sections or the representative section, not both"
        )
    if "ROCKTAB_MATRIX" in sections and "ROCKTAB_FRACTURE" not in sections:
        raise DeckError("deck has no rocktab_fracture section")
    if "ROCKTAB_FRACTURE" in sections and "ROCKTAB_MATRIX" not in sections:
        raise DeckError("deck has no rocktab_matrix section")
    if not has_tables and not has_rep:
        raise DeckError(
            "deck has no rock description (rocktab_matrix/rocktab_fracture or representative section)"
        )

    grid = _parse_grid(sections["GRID"])
    props = _parse_props(sections["PROPS"], grid.n_geometric)
    fluid = _parse_fluid(sections.get("FLUID", []))
    relperm = _parse_relperm(sections["RELPERM"])
    wells = _parse_wells(sections["WELLS"])
    stages = _parse_schedule(sections["SCHEDULE"])
    if not stages:
        raise DeckError("deck has no schedule stages")
    pressure, sw, datum = _parse_init(sections["INIT"])
    numerics = _parse_numerics(sections.get("NUMERICS", []))

    rock_pair = None
    representative = None
    rep_p_min = rep_p_max = None
    if has_tables:
        rock_pair = RockTablePair(
            matrix=_parse_rocktab(sections["ROCKTAB_MATRIX"], "ROCKTAB_MATRIX"),
            fracture=_parse_rocktab(sections["ROCKTAB_FRACTURE"], "ROCKTAB_FRACTURE"),
        )
    else:
        representative, rep_p_min, rep_p_max = _parse_representative(
            sections["REPRESENTATIVE"]
        )

    fvf = None
    if "FVF" in sections:
        data = _parse_table(sections["FVF"], 2, "FVF")
        fvf = FvfTable(data[:, 0], data[:, 1])

    return Deck(
        grid=grid,
        props=props,
        fluid=fluid,
        relperm=relperm,
        wells=wells,
        stages=stages,
        init_pressure=pressure,
        init_sw=sw,
        rock_pair=rock_pair,
        representative=representative,
        rep_p_min=rep_p_min,
        rep_p_max=rep_p_max,
        fvf_baseline=fvf,
        init_datum=datum,
        numerics=numerics,
    )


def read_deck(path) -> Deck:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_deck(fh.read())


# ----------------------------------------------------------------- writing


def _fmt(x) -> str:
    return repr(float(x))


def _fmt_field(arr: np.ndarray) -> str:
    """Collapse a constant field to one value; lossless on reparse."""
    if np.all(arr == arr[0]):
        return _fmt(arr[0])
    return " ".join(_fmt(v) for v in arr)


def _write_rocktab(lines, name, table: RockTable):
    lines.append(name)
    for row in table.rows():
        lines.append("  " + " ".join(_fmt(v) for v in row))
    lines.append("")


def write_deck(deck: Deck) -> str:
    """Render a deck to canonical text; parse_deck inverts it exactly."""
    g = deck.grid
    lines = ["GRID"]
    lines.append(f"  nx {g.nx}")
    lines.append(f"  ny {g.ny}")
    lines.append(f"  nz {g.nz}")
    for fname in ("dx", "dy", "dz", "depth"):
        lines.append(f"  {fname} {_fmt_field(getattr(g, fname))}")
    lines.append("")

    lines.append("PROPS")
    for fname in ("permx", "permy", "permz", "poro", "ntg"):
        lines.append(f"  {fname} {_fmt_field(getattr(deck.props, fname))}")
    lines.append("")

    lines.append("FLUID")
    for deck_key, attr in _FLUID_KEYS.items():
        lines.append(f"  {deck_key} {_fmt(getattr(deck.fluid, attr))}")
    lines.append("")

    if deck.representative is not None:
        lines.append("REPRESENTATIVE")
        for key in PARAM_NAMES:
            lines.append(f"  {key} {_fmt(getattr(deck.representative, key))}")
        lines.append(f"  p_min {_fmt(deck.rep_p_min)}")
        lines.append(f"  p_max {_fmt(deck.rep_p_max)}")
        lines.append("")
    else:
        _write_rocktab(lines, "ROCKTAB_MATRIX", deck.rock_pair.matrix)
        _write_rocktab(lines, "ROCKTAB_FRACTURE", deck.rock_pair.fracture)

    if deck.fvf_baseline is not None:
        lines.append("FVF")
        for p, b in zip(deck.fvf_baseline.pressure, deck.fvf_baseline.fvf):
            lines.append(f"  {_fmt(p)} {_fmt(b)}")
        lines.append("")

    lines.append("RELPERM")
    rp = deck.relperm
    with_pc = rp.has_pcow()
    for idx in range(len(rp.sw)):
        row = [rp.sw[idx], rp.krw[idx], rp.kro[idx]]
        if with_pc:
            row.append(rp.pcow[idx])
        lines.append("  " + " ".join(_fmt(v) for v in row))
    lines.append("")

    lines.append("WELLS")
    for w in deck.wells:
        lines.append(
            f"  {w.name} {w.kind} {w.i} {w.j} {w.k} {_fmt(w.radius)} {_fmt(w.skin)}"
        )
    lines.append("")

    lines.append("SCHEDULE")
    for st in deck.stages:
        lines.append(f"  stage {st.name} {_fmt(st.duration)}")
        for wname, ctl in st.controls.items():
            if ctl.mode == "shut":
                lines.append(f"    {wname} shut")
            elif ctl.mode == "bhp":
                lines.append(f"    {wname} bhp {_fmt(ctl.target)}")
            else:
                extra = "" if ctl.bhp_limit is None else f" bhp_limit {_fmt(ctl.bhp_limit)}"
                lines.append(f"    {wname} {ctl.mode} {_fmt(ctl.target)}{extra}")
    lines.append("")

    lines.append("INIT")
    lines.append(f"  pressure {_fmt(deck.init_pressure)}")
    lines.append(f"  sw {_fmt(deck.init_sw)}")
    if deck.init_datum is not None:
        lines.append(f"  datum {_fmt(deck.init_datum)}")
    lines.append("")

    lines.append("NUMERICS")
    for key in _NUMERICS_KEYS:
        val = getattr(deck.numerics, key)
        txt = str(val) if key == "max_newton" else _fmt(val)
        lines.append(f"  {key} {txt}")
    lines.append("")
    return "\n".join(lines)


def save_deck(deck: Deck, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_deck(deck))
