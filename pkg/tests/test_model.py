import dataclasses
import math

import numpy as np
import pytest

from fracflood.deck import Deck, DeckError, parse_deck, read_deck, save_deck, write_deck
from fracflood.model import (
    CellProps,
    Grid,
    ModelError,
    NumericsConfig,
    Stage,
    WellControl,
    WellSpec,
    build_dual_grid,
    init_state,
    peaceman_wi,
)
from fracflood.params import PARAM_BOUNDS, PARAM_NAMES, RepresentativeParams
from fracflood.tables import (
    FluidSpec,
    FvfTable,
    RelPermTable,
    default_fvf_baseline,
    tables_from_representative,
)

BASE_DECK = """\
# tiny three by three test deck
GRID
  nx 3
  ny 3
  nz 1
  dx 10.0
  dy 10.0
  dz 5.0
  depth 1000.0

PROPS
  permx 10.0
  permy 10.0
  permz 1.0
  poro 0.2
  ntg 1.0

FLUID
  rho_o 850.0
  rho_w 1000.0
  c_oil 0.0015
  c_water 5e-05
  mu_o 5.0
  mu_w 0.6
  p_ref 20.0

REPRESENTATIVE
  c_w 5e-05
  k_vo 1.1
  p_b 26.0
  lambda_mmin 0.95
  d_lambda1 0.01
  d_lambda2 0.02
  psi_xmmin 0.95
  d_psi_xm1 0.02
  d_psi_xm2 0.02
  psi_xfmax 1000.0
  k_xy 0.5
  p_min 15.0
  p_max 47.0

RELPERM
  0.2 0.0 0.9
  0.45 0.2 0.35
  0.8 0.6 0.0

WELLS
  INJ injector 2 2 1 0.1 0.0
  PRD producer 3 3 1

SCHEDULE
  stage inject 5.0
    INJ rate 50.0 bhp_limit 45.0
    PRD shut
  stage produce 10.0
    INJ shut
    PRD bhp 12.0

INIT
  pressure 20.0
  sw 0.35
"""


def base_deck() -> Deck:
    return parse_deck(BASE_DECK)


def explicit_rock_deck() -> Deck:
    """Same grid but explicit tables, an FVF curve and capillary pressure."""
    d = base_deck()
    pair, fvf = d.resolved_rock()
    relperm = RelPermTable(
        sw=[0.2, 0.45, 0.8],
        krw=[0.0, 0.2, 0.6],
        kro=[0.9, 0.35, 0.0],
        pcow=[0.05, 0.02, 0.0],
    )
    return Deck(
        grid=d.grid,
        props=d.props,
        fluid=d.fluid,
        relperm=relperm,
        wells=d.wells,
        stages=d.stages,
        init_pressure=d.init_pressure,
        init_sw=d.init_sw,
        rock_pair=pair,
        fvf_baseline=FvfTable([15.0, 47.0], [1.15, 1.1]),
        init_datum=995.0,
        numerics=NumericsConfig(dt_init=0.5, max_newton=9),
    )


class TestGrid:
    def test_dual_counts(self):
        g = build_dual_grid(3, 3, 1, (10.0, 10.0, 5.0), 1000.0)
        assert g.n_geometric == 9
        assert g.n_cells == 18

    def test_fracture_pairing(self):
        g = build_dual_grid(3, 3, 1, (10.0, 10.0, 5.0), 1000.0)
        assert g.fracture_partner(4) == 13
        assert g.fracture_partner(13) == 4
        for c in range(g.n_geometric):
            assert g.fracture_partner(g.fracture_partner(c)) == c

    def test_natural_ordering(self):
        g = build_dual_grid(3, 4, 2, (10.0, 10.0, 5.0), 1000.0)
        assert g.cell_index(0, 0, 0) == 0
        assert g.cell_index(2, 1, 0) == 5
        assert g.cell_index(1, 2, 1) == 1 + 2 * 3 + 1 * 12

    def test_out_of_range_cell(self):
        g = build_dual_grid(3, 3, 1, (10.0, 10.0, 5.0), 1000.0)
        with pytest.raises(ModelError):
            g.cell_index(3, 0, 0)
        with pytest.raises(ModelError):
            g.cell_index(0, 0, -1)

    def test_layer_depth_stacking(self):
        g = build_dual_grid(2, 1, 3, (10.0, 10.0, 10.0), 1000.0)
        depth_by_layer = g.depth.reshape(3, 2)
        assert np.allclose(depth_by_layer[0], 1000.0)
        assert np.allclose(depth_by_layer[1], 1010.0)
        assert np.allclose(depth_by_layer[2], 1020.0)

    def test_explicit_depths(self):
        depths = np.linspace(1000.0, 1010.0, 4)
        g = build_dual_grid(2, 2, 1, (10.0, 10.0, 5.0), depths)
        assert np.array_equal(g.depth, depths)

    def test_volumes(self):
        g = build_dual_grid(2, 2, 1, (10.0, 20.0, 5.0), 1000.0)
        assert np.allclose(g.volumes(), 1000.0)

    def test_bad_spacing(self):
        with pytest.raises(ModelError):
            build_dual_grid(2, 2, 1, (10.0, -1.0, 5.0), 1000.0)
        with pytest.raises(ModelError):
            build_dual_grid(0, 2, 1, (10.0, 10.0, 5.0), 1000.0)

    def test_wrong_length_field(self):
        with pytest.raises(ModelError):
            build_dual_grid(2, 2, 1, ([10.0, 10.0, 10.0], 10.0, 5.0), 1000.0)


class TestCellProps:
    def test_validation(self):
        ones = np.ones(4)
        with pytest.raises(ModelError):
            CellProps(ones * 10, ones * 10, ones, ones * 1.2, ones)
        with pytest.raises(ModelError):
            CellProps(ones * 10, ones * -1, ones, ones * 0.2, ones)
        with pytest.raises(ModelError):
            CellProps(ones * 10, ones * 10, ones, ones * 0.2, ones * 1.5)


class TestPeaceman:
    def test_isotropic_oracle(self):
        # 10x10x5 m cell, 10 mD isotropic, rw = 0.1 m: frozen by hand from
        # r_eq = 0.14*sqrt(dx^2 + dy^2) and 2*pi*C*sqrt(kx*ky)*dz/ln(r_eq/rw)
        wi = peaceman_wi(10.0, 10.0, 5.0, 10.0, 10.0, 0.1)
        assert wi == pytest.approx(8.972428701301162, rel=1e-12)

    def test_isotropic_radius_reduction(self):
        ratio_form = (
            0.28
            * math.sqrt(math.sqrt(1.0) * 100.0 + math.sqrt(1.0) * 100.0)
            / (1.0 + 1.0)
        )
        assert ratio_form == pytest.approx(0.14 * math.sqrt(200.0), rel=1e-14)

    def test_anisotropic_oracle(self):
        wi = peaceman_wi(12.0, 8.0, 3.0, 25.0, 4.0, 0.1, skin=1.5)
        assert wi == pytest.approx(3.6312277758790756, rel=1e-12)

    def test_skin_monotone(self):
        wi0 = peaceman_wi(10.0, 10.0, 5.0, 10.0, 10.0, 0.1, skin=0.0)
        wi_pos = peaceman_wi(10.0, 10.0, 5.0, 10.0, 10.0, 0.1, skin=2.0)
        wi_neg = peaceman_wi(10.0, 10.0, 5.0, 10.0, 10.0, 0.1, skin=-1.0)
        assert wi_pos < wi0 < wi_neg

    def test_radius_exceeds_equivalent(self):
        with pytest.raises(ModelError):
            peaceman_wi(10.0, 10.0, 5.0, 10.0, 10.0, rw=2.5)


class TestInitState:
    def test_uniform(self):
        d = base_deck()
        st = init_state(d)
        assert st.p.shape == (18,)
        assert np.allclose(st.p, 20.0)
        assert np.allclose(st.sw, 0.35)
        assert np.array_equal(st.p_peak, st.p)
        assert st.time == 0.0

    def test_matrix_equals_fracture(self):
        d = base_deck()
        st = init_state(d)
        n = d.grid.n_geometric
        assert np.array_equal(st.p[:n], st.p[n:])
        assert np.array_equal(st.sw[:n], st.sw[n:])

    def test_hydrostatic_water_column(self):
        # two layers 10 m apart, water filled, rho_w(20 MPa) = 1000 kg/m3:
        # dp = rho*g*dz = 0.0980665 MPa
        text = BASE_DECK.replace("nz 1", "nz 2").replace("dz 5.0", "dz 10.0")
        text = text.replace("sw 0.35", "sw 1.0")
        d = parse_deck(text)
        st = init_state(d)
        n = d.grid.n_geometric
        top = st.p[:9]
        bottom = st.p[9:n]
        assert np.allclose(top, 20.0)
        assert np.allclose(bottom - top, 0.0980665, atol=1e-12)

    def test_saturation_weighted_density(self):
        text = BASE_DECK.replace("nz 1", "nz 2").replace("dz 5.0", "dz 10.0")
        text = text.replace("sw 0.35", "sw 0.5")
        d = parse_deck(text)
        st = init_state(d)
        dp = st.p[9] - st.p[0]
        assert dp == pytest.approx(0.5 * (1000.0 + 850.0) * 9.80665e-5, abs=1e-12)

    def test_datum_override(self):
        text = BASE_DECK.replace("  sw 0.35", "  sw 0.35\n  datum 1005.0")
        d = parse_deck(text)
        st = init_state(d)
        # cells sit 5 m above the datum, water-oil mixture at sw=0.35
        rho = 0.35 * 1000.0 + 0.65 * 850.0
        assert st.p[0] == pytest.approx(20.0 - rho * 9.80665 * 5.0 * 1e-6, abs=1e-12)


class TestParseHappyPath:
    def test_counts_and_values(self):
        d = base_deck()
        assert d.grid.nx == d.grid.ny == 3
        assert d.grid.n_cells == 18
        assert np.allclose(d.props.permz, 1.0)
        assert d.fluid.mu_w == 0.6
        assert d.representative.psi_xfmax == 1000.0
        assert d.rep_p_min == 15.0 and d.rep_p_max == 47.0
        assert d.rock_pair is None
        assert [w.name for w in d.wells] == ["INJ", "PRD"]
        assert d.wells[1].radius == 0.1 and d.wells[1].skin == 0.0
        assert [s.name for s in d.stages] == ["inject", "produce"]
        assert d.stages[0].duration == 5.0
        ctl = d.stages[0].controls["INJ"]
        assert ctl.mode == "rate" and ctl.target == 50.0 and ctl.bhp_limit == 45.0
        assert d.stages[1].controls["PRD"] == WellControl("bhp", 12.0)
        assert d.init_pressure == 20.0 and d.init_sw == 0.35
        assert d.numerics == NumericsConfig()
        assert d.total_duration() == 15.0

    def test_comments_and_blanks_ignored(self):
        noisy = BASE_DECK.replace("GRID", "# leading comment\n\nGRID  # trailing")
        assert parse_deck(noisy) == base_deck()

    def test_per_cell_property(self):
        vals = " ".join(str(float(i + 1)) for i in range(9))
        d = parse_deck(BASE_DECK.replace("permx 10.0", f"permx {vals}"))
        assert np.array_equal(d.props.permx, np.arange(1.0, 10.0))

    def test_control_defaults_to_shut(self):
        d = base_deck()
        assert d.stages[0].control_for("PRD").mode == "shut"
        assert d.stages[0].control_for("INJ").mode == "rate"


class TestParseErrors:
    def check(self, text, *needles):
        with pytest.raises(DeckError) as err:
            parse_deck(text)
        msg = str(err.value)
        for needle in needles:
            assert needle in msg, f"{needle!r} not in {msg!r}"

    def test_unknown_section_has_line(self):
        bad = BASE_DECK.replace("PROPS", "FOO")
        lineno = BASE_DECK.splitlines().index("PROPS") + 1
        self.check(bad, f"line {lineno}", "FOO")

    def test_unknown_key_has_line(self):
        bad = BASE_DECK.replace("  poro 0.2", "  porosity 0.2")
        lineno = BASE_DECK.splitlines().index("  poro 0.2") + 1
        self.check(bad, f"line {lineno}", "porosity")

    def test_duplicate_section(self):
        self.check(BASE_DECK + "\nGRID\n  nx 2\n", "duplicate section")

    def test_duplicate_key(self):
        self.check(BASE_DECK.replace("  nx 3", "  nx 3\n  nx 4"), "duplicate", "nx")

    def test_content_before_section(self):
        self.check("nx 3\n" + BASE_DECK, "line 1", "before any section")

    def test_missing_schedule_names_it(self):
        lines = BASE_DECK.splitlines()
        start = lines.index("SCHEDULE")
        trimmed = "\n".join(lines[:start] + lines[start + 7:])
        self.check(trimmed, "schedule")

    def test_missing_grid_names_it(self):
        lines = [
            ln for ln in BASE_DECK.splitlines()
            if ln not in ("GRID", "  nx 3", "  ny 3", "  nz 1", "  dx 10.0",
                          "  dy 10.0", "  dz 5.0", "  depth 1000.0")
        ]
        self.check("\n".join(lines), "grid")

    def test_rock_sections_exclusive(self):
        extra = "\nROCKTAB_MATRIX\n  15.0 0.95 0.95 0.95 0.95\n  47.0 0.98 1.0 1.0 1.0\n"
        extra += "ROCKTAB_FRACTURE\n  15.0 0.95 0.95 0.95 0.95\n  47.0 0.98 1.0 1.0 1.0\n"
        self.check(BASE_DECK + extra, "not both")

    def test_rock_description_required(self):
        lines = BASE_DECK.splitlines()
        start = lines.index("REPRESENTATIVE")
        trimmed = "\n".join(lines[:start] + lines[start + 14:])
        self.check(trimmed, "rock description")

    def test_lone_rocktab_matrix(self):
        lines = BASE_DECK.splitlines()
        start = lines.index("REPRESENTATIVE")
        head = "\n".join(lines[:start] + lines[start + 14:])
        head += "\nROCKTAB_MATRIX\n  15.0 0.95 0.95 0.95 0.95\n  47.0 0.98 1.0 1.0 1.0\n"
        self.check(head, "rocktab_fracture")

    def test_duplicate_well_name(self):
        bad = BASE_DECK.replace(
            "  PRD producer 3 3 1", "  PRD producer 3 3 1\n  PRD producer 1 1 1"
        )
        lineno = BASE_DECK.splitlines().index("  PRD producer 3 3 1") + 2
        self.check(bad, f"line {lineno}", "duplicate well name")

    def test_bad_number_has_line(self):
        bad = BASE_DECK.replace("  pressure 20.0", "  pressure twenty")
        lineno = BASE_DECK.splitlines().index("  pressure 20.0") + 1
        self.check(bad, f"line {lineno}", "twenty")

    def test_well_outside_grid(self):
        self.check(BASE_DECK.replace("PRD producer 3 3 1", "PRD producer 4 3 1"),
                   "outside grid")

    def test_stage_controls_unknown_well(self):
        self.check(BASE_DECK.replace("    PRD shut", "    GHOST shut"),
                   "unknown well", "GHOST")

    def test_rate_control_requires_injector(self):
        self.check(BASE_DECK.replace("    PRD bhp 12.0", "    PRD rate 5.0"),
                   "requires an injector")

    def test_lrate_control_requires_producer(self):
        self.check(
            BASE_DECK.replace("    INJ rate 50.0 bhp_limit 45.0", "    INJ lrate 50.0"),
            "requires a producer",
        )

    def test_control_before_stage(self):
        bad = BASE_DECK.replace(
            "SCHEDULE\n  stage inject 5.0", "SCHEDULE\n  INJ shut\n  stage inject 5.0"
        )
        self.check(bad, "before any stage")

    def test_wrong_props_arity(self):
        self.check(BASE_DECK.replace("  poro 0.2", "  poro 0.2 0.2 0.2"),
                   "1 or 9 values")

    def test_rocktab_row_arity(self):
        d = explicit_rock_deck()
        text = write_deck(d)
        bad = text.replace("ROCKTAB_MATRIX\n  15.0", "ROCKTAB_MATRIX\n  15.0 0.5\n  15.0")
        self.check(bad, "5 values")

    def test_unknown_control_mode(self):
        self.check(BASE_DECK.replace("PRD bhp 12.0", "PRD choke 12.0"), "choke")

    def test_missing_representative_key(self):
        self.check(BASE_DECK.replace("  k_xy 0.5\n", ""), "k_xy")

    def test_section_heading_with_values(self):
        self.check(BASE_DECK.replace("INIT", "INIT pressure"), "takes no values")


class TestRoundTrip:
    def test_representative_deck(self):
        d = base_deck()
        assert parse_deck(write_deck(d)) == d

    def test_explicit_rock_deck(self):
        d = explicit_rock_deck()
        assert parse_deck(write_deck(d)) == d

    def test_write_is_stable(self):
        d = base_deck()
        once = write_deck(d)
        assert write_deck(parse_deck(once)) == once

    def test_random_decks(self):
        rng = np.random.default_rng(20240311)
        for _ in range(25):
            d = self._random_deck(rng)
            assert parse_deck(write_deck(d)) == d

    @staticmethod
    def _random_deck(rng) -> Deck:
        nx = int(rng.integers(1, 4))
        ny = int(rng.integers(1, 4))
        nz = int(rng.integers(1, 3))
        n = nx * ny * nz
        grid = build_dual_grid(
            nx, ny, nz,
            (rng.uniform(5, 20, n), rng.uniform(5, 20, n), rng.uniform(2, 8, n)),
            rng.uniform(900, 1100, n),
        )
        props = CellProps(
            permx=rng.uniform(1, 50, n),
            permy=rng.uniform(1, 50, n),
            permz=rng.uniform(0.1, 5, n),
            poro=rng.uniform(0.05, 0.3, n),
            ntg=rng.uniform(0.5, 1.0, n),
        )
        values = {}
        for name in PARAM_NAMES:
            lo, hi = PARAM_BOUNDS[name]
            if lo is None:
                values[name] = rng.uniform(20.0, 40.0)
            else:
                values[name] = rng.uniform(lo, hi)
        theta = RepresentativeParams(**values)
        wells = (
            WellSpec("I1", "injector", 1, 1, 1, float(rng.uniform(0.05, 0.2)), 0.0),
            WellSpec("P1", "producer", nx, ny, nz),
        )
        stages = (
            Stage("s1", float(rng.uniform(1, 30)), {
                "I1": WellControl("rate", float(rng.uniform(10, 100)),
                                  float(rng.uniform(40, 50))),
                "P1": WellControl("shut"),
            }),
            Stage("s2", float(rng.uniform(1, 30)), {
                "I1": WellControl("shut"),
                "P1": WellControl("lrate", float(rng.uniform(5, 50)),
                                  float(rng.uniform(5, 10))),
            }),
        )
        return Deck(
            grid=grid,
            props=props,
            fluid=FluidSpec(p_ref=float(rng.uniform(15, 25))),
            relperm=RelPermTable([0.2, 0.8], [0.0, 0.7], [0.8, 0.0]),
            wells=wells,
            stages=stages,
            init_pressure=float(rng.uniform(15, 25)),
            init_sw=float(rng.uniform(0.2, 0.6)),
            representative=theta,
            rep_p_min=10.0,
            rep_p_max=50.0,
            numerics=NumericsConfig(dt_init=float(rng.uniform(0.1, 1.0))),
        )


class TestResolved:
    def test_resolved_rock_matches_generator(self):
        d = base_deck()
        pair, fvf = d.resolved_rock()
        want_pair, want_fvf, want_cw = tables_from_representative(
            d.representative, 15.0, 47.0, default_fvf_baseline(15.0, 47.0)
        )
        assert pair == want_pair
        assert fvf == want_fvf
        assert d.resolved_fluid().c_water == want_cw

    def test_fluid_c_water_override(self):
        text = BASE_DECK.replace("c_w 5e-05", "c_w 2e-05")
        d = parse_deck(text)
        assert d.fluid.c_water == 5e-05
        assert d.resolved_fluid().c_water == 2e-05

    def test_explicit_deck_keeps_fluid(self):
        d = explicit_rock_deck()
        assert d.resolved_fluid() == d.fluid
        pair, fvf = d.resolved_rock()
        assert pair == d.rock_pair
        assert fvf == d.fvf_baseline

    def test_table_span(self):
        assert base_deck().table_span() == (15.0, 47.0)
        assert explicit_rock_deck().table_span() == (15.0, 47.0)

    def test_with_representative(self):
        d = base_deck()
        theta2 = dataclasses.replace(d.representative, p_b=30.0)
        d2 = d.with_representative(theta2)
        assert d2.representative.p_b == 30.0
        assert d2.grid == d.grid
        with pytest.raises(DeckError):
            explicit_rock_deck().with_representative(d.representative)

    def test_default_fvf_baseline_span(self):
        d = base_deck()
        base = d.resolved_fvf_baseline()
        assert base == default_fvf_baseline(15.0, 47.0)


class TestDeckValidation:
    def test_requires_some_rock(self):
        d = base_deck()
        with pytest.raises(DeckError):
            Deck(
                grid=d.grid, props=d.props, fluid=d.fluid, relperm=d.relperm,
                wells=d.wells, stages=d.stages, init_pressure=20.0, init_sw=0.3,
            )

    def test_rejects_both_rock_sources(self):
        d = base_deck()
        pair, _ = d.resolved_rock()
        with pytest.raises(DeckError):
            Deck(
                grid=d.grid, props=d.props, fluid=d.fluid, relperm=d.relperm,
                wells=d.wells, stages=d.stages, init_pressure=20.0, init_sw=0.3,
                rock_pair=pair, representative=d.representative,
                rep_p_min=15.0, rep_p_max=47.0,
            )

    def test_save_and_read(self, tmp_path):
        d = base_deck()
        path = tmp_path / "deck.txt"
        save_deck(d, path)
        assert read_deck(path) == d
